//! Per-image agreement reports in JSON and as a plain-text table.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::protocol::{
    detect_outliers, overall_from_type_averages, pairwise_matrix, PairwiseMatrix,
    ProtocolThresholds, Verdict,
};
use super::AgreementError;
use crate::mask::{Annotation, LesionType};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub lesion: LesionType,
    pub kappa: f64,
    pub w_kappa: f64,
    pub dsc: f64,
    pub w_dsc: f64,
    pub degenerate: bool,
    /// Weighted kappa under the per-lesion "slight agreement" level.
    #[serde(default)]
    pub below_slight: bool,
    #[serde(default)]
    pub pairs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AverageRow {
    pub kappa: f64,
    pub w_kappa: f64,
    pub dsc: f64,
    pub w_dsc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub image_id: String,
    pub rows: Vec<ReportRow>,
    pub average: Option<AverageRow>,
    pub discarded_annotators: Vec<String>,
    pub verdict: Verdict,
    #[serde(default)]
    pub score: Option<f64>,
    #[serde(default)]
    pub notices: Vec<String>,
}

fn matrices(
    annotations: &[Annotation],
    notices: &mut Vec<String>,
) -> Result<Vec<PairwiseMatrix>, AgreementError> {
    let mut out = Vec::new();
    for lesion in LesionType::ALL {
        match pairwise_matrix(annotations, lesion) {
            Ok(m) => out.push(m),
            Err(AgreementError::TooFewAnnotations { found, .. }) => {
                if found > 0 {
                    notices.push(format!(
                        "{lesion}: {found} annotation, need at least 2; skipped"
                    ));
                }
            }
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// Runs the full protocol for one image: pairwise agreement per lesion type,
/// outlier removal, recomputation on the remaining annotations and the
/// image-level verdict.
pub fn report(
    image_id: &str,
    annotations: &[Annotation],
    thresholds: &ProtocolThresholds,
) -> Result<AgreementReport, AgreementError> {
    thresholds.validate()?;
    let mut notices = Vec::new();
    let initial = matrices(annotations, &mut notices)?;
    let discarded = detect_outliers(&initial, thresholds);

    let (final_matrices, remaining_notices) = if discarded.is_empty() {
        (initial, Vec::new())
    } else {
        let kept: Vec<Annotation> = annotations
            .iter()
            .filter(|a| !discarded.contains(&a.annotator_id))
            .cloned()
            .collect();
        let mut n = Vec::new();
        let m = matrices(&kept, &mut n)?;
        (m, n)
    };
    notices.extend(remaining_notices);

    let rows: Vec<ReportRow> = final_matrices
        .iter()
        .map(|m| {
            let avg = m.average();
            ReportRow {
                lesion: m.lesion,
                kappa: avg.kappa,
                w_kappa: avg.w_kappa,
                dsc: avg.dsc,
                w_dsc: avg.w_dsc,
                degenerate: avg.degenerate,
                below_slight: avg.w_kappa < thresholds.per_lesion_slight,
                pairs: m.pairs().count(),
            }
        })
        .collect();

    let average = (!rows.is_empty()).then(|| {
        let n = rows.len() as f64;
        AverageRow {
            kappa: rows.iter().map(|r| r.kappa).sum::<f64>() / n,
            w_kappa: rows.iter().map(|r| r.w_kappa).sum::<f64>() / n,
            dsc: rows.iter().map(|r| r.dsc).sum::<f64>() / n,
            w_dsc: rows.iter().map(|r| r.w_dsc).sum::<f64>() / n,
        }
    });
    let type_averages: Vec<f64> = rows.iter().map(|r| r.w_kappa).collect();
    let overall = overall_from_type_averages(&type_averages, thresholds);

    Ok(AgreementReport {
        image_id: image_id.to_string(),
        rows,
        average,
        discarded_annotators: discarded.into_iter().collect(),
        verdict: overall.verdict,
        score: overall.score,
        notices,
    })
}

impl AgreementReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Table in the column order Lesion, Cohen Kappa, W Cohen Kappa, DSC,
    /// Weighted DSC, followed by the average row and the decision.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "Inter-annotator agreement for image {}", self.image_id);
        let _ = writeln!(
            s,
            "{:<8} {:>12} {:>14} {:>8} {:>13}",
            "Lesion", "Cohen Kappa", "W Cohen Kappa", "DSC", "Weighted DSC"
        );
        for r in &self.rows {
            let flag = match (r.degenerate, r.below_slight) {
                (true, _) => "  (degenerate)",
                (false, true) => "  (below slight)",
                _ => "",
            };
            let _ = writeln!(
                s,
                "{:<8} {:>12.2} {:>14.2} {:>8.2} {:>13.2}{}",
                r.lesion, r.kappa, r.w_kappa, r.dsc, r.w_dsc, flag
            );
        }
        if let Some(a) = &self.average {
            let _ = writeln!(
                s,
                "{:<8} {:>12.2} {:>14.2} {:>8.2} {:>13.2}",
                "Average", a.kappa, a.w_kappa, a.dsc, a.w_dsc
            );
        }
        if !self.discarded_annotators.is_empty() {
            let _ = writeln!(s, "Discarded annotators: {}", self.discarded_annotators.join(", "));
        }
        for n in &self.notices {
            let _ = writeln!(s, "Note: {n}");
        }
        let _ = writeln!(s, "Verdict: {}", self.verdict.as_str());
        s
    }
}
