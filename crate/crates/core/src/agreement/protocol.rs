//! Three-step curation protocol: pairwise agreement per lesion type, removal
//! of outlier annotators, and the image-level keep/discard decision.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::metrics::{pair_metrics, PairMetrics};
use super::AgreementError;
use crate::mask::{Annotation, LesionType};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProtocolThresholds {
    /// Pairwise weighted kappa below this counts as disagreement.
    pub pairwise_low: f64,
    /// An annotator is discarded when more than this many co-annotators
    /// disagree with them. `None` means `⌈(n − 1) / 2⌉`.
    pub outlier_count: Option<usize>,
    /// Images whose overall weighted kappa falls below this are discarded.
    pub overall_discard: f64,
    /// Rows below this are flagged in reports; never gates a decision.
    pub per_lesion_slight: f64,
}

impl Default for ProtocolThresholds {
    fn default() -> Self {
        ProtocolThresholds {
            pairwise_low: 0.4,
            outlier_count: None,
            overall_discard: 0.4,
            per_lesion_slight: 0.2,
        }
    }
}

impl ProtocolThresholds {
    pub fn validate(&self) -> Result<(), AgreementError> {
        for (name, v) in [
            ("pairwise_low", self.pairwise_low),
            ("overall_discard", self.overall_discard),
            ("per_lesion_slight", self.per_lesion_slight),
        ] {
            if !(-1.0..=1.0).contains(&v) {
                return Err(AgreementError::InvalidThreshold(format!(
                    "{name} = {v} is outside [-1, 1]"
                )));
            }
        }
        if self.outlier_count == Some(0) {
            return Err(AgreementError::InvalidThreshold(
                "outlier_count must be at least 1".into(),
            ));
        }
        Ok(())
    }

    pub fn outlier_count_for(&self, annotators: usize) -> usize {
        self.outlier_count
            .unwrap_or_else(|| annotators.saturating_sub(1).div_ceil(2))
    }
}

/// Symmetric matrix of pair metrics between the annotators of one lesion type.
#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseMatrix {
    pub lesion: LesionType,
    /// Sorted annotator ids; indices below refer to this order.
    pub annotators: Vec<String>,
    entries: BTreeMap<(usize, usize), PairMetrics>,
}

impl PairwiseMatrix {
    pub fn get(&self, i: usize, j: usize) -> Option<&PairMetrics> {
        if i == j {
            return None;
        }
        self.entries.get(&(i.min(j), i.max(j)))
    }

    pub fn get_by_id(&self, a: &str, b: &str) -> Option<&PairMetrics> {
        let i = self.annotators.iter().position(|x| x == a)?;
        let j = self.annotators.iter().position(|x| x == b)?;
        self.get(i, j)
    }

    /// Upper-triangle entries in row-major order.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize, &PairMetrics)> {
        self.entries.iter().map(|(&(i, j), m)| (i, j, m))
    }

    /// Mean of each metric over the upper triangle.
    pub fn average(&self) -> PairMetrics {
        let n = self.entries.len() as f64;
        let mut acc = PairMetrics {
            kappa: 0.0,
            w_kappa: 0.0,
            dsc: 0.0,
            w_dsc: 0.0,
            degenerate: false,
        };
        for m in self.entries.values() {
            acc.kappa += m.kappa;
            acc.w_kappa += m.w_kappa;
            acc.dsc += m.dsc;
            acc.w_dsc += m.w_dsc;
            acc.degenerate |= m.degenerate;
        }
        acc.kappa /= n;
        acc.w_kappa /= n;
        acc.dsc /= n;
        acc.w_dsc /= n;
        acc
    }

    /// Mean weighted kappa over all pairs (protocol step 1).
    pub fn average_w_kappa(&self) -> f64 {
        self.average().w_kappa
    }
}

/// Pairwise metrics between all annotators of `lesion` among `annotations`;
/// annotations of other lesion types are ignored.
pub fn pairwise_matrix(
    annotations: &[Annotation],
    lesion: LesionType,
) -> Result<PairwiseMatrix, AgreementError> {
    let mut by_annotator: BTreeMap<&str, &Annotation> = BTreeMap::new();
    for a in annotations.iter().filter(|a| a.lesion() == lesion) {
        if by_annotator.insert(a.annotator_id.as_str(), a).is_some() {
            return Err(AgreementError::DuplicateAnnotation {
                annotator: a.annotator_id.clone(),
                lesion,
            });
        }
    }
    if by_annotator.len() < 2 {
        return Err(AgreementError::TooFewAnnotations {
            lesion,
            found: by_annotator.len(),
        });
    }
    let annotators: Vec<String> = by_annotator.keys().map(|s| s.to_string()).collect();
    let list: Vec<&Annotation> = by_annotator.into_values().collect();
    let mut entries = BTreeMap::new();
    for i in 0..list.len() {
        for j in i + 1..list.len() {
            entries.insert((i, j), pair_metrics(list[i], list[j])?);
        }
    }
    Ok(PairwiseMatrix {
        lesion,
        annotators,
        entries,
    })
}

/// Annotators that disagree with too many peers (protocol step 2).
///
/// For each pair the weighted kappa is averaged over the lesion types both
/// annotated. An annotator is discarded when the number of co-annotators
/// with mean kappa below `pairwise_low` exceeds the outlier count. At most
/// `n − 2` annotators are removed; the worst are removed first.
pub fn detect_outliers(
    matrices: &[PairwiseMatrix],
    thresholds: &ProtocolThresholds,
) -> BTreeSet<String> {
    let ids: BTreeSet<&str> = matrices
        .iter()
        .flat_map(|m| m.annotators.iter().map(String::as_str))
        .collect();
    let ids: Vec<&str> = ids.into_iter().collect();
    let n = ids.len();
    if n <= 2 {
        return BTreeSet::new();
    }

    let mut pair_sum: BTreeMap<(&str, &str), (f64, usize)> = BTreeMap::new();
    for m in matrices {
        for (i, j, metrics) in m.pairs() {
            let (a, b) = (m.annotators[i].as_str(), m.annotators[j].as_str());
            let key = if a < b { (a, b) } else { (b, a) };
            let e = pair_sum.entry(key).or_insert((0.0, 0));
            e.0 += metrics.w_kappa;
            e.1 += 1;
        }
    }

    let limit = thresholds.outlier_count_for(n);
    // (low count, mean kappa with peers, id)
    let mut candidates: Vec<(usize, f64, &str)> = Vec::new();
    for &id in &ids {
        let mut low = 0;
        let mut total = 0.0;
        let mut seen = 0usize;
        for (&(a, b), &(sum, k)) in &pair_sum {
            if a != id && b != id {
                continue;
            }
            let mean = sum / k as f64;
            total += mean;
            seen += 1;
            if mean < thresholds.pairwise_low {
                low += 1;
            }
        }
        if low > limit {
            let mean_with_peers = if seen > 0 { total / seen as f64 } else { 0.0 };
            candidates.push((low, mean_with_peers, id));
        }
    }
    candidates.sort_by(|x, y| {
        y.0.cmp(&x.0)
            .then(x.1.total_cmp(&y.1))
            .then(x.2.cmp(y.2))
    });
    candidates
        .into_iter()
        .take(n - 2)
        .map(|(_, _, id)| id.to_string())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Keep,
    Discard,
    /// Fewer than two annotations for every lesion type.
    Insufficient,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Keep => "keep",
            Verdict::Discard => "discard",
            Verdict::Insufficient => "insufficient",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverallAgreement {
    pub score: Option<f64>,
    pub verdict: Verdict,
}

/// Image-level decision from per-lesion-type average weighted kappas.
pub fn overall_from_type_averages(
    averages: &[f64],
    thresholds: &ProtocolThresholds,
) -> OverallAgreement {
    if averages.is_empty() {
        return OverallAgreement {
            score: None,
            verdict: Verdict::Insufficient,
        };
    }
    let score = averages.iter().sum::<f64>() / averages.len() as f64;
    let verdict = if score < thresholds.overall_discard {
        Verdict::Discard
    } else {
        Verdict::Keep
    };
    OverallAgreement {
        score: Some(score),
        verdict,
    }
}

/// Protocol step 3 on the annotations that survived outlier removal.
pub fn overall_agreement(
    annotations: &[Annotation],
    thresholds: &ProtocolThresholds,
) -> Result<OverallAgreement, AgreementError> {
    let mut averages = Vec::new();
    for lesion in LesionType::ALL {
        match pairwise_matrix(annotations, lesion) {
            Ok(m) => averages.push(m.average_w_kappa()),
            Err(AgreementError::TooFewAnnotations { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(overall_from_type_averages(&averages, thresholds))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::{LesionMask, Mask};

    fn ann(id: &str, lesion: LesionType, grid: Mask, conf: f64, exp: f64) -> Annotation {
        Annotation::new(id, "img", LesionMask { lesion, grid }, conf, exp).unwrap()
    }

    fn block(x0: u32, y0: u32, w: u32, h: u32) -> Mask {
        Mask::from_fn(32, 32, move |x, y| x >= x0 && x < x0 + w && y >= y0 && y < y0 + h)
    }

    #[test]
    fn two_annotators_single_pair() {
        let a = ann("a", LesionType::EX, block(2, 2, 10, 10), 1.0, 1.0);
        let b = ann("b", LesionType::EX, block(4, 4, 10, 10), 1.0, 1.0);
        let m = pairwise_matrix(&[a.clone(), b.clone()], LesionType::EX).unwrap();
        let direct = pair_metrics(&a, &b).unwrap();
        assert_eq!(m.average_w_kappa(), direct.w_kappa);
        assert_eq!(m.get(1, 0), m.get(0, 1));
        assert!(m.get(0, 0).is_none());
    }

    #[test]
    fn identical_triplet() {
        let anns: Vec<_> = ["a", "b", "c"]
            .iter()
            .map(|id| ann(id, LesionType::HA, block(5, 5, 8, 8), 1.0, 1.0))
            .collect();
        let m = pairwise_matrix(&anns, LesionType::HA).unwrap();
        assert!(m.pairs().all(|(_, _, p)| p.w_kappa == 1.0));
        assert_eq!(m.average_w_kappa(), 1.0);
    }

    #[test]
    fn disjoint_third_annotator_ranks_lowest() {
        let anns = vec![
            ann("a", LesionType::MA, block(2, 2, 8, 8), 1.0, 1.0),
            ann("b", LesionType::MA, block(2, 2, 8, 8), 1.0, 1.0),
            ann("c", LesionType::MA, block(20, 20, 8, 8), 1.0, 1.0),
        ];
        let m = pairwise_matrix(&anns, LesionType::MA).unwrap();
        let ab = m.get_by_id("a", "b").unwrap().w_kappa;
        assert!(m.get_by_id("a", "c").unwrap().w_kappa < ab);
        assert!(m.get_by_id("b", "c").unwrap().w_kappa < ab);
    }

    #[test]
    fn too_few_and_duplicates() {
        let a = ann("a", LesionType::EX, block(2, 2, 8, 8), 1.0, 1.0);
        assert!(matches!(
            pairwise_matrix(std::slice::from_ref(&a), LesionType::EX),
            Err(AgreementError::TooFewAnnotations { found: 1, .. })
        ));
        assert!(matches!(
            pairwise_matrix(&[a.clone(), a], LesionType::EX),
            Err(AgreementError::DuplicateAnnotation { .. })
        ));
    }

    #[test]
    fn outlier_rules() {
        let good = ProtocolThresholds::default();
        let agreeing: Vec<_> = ["a", "b", "c"]
            .iter()
            .map(|id| ann(id, LesionType::EX, block(4, 4, 10, 10), 1.0, 1.0))
            .collect();
        let m = pairwise_matrix(&agreeing, LesionType::EX).unwrap();
        assert!(detect_outliers(&[m], &good).is_empty());

        let mixed = vec![
            ann("a", LesionType::EX, block(4, 4, 10, 10), 1.0, 1.0),
            ann("b", LesionType::EX, block(5, 4, 10, 10), 1.0, 1.0),
            ann("c", LesionType::EX, block(20, 20, 10, 10), 1.0, 1.0),
        ];
        let m = pairwise_matrix(&mixed, LesionType::EX).unwrap();
        let t = ProtocolThresholds {
            outlier_count: Some(1),
            ..Default::default()
        };
        let out = detect_outliers(&[m], &t);
        assert_eq!(out.into_iter().collect::<Vec<_>>(), vec!["c".to_string()]);

        let pair = vec![
            ann("a", LesionType::EX, block(0, 0, 5, 5), 1.0, 1.0),
            ann("b", LesionType::EX, block(20, 20, 5, 5), 1.0, 1.0),
        ];
        let m = pairwise_matrix(&pair, LesionType::EX).unwrap();
        assert!(detect_outliers(&[m], &t).is_empty());
    }

    #[test]
    fn default_outlier_count() {
        let t = ProtocolThresholds::default();
        assert_eq!(t.outlier_count_for(2), 1);
        assert_eq!(t.outlier_count_for(3), 1);
        assert_eq!(t.outlier_count_for(4), 2);
        assert_eq!(t.outlier_count_for(5), 2);
    }

    #[test]
    fn threshold_validation() {
        assert!(ProtocolThresholds::default().validate().is_ok());
        let bad = ProtocolThresholds {
            overall_discard: 1.5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = ProtocolThresholds {
            outlier_count: Some(0),
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn published_table_averages() {
        // weighted-kappa column of the similar-annotation example: EX .49, HA .19, MA .41, SE .44
        let similar = [0.49, 0.19, 0.41, 0.44];
        let at_04 = overall_from_type_averages(&similar, &ProtocolThresholds::default());
        assert_eq!(at_04.verdict, Verdict::Discard);
        let lenient = ProtocolThresholds {
            overall_discard: 0.3,
            ..Default::default()
        };
        assert_eq!(overall_from_type_averages(&similar, &lenient).verdict, Verdict::Keep);

        // the differing-annotation example: EX .00, HA .26, MA .00, SE .31
        let differing = [0.0, 0.26, 0.0, 0.31];
        let r = overall_from_type_averages(&differing, &ProtocolThresholds::default());
        assert!((r.score.unwrap() - 0.1425).abs() < 1e-12);
        assert_eq!(r.verdict, Verdict::Discard);

        assert_eq!(
            overall_from_type_averages(&[], &ProtocolThresholds::default()).verdict,
            Verdict::Insufficient
        );
    }

    #[test]
    fn overall_identical_keeps() {
        let anns: Vec<_> = ["a", "b"]
            .iter()
            .map(|id| ann(id, LesionType::SE, block(3, 3, 6, 6), 1.0, 1.0))
            .collect();
        let r = overall_agreement(&anns, &ProtocolThresholds::default()).unwrap();
        assert_eq!(r.score, Some(1.0));
        assert_eq!(r.verdict, Verdict::Keep);
        let r = overall_agreement(&anns[..1], &ProtocolThresholds::default()).unwrap();
        assert_eq!(r.verdict, Verdict::Insufficient);
    }
}
