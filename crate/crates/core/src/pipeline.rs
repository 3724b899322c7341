//! Batch stages over a dataset manifest. Each stage reads its inputs from
//! files and writes its artifacts under `<out>/<stage>/`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agreement::{report, AgreementError, AgreementReport, ProtocolThresholds, Verdict};
use crate::classifier::{
    default_forest_grid, default_logistic_grid, evaluate, explain_shapley, grid_search,
    read_features_csv, render_explanations, split_dataset, write_features_csv, ClassifierError,
    ClassifierModel, EvalReport, FeatureRow, FeatureTable, ModelKind, ModelSpec,
};
use crate::config::CuratorConfig;
use crate::enhance::{enhance, EnhanceError, EnhancementParams};
use crate::features::{extract_features, ingest_vlm_scores, FeatureConfig, FeatureReport, FEATURE_NAMES};
use crate::io::{self, IoError};
use crate::manifest::{DatasetManifest, ManifestError, QualityLabel};
use crate::postprocess::{postprocess, PostprocessError, PostprocessParams};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Enhance(#[from] EnhanceError),
    #[error(transparent)]
    Postprocess(#[from] PostprocessError),
    #[error(transparent)]
    Agreement(#[from] AgreementError),
    #[error("missing predictions: no manifest entry lists prediction masks")]
    MissingPredictions,
    #[error("missing {what}: {path}")]
    MissingArtifact { what: &'static str, path: PathBuf },
    #[error("no labeled rows in {0}")]
    NoLabels(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Skipped {
    pub image_id: String,
    pub reason: String,
}

/// Images handled by a stage; any skip makes the process exit with 2.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageReport {
    pub processed: Vec<String>,
    pub skipped: Vec<Skipped>,
}

impl StageReport {
    pub fn exit_code(&self) -> i32 {
        if self.skipped.is_empty() {
            0
        } else {
            2
        }
    }

    fn collect(results: Vec<(String, Result<(), String>)>) -> Self {
        let mut r = StageReport::default();
        for (id, res) in results {
            match res {
                Ok(()) => r.processed.push(id),
                Err(reason) => {
                    warn!("{id}: {reason}");
                    r.skipped.push(Skipped { image_id: id, reason });
                }
            }
        }
        r
    }
}

/// File-name-safe form of an image id.
pub fn file_stem(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || "._-".contains(c) { c } else { '_' })
        .collect()
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    io::write_atomic(path, text.as_bytes())
}

fn stage_dir(out: &Path, stage: &str) -> PathBuf {
    out.join(stage)
}

pub fn features_csv_path(out: &Path) -> PathBuf {
    stage_dir(out, "features").join("features.csv")
}

pub fn model_path(out: &Path) -> PathBuf {
    stage_dir(out, "train").join("model.json")
}

pub fn enhanced_path(out: &Path, id: &str) -> PathBuf {
    stage_dir(out, "enhance").join(format!("{}.enhanced.png", file_stem(id)))
}

/// Feature rows for every image, ordered by id. VLM columns are included
/// only when every processed image has scores.
pub fn cmd_features(ds: &DatasetManifest, out: &Path, cfg: &FeatureConfig) -> Result<StageReport, PipelineError> {
    let entries = ds.sorted_entries();
    let mut sidecars = BTreeMap::new();
    for e in &entries {
        if let Some(rel) = &e.vlm_scores {
            if !sidecars.contains_key(rel) {
                let loaded = ingest_vlm_scores(ds.resolve(rel)).map_err(|e| e.to_string());
                sidecars.insert(rel.clone(), loaded);
            }
        }
    }
    let results: Vec<(String, Result<FeatureReport, String>)> = entries
        .par_iter()
        .map(|e| {
            let run = || -> Result<FeatureReport, String> {
                let scores = match &e.vlm_scores {
                    None => None,
                    Some(rel) => {
                        let map = sidecars[rel].as_ref().map_err(Clone::clone)?;
                        Some(*map.get(&e.id).ok_or_else(|| format!("no VLM scores in {rel}"))?)
                    }
                };
                let img = io::load_image(ds.image_path(e)).map_err(|e| e.to_string())?;
                extract_features(&img, cfg, scores).map_err(|e| e.to_string())
            };
            (e.id.clone(), run())
        })
        .collect();

    let ok: Vec<&FeatureReport> = results.iter().filter_map(|(_, r)| r.as_ref().ok()).collect();
    let with_vlm = !ok.is_empty() && ok.iter().all(|r| r.features.vlm.is_some());
    if !with_vlm && ok.iter().any(|r| r.features.vlm.is_some()) {
        warn!("VLM scores missing for some images; dropping the VLM columns");
    }
    let n = if with_vlm { FEATURE_NAMES.len() } else { 5 };
    let mut table = FeatureTable::new(FEATURE_NAMES[..n].iter().map(|s| s.to_string()).collect());
    let mut reports = BTreeMap::new();
    for (id, r) in &results {
        if let Ok(rep) = r {
            let mut values = rep.features.to_vec();
            values.truncate(n);
            table.rows.push(FeatureRow {
                image_id: id.clone(),
                values,
                label: ds.entry(id).and_then(|e| e.quality),
            });
            reports.insert(id.clone(), rep.clone());
        }
    }
    let dir = stage_dir(out, "features");
    io::write_atomic(&features_csv_path(out), &write_features_csv(&table))?;
    write_json(&dir.join("reports.json"), &reports)?;
    info!("features: {} rows", table.rows.len());
    Ok(StageReport::collect(
        results.into_iter().map(|(id, r)| (id, r.map(|_| ()))).collect(),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub best: ModelSpec,
    pub test: EvalReport,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
}

fn require(path: &Path, what: &'static str) -> Result<(), PipelineError> {
    if path.exists() {
        Ok(())
    } else {
        Err(PipelineError::MissingArtifact {
            what,
            path: path.to_path_buf(),
        })
    }
}

/// Stratified split, grid search on the training part, refit of the best
/// cell and evaluation on the held-out part.
pub fn cmd_train(features_csv: &Path, out: &Path, cfg: &CuratorConfig) -> Result<TrainSummary, PipelineError> {
    require(features_csv, "feature table")?;
    let table = read_features_csv(features_csv)?;
    let labeled: Vec<(String, bool)> = table
        .rows
        .iter()
        .filter_map(|r| r.label.map(|l| (r.image_id.clone(), l.is_good())))
        .collect();
    if labeled.is_empty() {
        return Err(PipelineError::NoLabels(features_csv.to_path_buf()));
    }
    let (train_ids, test_ids) = split_dataset(&labeled, cfg.train.train_ratio, cfg.seed)?;
    let (xtr, ytr) = table.subset(&train_ids).labeled()?;
    let (xte, yte) = table.subset(&test_ids).labeled()?;
    let grid = cfg.train.grid.clone().unwrap_or_else(|| match cfg.train.model {
        ModelKind::Forest => default_forest_grid(),
        ModelKind::Logistic => default_logistic_grid(),
    });
    let search = grid_search(&grid, &table.names, &xtr, &ytr, cfg.train.folds, cfg.seed)?;
    let model = search.best.fit(&table.names, &xtr, &ytr, cfg.seed)?;
    let test = evaluate(&model, &xte, &yte)?;
    let dir = stage_dir(out, "train");
    io::write_atomic(&dir.join("model.json"), model.to_json().as_bytes())?;
    io::write_atomic(&dir.join("cv_table.csv"), &search.to_csv())?;
    let summary = TrainSummary {
        best: search.best,
        test,
        train_ids,
        test_ids,
    };
    write_json(&dir.join("eval.json"), &summary)?;
    info!("train: test F2 {:.3}, accuracy {:.3}", test.f2, test.accuracy);
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityVerdict {
    pub image_id: String,
    pub p_good: f64,
    pub label: QualityLabel,
}

/// Predicts a quality label per image and writes them into a copy of the
/// manifest whose paths are made absolute.
pub fn cmd_assess(
    ds: &DatasetManifest,
    features_csv: &Path,
    model_file: &Path,
    out: &Path,
    explain: bool,
) -> Result<StageReport, PipelineError> {
    require(features_csv, "feature table")?;
    require(model_file, "model")?;
    let model = ClassifierModel::load(model_file)?;
    let table = read_features_csv(features_csv)?;
    model.check_schema(&table.names)?;
    let rows: BTreeMap<&str, &FeatureRow> = table.rows.iter().map(|r| (r.image_id.as_str(), r)).collect();

    let mut copy = ds.manifest().clone();
    let mut verdicts = Vec::new();
    let mut results = Vec::new();
    let mut explanations = Vec::new();
    copy.images.sort_by(|a, b| a.id.cmp(&b.id));
    for e in &mut copy.images {
        let Some(row) = rows.get(e.id.as_str()) else {
            results.push((e.id.clone(), Err("no feature row".to_string())));
            continue;
        };
        let (p, good) = model.predict(&row.values)?;
        let label = if good { QualityLabel::Good } else { QualityLabel::Bad };
        e.quality = Some(label);
        verdicts.push(QualityVerdict {
            image_id: e.id.clone(),
            p_good: p,
            label,
        });
        if explain {
            explanations.push((e.id.clone(), explain_shapley(&model, &row.values, None)?));
        }
        results.push((e.id.clone(), Ok(())));
    }
    for e in &mut copy.images {
        let abs = |p: &str| ds.resolve(p).to_string_lossy().into_owned();
        e.path = abs(&e.path);
        e.vlm_scores = e.vlm_scores.as_deref().map(abs);
        for a in &mut e.annotations {
            a.path = abs(&a.path);
        }
        for p in e.predictions.values_mut() {
            *p = abs(p);
        }
    }

    let dir = stage_dir(out, "assess");
    crate::manifest::save_manifest(&copy, &dir.join("manifest.json"))?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["image_id", "p_good", "label"]).expect("in-memory write");
    for v in &verdicts {
        w.write_record([v.image_id.clone(), v.p_good.to_string(), v.label.to_string()])
            .expect("in-memory write");
    }
    io::write_atomic(&dir.join("verdicts.csv"), &w.into_inner().expect("in-memory flush"))?;
    if explain {
        let exdir = dir.join("explanations");
        for (id, e) in &explanations {
            write_json(&exdir.join(format!("{}.explanation.json", file_stem(id))), e)?;
        }
        let summary = render_explanations(&explanations);
        io::write_atomic(&exdir.join("summary.json"), summary.to_json().as_bytes())?;
        io::write_atomic(&exdir.join("summary.txt"), summary.to_text().as_bytes())?;
    }
    Ok(StageReport::collect(results))
}

pub fn cmd_enhance(ds: &DatasetManifest, out: &Path, params: &EnhancementParams) -> Result<StageReport, PipelineError> {
    params.validate()?;
    let results = ds
        .sorted_entries()
        .par_iter()
        .map(|e| {
            let run = || -> Result<(), String> {
                let img = io::load_image(ds.image_path(e)).map_err(|e| e.to_string())?;
                let enhanced = enhance(&img, params).map_err(|e| e.to_string())?;
                io::save_png(&enhanced, enhanced_path(out, &e.id)).map_err(|e| e.to_string())
            };
            (e.id.clone(), run())
        })
        .collect();
    Ok(StageReport::collect(results))
}

/// Cleans every prediction mask listed in the manifest. Entries without
/// predictions are not part of the request.
pub fn cmd_postprocess(
    ds: &DatasetManifest,
    out: &Path,
    params: &PostprocessParams,
) -> Result<StageReport, PipelineError> {
    params.validate()?;
    let entries: Vec<_> = ds.sorted_entries().into_iter().filter(|e| !e.predictions.is_empty()).collect();
    if entries.is_empty() {
        return Err(PipelineError::MissingPredictions);
    }
    let dir = stage_dir(out, "postprocess");
    let results = entries
        .par_iter()
        .map(|e| {
            let run = || -> Result<(), String> {
                let img = io::load_image(ds.image_path(e)).map_err(|e| e.to_string())?;
                for (&lesion, rel) in &e.predictions {
                    let mask = io::load_mask(ds.resolve(rel)).map_err(|e| e.to_string())?;
                    let cleaned = postprocess(&img, &mask, lesion, params).map_err(|e| format!("{lesion}: {e}"))?;
                    let name = format!("{}.{lesion}.pp.png", file_stem(&e.id));
                    io::save_mask(&cleaned, dir.join(name)).map_err(|e| e.to_string())?;
                }
                Ok(())
            };
            (e.id.clone(), run())
        })
        .collect();
    Ok(StageReport::collect(results))
}

/// Agreement report of one image from the masks on disk. `expertise`
/// overrides the manifest value per annotator.
pub fn agreement_for_image(
    ds: &DatasetManifest,
    image_id: &str,
    thresholds: &ProtocolThresholds,
    expertise: Option<&BTreeMap<String, f64>>,
) -> Result<AgreementReport, PipelineError> {
    let mut anns = ds.load_annotations(image_id)?;
    if let Some(map) = expertise {
        for a in &mut anns {
            if let Some(&e) = map.get(&a.annotator_id) {
                let updated = crate::mask::Annotation::new(
                    a.annotator_id.clone(),
                    a.image_id.clone(),
                    a.mask.clone(),
                    a.confidence(),
                    e,
                )
                .map_err(|source| ManifestError::Annotation {
                    image_id: image_id.to_string(),
                    source,
                })?;
                *a = updated;
            }
        }
    }
    Ok(report(image_id, &anns, thresholds)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementSummaryRow {
    pub image_id: String,
    pub verdict: Verdict,
    pub score: Option<f64>,
    pub discarded_annotators: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AgreementSummary {
    pub kept: usize,
    pub discarded: usize,
    pub insufficient: usize,
    pub images: Vec<AgreementSummaryRow>,
}

/// One report per annotated image plus a corpus summary.
pub fn cmd_agree(
    ds: &DatasetManifest,
    out: &Path,
    thresholds: &ProtocolThresholds,
) -> Result<(StageReport, AgreementSummary), PipelineError> {
    thresholds.validate()?;
    let dir = stage_dir(out, "agree");
    let entries: Vec<_> = ds.sorted_entries().into_iter().filter(|e| !e.annotations.is_empty()).collect();
    let reports: Vec<(String, Result<AgreementReport, String>)> = entries
        .par_iter()
        .map(|e| {
            let r = agreement_for_image(ds, &e.id, thresholds, None).map_err(|e| e.to_string());
            (e.id.clone(), r)
        })
        .collect();
    let mut summary = AgreementSummary::default();
    let mut results = Vec::new();
    for (id, r) in reports {
        match r {
            Ok(rep) => {
                let stem = file_stem(&id);
                io::write_atomic(&dir.join(format!("{stem}.agreement.json")), rep.to_json().as_bytes())?;
                io::write_atomic(&dir.join(format!("{stem}.agreement.txt")), rep.to_text().as_bytes())?;
                match rep.verdict {
                    Verdict::Keep => summary.kept += 1,
                    Verdict::Discard => summary.discarded += 1,
                    Verdict::Insufficient => summary.insufficient += 1,
                }
                summary.images.push(AgreementSummaryRow {
                    image_id: id.clone(),
                    verdict: rep.verdict,
                    score: rep.score,
                    discarded_annotators: rep.discarded_annotators,
                });
                results.push((id, Ok(())));
            }
            Err(reason) => results.push((id, Err(reason))),
        }
    }
    write_json(&dir.join("summary.json"), &summary)?;
    Ok((StageReport::collect(results), summary))
}
