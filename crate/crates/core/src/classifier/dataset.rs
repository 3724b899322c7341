//! Feature tables on disk, stratified train/test splits and z-scoring.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{label_name, ClassifierError};
use crate::manifest::QualityLabel;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub image_id: String,
    pub values: Vec<f64>,
    pub label: Option<QualityLabel>,
}

/// Feature vectors of a corpus, one row per image, columns named by `names`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureTable {
    pub names: Vec<String>,
    pub rows: Vec<FeatureRow>,
}

impl FeatureTable {
    pub fn new(names: Vec<String>) -> Self {
        Self { names, rows: Vec::new() }
    }

    /// Labeled rows as a design matrix and `good` flags.
    pub fn labeled(&self) -> Result<(Vec<Vec<f64>>, Vec<bool>), ClassifierError> {
        let mut x = Vec::with_capacity(self.rows.len());
        let mut y = Vec::with_capacity(self.rows.len());
        for r in &self.rows {
            let label = r.label.ok_or_else(|| ClassifierError::Unlabeled(r.image_id.clone()))?;
            x.push(r.values.clone());
            y.push(label.is_good());
        }
        Ok((x, y))
    }

    pub fn subset(&self, ids: &[String]) -> FeatureTable {
        let rows = ids
            .iter()
            .filter_map(|id| self.rows.iter().find(|r| &r.image_id == id).cloned())
            .collect();
        FeatureTable { names: self.names.clone(), rows }
    }
}

fn table_err(path: &Path, detail: impl ToString) -> ClassifierError {
    ClassifierError::Table {
        path: path.to_path_buf(),
        detail: detail.to_string(),
    }
}

/// CSV with header `image_id,<feature names>,label`; unlabeled rows leave the
/// label cell empty.
pub fn write_features_csv(table: &FeatureTable) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["image_id".to_string()];
    header.extend(table.names.iter().cloned());
    header.push("label".into());
    w.write_record(&header).expect("in-memory write");
    for r in &table.rows {
        let mut rec = vec![r.image_id.clone()];
        rec.extend(r.values.iter().map(|v| v.to_string()));
        rec.push(r.label.map(|l| l.to_string()).unwrap_or_default());
        w.write_record(&rec).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

pub fn read_features_csv(path: &Path) -> Result<FeatureTable, ClassifierError> {
    let mut rd = csv::Reader::from_path(path).map_err(|e| table_err(path, e))?;
    let header = rd.headers().map_err(|e| table_err(path, e))?.clone();
    let cols: Vec<&str> = header.iter().collect();
    if cols.len() < 2 || cols[0] != "image_id" || cols[cols.len() - 1] != "label" {
        return Err(table_err(path, "header must be image_id,<features...>,label"));
    }
    let names: Vec<String> = cols[1..cols.len() - 1].iter().map(|s| s.to_string()).collect();
    let mut table = FeatureTable::new(names);
    for (i, rec) in rd.records().enumerate() {
        let rec = rec.map_err(|e| table_err(path, e))?;
        let line = i + 2;
        let values = rec
            .iter()
            .skip(1)
            .take(table.names.len())
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| table_err(path, format!("line {line}: {e}")))?;
        let label_cell = rec.get(rec.len() - 1).unwrap_or("").trim();
        let label = if label_cell.is_empty() {
            None
        } else {
            Some(label_cell.parse().map_err(|e: String| table_err(path, format!("line {line}: {e}")))?)
        };
        table.rows.push(FeatureRow {
            image_id: rec[0].to_string(),
            values,
            label,
        });
    }
    Ok(table)
}

/// Stratified split of labeled ids: within each class the ids are sorted,
/// shuffled with the seed and the first `round(n · ratio)` (at least one,
/// leaving at least one) go to training.
pub fn split_dataset(
    labeled: &[(String, bool)],
    ratio: f64,
    seed: u64,
) -> Result<(Vec<String>, Vec<String>), ClassifierError> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(ClassifierError::InvalidParams(format!(
            "train ratio {ratio} leaves an empty partition"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for class in [true, false] {
        let mut ids: Vec<String> = labeled
            .iter()
            .filter(|(_, g)| *g == class)
            .map(|(id, _)| id.clone())
            .collect();
        if ids.len() < 2 {
            return Err(ClassifierError::Stratify {
                label: label_name(class),
                count: ids.len(),
            });
        }
        ids.sort();
        ids.shuffle(&mut rng);
        let n = ids.len();
        let k = ((n as f64 * ratio).round() as usize).clamp(1, n - 1);
        test.extend(ids.split_off(k));
        train.extend(ids);
    }
    train.sort();
    test.sort();
    Ok((train, test))
}

/// Z-score statistics from training data; constant columns get unit scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &[Vec<f64>]) -> Self {
        let d = x.first().map_or(0, Vec::len);
        let n = x.len().max(1) as f64;
        let mean: Vec<f64> = (0..d).map(|k| x.iter().map(|r| r[k]).sum::<f64>() / n).collect();
        let std = (0..d)
            .map(|k| {
                let var = x.iter().map(|r| (r[k] - mean[k]).powi(2)).sum::<f64>() / n;
                let s = var.sqrt();
                if s > 1e-12 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn identity(d: usize) -> Self {
        Self {
            mean: vec![0.0; d],
            std: vec![1.0; d],
        }
    }

    pub fn transform(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(good: usize, bad: usize) -> Vec<(String, bool)> {
        (0..good)
            .map(|i| (format!("g{i:02}"), true))
            .chain((0..bad).map(|i| (format!("b{i:02}"), false)))
            .collect()
    }

    #[test]
    fn stratified_counts() {
        let (train, test) = split_dataset(&ids(10, 10), 0.7, 1).unwrap();
        assert_eq!(train.len(), 14);
        assert_eq!(test.len(), 6);
        assert_eq!(train.iter().filter(|i| i.starts_with('g')).count(), 7);
        assert_eq!(test.iter().filter(|i| i.starts_with('b')).count(), 3);
        assert!(train.iter().all(|i| !test.contains(i)));
    }

    #[test]
    fn split_is_deterministic() {
        let a = split_dataset(&ids(13, 8), 0.7, 42).unwrap();
        assert_eq!(a, split_dataset(&ids(13, 8), 0.7, 42).unwrap());
        assert_ne!(a, split_dataset(&ids(13, 8), 0.7, 43).unwrap());
    }

    #[test]
    fn split_errors() {
        assert!(matches!(split_dataset(&ids(10, 10), 1.0, 0), Err(ClassifierError::InvalidParams(_))));
        assert!(matches!(split_dataset(&ids(10, 10), 0.0, 0), Err(ClassifierError::InvalidParams(_))));
        assert!(matches!(
            split_dataset(&ids(10, 1), 0.7, 0),
            Err(ClassifierError::Stratify { label: "bad", count: 1 })
        ));
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut t = FeatureTable::new(vec!["a".into(), "b".into()]);
        t.rows.push(FeatureRow { image_id: "x".into(), values: vec![0.1, -3.5e-7], label: Some(QualityLabel::Good) });
        t.rows.push(FeatureRow { image_id: "y".into(), values: vec![2.0, 1.0 / 3.0], label: None });
        let path = dir.path().join("f.csv");
        std::fs::write(&path, write_features_csv(&t)).unwrap();
        assert_eq!(read_features_csv(&path).unwrap(), t);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("image_id,a,b,label\n"));

        std::fs::write(&path, "id,a,label\n").unwrap();
        assert!(matches!(read_features_csv(&path), Err(ClassifierError::Table { .. })));
    }

    #[test]
    fn standardizer_handles_constant_columns() {
        let x = vec![vec![1.0, 5.0], vec![3.0, 5.0]];
        let s = Standardizer::fit(&x);
        assert_eq!(s.mean, vec![2.0, 5.0]);
        assert_eq!(s.std, vec![1.0, 1.0]);
        assert_eq!(s.transform(&[3.0, 5.0]), vec![1.0, 0.0]);
    }
}
