//! Hyper-parameter grid search by stratified k-fold cross-validation on F2.

use std::cmp::Ordering;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::evaluate::{evaluate, EvalReport};
use super::forest::{train_forest, ForestOptions};
use super::logistic::{train_logistic, LogisticOptions};
use super::model::ClassifierModel;
use super::{check_matrix, ClassifierError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelSpec {
    Logistic(LogisticOptions),
    Forest(ForestOptions),
}

impl ModelSpec {
    pub fn fit(
        &self,
        names: &[String],
        x: &[Vec<f64>],
        y: &[bool],
        seed: u64,
    ) -> Result<ClassifierModel, ClassifierError> {
        match self {
            ModelSpec::Logistic(o) => train_logistic(names, x, y, o, seed),
            ModelSpec::Forest(o) => train_forest(names, x, y, o, seed),
        }
    }

    /// Orders equally scoring cells: fewer trees, then larger l2, first.
    fn simplicity(&self, other: &Self) -> Ordering {
        match (self, other) {
            (ModelSpec::Forest(a), ModelSpec::Forest(b)) => a.trees.cmp(&b.trees),
            (ModelSpec::Logistic(a), ModelSpec::Logistic(b)) => b.l2.total_cmp(&a.l2),
            _ => Ordering::Equal,
        }
    }
}

pub fn default_forest_grid() -> Vec<ModelSpec> {
    let mut grid = Vec::new();
    for trees in [50, 200] {
        for max_depth in [4, 8] {
            grid.push(ModelSpec::Forest(ForestOptions {
                trees,
                max_depth,
                min_leaf: 2,
                ..Default::default()
            }));
        }
    }
    grid
}

pub fn default_logistic_grid() -> Vec<ModelSpec> {
    [0.001, 0.01, 0.1, 1.0]
        .into_iter()
        .map(|l2| ModelSpec::Logistic(LogisticOptions { l2, ..Default::default() }))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvRow {
    pub index: usize,
    pub spec: ModelSpec,
    pub fold_f2: Vec<f64>,
    pub fold_accuracy: Vec<f64>,
    pub mean_f2: f64,
    pub std_f2: f64,
    pub mean_accuracy: f64,
    pub selected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best: ModelSpec,
    pub best_index: usize,
    pub table: Vec<CvRow>,
}

/// Fold index per row, stratified by class.
fn stratified_folds(y: &[bool], folds: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![0; y.len()];
    let mut next = 0;
    for class in [true, false] {
        let mut idx: Vec<usize> = (0..y.len()).filter(|&i| y[i] == class).collect();
        idx.shuffle(&mut rng);
        for i in idx {
            assignment[i] = next % folds;
            next += 1;
        }
    }
    assignment
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn grid_search(
    grid: &[ModelSpec],
    names: &[String],
    x: &[Vec<f64>],
    y: &[bool],
    folds: usize,
    seed: u64,
) -> Result<SearchResult, ClassifierError> {
    if grid.is_empty() {
        return Err(ClassifierError::EmptyGrid);
    }
    check_matrix(x, y)?;
    if folds < 2 || folds > x.len() {
        return Err(ClassifierError::InvalidParams(format!(
            "{folds} folds for {} rows",
            x.len()
        )));
    }
    let assignment = stratified_folds(y, folds, seed);
    let jobs: Vec<(usize, usize)> = (0..grid.len()).flat_map(|c| (0..folds).map(move |f| (c, f))).collect();
    let results: Vec<EvalReport> = jobs
        .par_iter()
        .map(|&(c, f)| {
            let (mut xtr, mut ytr, mut xte, mut yte) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
            for i in 0..x.len() {
                if assignment[i] == f {
                    xte.push(x[i].clone());
                    yte.push(y[i]);
                } else {
                    xtr.push(x[i].clone());
                    ytr.push(y[i]);
                }
            }
            let model = grid[c].fit(names, &xtr, &ytr, seed)?;
            evaluate(&model, &xte, &yte)
        })
        .collect::<Result<_, _>>()?;

    let mut table: Vec<CvRow> = grid
        .iter()
        .enumerate()
        .map(|(c, spec)| {
            let reports = &results[c * folds..(c + 1) * folds];
            let fold_f2: Vec<f64> = reports.iter().map(|r| r.f2).collect();
            let fold_accuracy: Vec<f64> = reports.iter().map(|r| r.accuracy).collect();
            let m = mean(&fold_f2);
            let var = fold_f2.iter().map(|v| (v - m).powi(2)).sum::<f64>() / folds as f64;
            CvRow {
                index: c,
                spec: *spec,
                mean_f2: m,
                std_f2: var.sqrt(),
                mean_accuracy: mean(&fold_accuracy),
                fold_f2,
                fold_accuracy,
                selected: false,
            }
        })
        .collect();

    let best_index = table
        .iter()
        .min_by(|a, b| {
            b.mean_f2
                .total_cmp(&a.mean_f2)
                .then(b.mean_accuracy.total_cmp(&a.mean_accuracy))
                .then(a.spec.simplicity(&b.spec))
                .then(a.index.cmp(&b.index))
        })
        .map(|r| r.index)
        .expect("grid is not empty");
    table[best_index].selected = true;
    Ok(SearchResult {
        best: grid[best_index],
        best_index,
        table,
    })
}

impl SearchResult {
    pub fn to_csv(&self) -> Vec<u8> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "index", "kind", "trees", "max_depth", "min_leaf", "l2", "epochs", "lr", "mean_f2", "std_f2",
            "mean_accuracy", "selected",
        ])
        .expect("in-memory write");
        for r in &self.table {
            let (kind, trees, depth, leaf, l2, epochs, lr) = match r.spec {
                ModelSpec::Forest(o) => (
                    "forest",
                    o.trees.to_string(),
                    o.max_depth.to_string(),
                    o.min_leaf.to_string(),
                    String::new(),
                    String::new(),
                    String::new(),
                ),
                ModelSpec::Logistic(o) => (
                    "logistic",
                    String::new(),
                    String::new(),
                    String::new(),
                    o.l2.to_string(),
                    o.epochs.to_string(),
                    o.lr.to_string(),
                ),
            };
            w.write_record([
                r.index.to_string(),
                kind.to_string(),
                trees,
                depth,
                leaf,
                l2,
                epochs,
                lr,
                r.mean_f2.to_string(),
                r.std_f2.to_string(),
                r.mean_accuracy.to_string(),
                r.selected.to_string(),
            ])
            .expect("in-memory write");
        }
        w.into_inner().expect("in-memory flush")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(d: usize) -> Vec<String> {
        (0..d).map(|i| format!("f{i}")).collect()
    }

    fn xor() -> (Vec<Vec<f64>>, Vec<bool>) {
        let x: Vec<Vec<f64>> = (0..80)
            .map(|i| vec![(i % 2) as f64 + (i as f64) * 1e-3, ((i / 2) % 2) as f64])
            .collect();
        let y = x.iter().map(|r| (r[0] > 0.5) != (r[1] > 0.5)).collect();
        (x, y)
    }

    fn forest(depth: usize) -> ModelSpec {
        ModelSpec::Forest(ForestOptions {
            trees: 5,
            max_depth: depth,
            max_features: Some(2),
            ..Default::default()
        })
    }

    #[test]
    fn single_cell() {
        let (x, y) = xor();
        let r = grid_search(&[forest(3)], &names(2), &x, &y, 5, 1).unwrap();
        assert_eq!(r.best_index, 0);
        assert!(r.table[0].selected);
    }

    #[test]
    fn deeper_trees_win_on_xor() {
        let (x, y) = xor();
        let r = grid_search(&[forest(1), forest(8)], &names(2), &x, &y, 5, 1).unwrap();
        assert_eq!(r.best, forest(8));
        assert!(r.table[1].mean_f2 > r.table[0].mean_f2);
        assert_eq!(r, grid_search(&[forest(1), forest(8)], &names(2), &x, &y, 5, 1).unwrap());
        let csv = String::from_utf8(r.to_csv()).unwrap();
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.lines().nth(2).unwrap().ends_with("true"));
    }

    #[test]
    fn ties_prefer_fewer_trees() {
        let x: Vec<Vec<f64>> = (0..40).map(|i| vec![if i % 2 == 0 { 0.0 } else { 10.0 }]).collect();
        let y: Vec<bool> = (0..40).map(|i| i % 2 == 1).collect();
        let grid: Vec<ModelSpec> = [20, 3]
            .into_iter()
            .map(|trees| ModelSpec::Forest(ForestOptions { trees, ..Default::default() }))
            .collect();
        let r = grid_search(&grid, &names(1), &x, &y, 4, 0).unwrap();
        assert_eq!(r.best_index, 1);
    }

    #[test]
    fn folds_are_stratified() {
        let y: Vec<bool> = (0..50).map(|i| i < 20).collect();
        let a = stratified_folds(&y, 5, 3);
        for f in 0..5 {
            assert_eq!((0..50).filter(|&i| a[i] == f && y[i]).count(), 4);
            assert_eq!((0..50).filter(|&i| a[i] == f).count(), 10);
        }
    }

    #[test]
    fn empty_grid() {
        let (x, y) = xor();
        assert!(matches!(grid_search(&[], &names(2), &x, &y, 5, 0), Err(ClassifierError::EmptyGrid)));
    }
}
