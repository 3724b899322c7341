//! Exact interventional Shapley values by enumeration of all coalitions.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::ClassifierModel;
use super::ClassifierError;

pub const MAX_SHAPLEY_FEATURES: usize = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapExplanation {
    pub features: Vec<String>,
    pub values: Vec<f64>,
    /// Mean output over the background set.
    pub base_value: f64,
    pub phi: Vec<f64>,
    pub prediction: f64,
}

impl ShapExplanation {
    pub fn efficiency_gap(&self) -> f64 {
        (self.base_value + self.phi.iter().sum::<f64>() - self.prediction).abs()
    }
}

/// Shapley values of `f` at `x` where absent features take their values
/// from each background row in turn.
pub fn shapley_values<F>(
    f: F,
    names: &[String],
    x: &[f64],
    background: &[Vec<f64>],
) -> Result<ShapExplanation, ClassifierError>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let d = x.len();
    if names.len() != d {
        return Err(ClassifierError::WrongArity { expected: names.len(), found: d });
    }
    if d > MAX_SHAPLEY_FEATURES {
        return Err(ClassifierError::TooManyFeatures(d));
    }
    if background.is_empty() {
        return Err(ClassifierError::EmptyBackground);
    }
    if let Some(b) = background.iter().find(|b| b.len() != d) {
        return Err(ClassifierError::WrongArity { expected: d, found: b.len() });
    }
    let value: Vec<f64> = (0..1usize << d)
        .into_par_iter()
        .map(|s| {
            let mut z = vec![0.0; d];
            let total: f64 = background
                .iter()
                .map(|b| {
                    for k in 0..d {
                        z[k] = if s >> k & 1 == 1 { x[k] } else { b[k] };
                    }
                    f(&z)
                })
                .sum();
            total / background.len() as f64
        })
        .collect();
    // |S|!(d-|S|-1)!/d!
    let weight: Vec<f64> = (0..d)
        .map(|s| {
            let fact = |n: usize| (1..=n).map(|v| v as f64).product::<f64>();
            fact(s) * fact(d - s - 1) / fact(d)
        })
        .collect();
    let phi = (0..d)
        .map(|k| {
            (0..1usize << d)
                .filter(|s| s >> k & 1 == 0)
                .map(|s| weight[s.count_ones() as usize] * (value[s | 1 << k] - value[s]))
                .sum()
        })
        .collect();
    Ok(ShapExplanation {
        features: names.to_vec(),
        values: x.to_vec(),
        base_value: value[0],
        phi,
        prediction: f(x),
    })
}

/// Attributions of the probability of "good" against the model's stored
/// background rows, or `background` when given.
pub fn explain_shapley(
    model: &ClassifierModel,
    x: &[f64],
    background: Option<&[Vec<f64>]>,
) -> Result<ShapExplanation, ClassifierError> {
    if x.len() != model.dim() {
        return Err(ClassifierError::WrongArity { expected: model.dim(), found: x.len() });
    }
    let bg = background.unwrap_or(&model.background);
    shapley_values(|z| model.proba_unchecked(z), &model.schema, x, bg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance {
    pub feature: String,
    pub mean_abs_phi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contribution {
    pub feature: String,
    pub value: f64,
    pub phi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceListing {
    pub image_id: String,
    pub base_value: f64,
    pub prediction: f64,
    /// Sorted by decreasing |phi|.
    pub contributions: Vec<Contribution>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationSummary {
    /// Sorted by decreasing mean |phi|; ties keep schema order.
    pub ranking: Vec<FeatureImportance>,
    pub instances: Vec<InstanceListing>,
}

pub fn render_explanations(explanations: &[(String, ShapExplanation)]) -> ExplanationSummary {
    let names = explanations.first().map(|(_, e)| e.features.clone()).unwrap_or_default();
    let n = explanations.len().max(1) as f64;
    let mut ranking: Vec<FeatureImportance> = names
        .iter()
        .enumerate()
        .map(|(k, name)| FeatureImportance {
            feature: name.clone(),
            mean_abs_phi: explanations.iter().map(|(_, e)| e.phi[k].abs()).sum::<f64>() / n,
        })
        .collect();
    ranking.sort_by(|a, b| b.mean_abs_phi.total_cmp(&a.mean_abs_phi));
    let instances = explanations
        .iter()
        .map(|(id, e)| {
            let mut contributions: Vec<Contribution> = e
                .features
                .iter()
                .zip(e.values.iter().zip(&e.phi))
                .map(|(f, (&value, &phi))| Contribution {
                    feature: f.clone(),
                    value,
                    phi,
                })
                .collect();
            contributions.sort_by(|a, b| b.phi.abs().total_cmp(&a.phi.abs()));
            InstanceListing {
                image_id: id.clone(),
                base_value: e.base_value,
                prediction: e.prediction,
                contributions,
            }
        })
        .collect();
    ExplanationSummary { ranking, instances }
}

impl ExplanationSummary {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serializes")
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "Mean |SHAP| per feature (towards \"good\")");
        for r in &self.ranking {
            let _ = writeln!(s, "  {:<14} {:.4}", r.feature, r.mean_abs_phi);
        }
        for inst in &self.instances {
            let _ = writeln!(
                s,
                "\n{}: p(good) = {:.4}, base = {:.4}",
                inst.image_id, inst.prediction, inst.base_value
            );
            for c in &inst.contributions {
                let _ = writeln!(s, "  {:<14} {:>+9.4}  (value {:.4})", c.feature, c.phi, c.value);
            }
        }
        s
    }
}
