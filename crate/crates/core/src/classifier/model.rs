//! Serialized classifier: schema, standardization, parameters and the
//! background rows used for explanations.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::dataset::Standardizer;
use super::forest::{Node, Tree};
use super::ClassifierError;

pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Logistic,
    Forest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelParams {
    Logistic { weights: Vec<f64>, bias: f64 },
    Forest { trees: Vec<Tree>, tree_seeds: Vec<u64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierModel {
    pub version: u32,
    pub schema: Vec<String>,
    pub standardizer: Standardizer,
    pub params: ModelParams,
    /// Raw training rows used as the reference distribution for Shapley
    /// values.
    #[serde(default)]
    pub background: Vec<Vec<f64>>,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn logistic_prob(weights: &[f64], bias: f64, z: &[f64]) -> f64 {
    sigmoid(bias + weights.iter().zip(z).map(|(w, v)| w * v).sum::<f64>())
}

impl ClassifierModel {
    pub fn kind(&self) -> ModelKind {
        match self.params {
            ModelParams::Logistic { .. } => ModelKind::Logistic,
            ModelParams::Forest { .. } => ModelKind::Forest,
        }
    }

    pub fn dim(&self) -> usize {
        self.schema.len()
    }

    pub fn check_schema(&self, names: &[String]) -> Result<(), ClassifierError> {
        if names != self.schema.as_slice() {
            return Err(ClassifierError::SchemaMismatch {
                expected: self.schema.clone(),
                found: names.to_vec(),
            });
        }
        Ok(())
    }

    /// Probability of "good" for a raw feature vector.
    pub fn predict_proba(&self, x: &[f64]) -> Result<f64, ClassifierError> {
        if x.len() != self.dim() {
            return Err(ClassifierError::WrongArity {
                expected: self.dim(),
                found: x.len(),
            });
        }
        Ok(self.proba_unchecked(x))
    }

    pub(crate) fn proba_unchecked(&self, x: &[f64]) -> f64 {
        let z = self.standardizer.transform(x);
        match &self.params {
            ModelParams::Logistic { weights, bias } => logistic_prob(weights, *bias, &z),
            ModelParams::Forest { trees, .. } => {
                trees.iter().map(|t| t.predict(&z)).sum::<f64>() / trees.len() as f64
            }
        }
    }

    /// Probability and label, `good` when the probability is at least 0.5.
    pub fn predict(&self, x: &[f64]) -> Result<(f64, bool), ClassifierError> {
        let p = self.predict_proba(x)?;
        Ok((p, p >= 0.5))
    }

    pub fn validate(&self) -> Result<(), ClassifierError> {
        let bad = |m: String| Err(ClassifierError::InvalidModel(m));
        if self.version != MODEL_VERSION {
            return bad(format!("unsupported version {}", self.version));
        }
        let d = self.dim();
        if self.standardizer.mean.len() != d || self.standardizer.std.len() != d {
            return bad("standardizer length differs from schema".into());
        }
        if self.background.iter().any(|r| r.len() != d) {
            return bad("background row length differs from schema".into());
        }
        match &self.params {
            ModelParams::Logistic { weights, .. } => {
                if weights.len() != d {
                    return bad(format!("{} weights for {d} features", weights.len()));
                }
            }
            ModelParams::Forest { trees, tree_seeds } => {
                if trees.is_empty() {
                    return bad("forest has no trees".into());
                }
                if tree_seeds.len() != trees.len() {
                    return bad("one seed per tree expected".into());
                }
                for t in trees {
                    for (i, n) in t.nodes.iter().enumerate() {
                        match *n {
                            Node::Leaf { p } if !(0.0..=1.0).contains(&p) => {
                                return bad(format!("leaf probability {p}"));
                            }
                            Node::Split { feature, left, right, .. } => {
                                if feature >= d {
                                    return bad(format!("split on feature {feature} of {d}"));
                                }
                                if left <= i || right <= i || left >= t.nodes.len() || right >= t.nodes.len() {
                                    return bad("child index out of order".into());
                                }
                            }
                            _ => {}
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ClassifierError> {
        let m: Self = serde_json::from_str(text).map_err(|e| ClassifierError::InvalidModel(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self, ClassifierError> {
        let text = std::fs::read_to_string(path).map_err(|source| ClassifierError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }
}
