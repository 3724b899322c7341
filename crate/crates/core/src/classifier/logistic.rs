//! L2-regularized logistic regression fitted by full-batch gradient descent.

use serde::{Deserialize, Serialize};

use super::dataset::Standardizer;
use super::model::{logistic_prob, ClassifierModel, ModelParams, MODEL_VERSION};
use super::{check_matrix, class_weights, sample_background, ClassifierError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogisticOptions {
    pub l2: f64,
    pub epochs: usize,
    pub lr: f64,
    /// Weight samples inversely to their class frequency.
    pub class_weighted: bool,
}

impl Default for LogisticOptions {
    fn default() -> Self {
        Self {
            l2: 0.01,
            epochs: 500,
            lr: 1.0,
            class_weighted: true,
        }
    }
}

impl LogisticOptions {
    pub fn validate(&self) -> Result<(), ClassifierError> {
        if !(self.l2 >= 0.0 && self.l2.is_finite()) || !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(ClassifierError::InvalidParams(format!(
                "l2 {} and lr {} must be finite, lr positive",
                self.l2, self.lr
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticFit {
    pub weights: Vec<f64>,
    pub bias: f64,
    /// Objective after each accepted step, starting with the initial value.
    pub losses: Vec<f64>,
}

fn softplus(s: f64) -> f64 {
    s.max(0.0) + (-s.abs()).exp().ln_1p()
}

struct Objective<'a> {
    z: &'a [Vec<f64>],
    y: &'a [bool],
    c: Vec<f64>,
    c_total: f64,
    l2: f64,
}

impl Objective<'_> {
    fn loss(&self, w: &[f64], b: f64) -> f64 {
        let data: f64 = self
            .z
            .iter()
            .zip(self.y)
            .zip(&self.c)
            .map(|((z, &y), c)| {
                let s = b + w.iter().zip(z).map(|(a, v)| a * v).sum::<f64>();
                c * (softplus(s) - if y { s } else { 0.0 })
            })
            .sum();
        data / self.c_total + 0.5 * self.l2 * w.iter().map(|v| v * v).sum::<f64>()
    }

    fn gradient(&self, w: &[f64], b: f64) -> (Vec<f64>, f64) {
        let mut gw = vec![0.0; w.len()];
        let mut gb = 0.0;
        for ((z, &y), c) in self.z.iter().zip(self.y).zip(&self.c) {
            let r = c * (logistic_prob(w, b, z) - if y { 1.0 } else { 0.0 });
            gb += r;
            for (g, v) in gw.iter_mut().zip(z) {
                *g += r * v;
            }
        }
        for (g, wk) in gw.iter_mut().zip(w) {
            *g = *g / self.c_total + self.l2 * wk;
        }
        (gw, gb / self.c_total)
    }
}

/// Fits on already standardized rows. A step that would raise the objective
/// is retried with half the learning rate, so `losses` never increases.
pub fn fit_logistic(z: &[Vec<f64>], y: &[bool], opts: &LogisticOptions) -> Result<LogisticFit, ClassifierError> {
    opts.validate()?;
    let d = check_matrix(z, y)?;
    let (w_bad, w_good) = class_weights(y, opts.class_weighted);
    let c: Vec<f64> = y.iter().map(|&g| if g { w_good } else { w_bad }).collect();
    let obj = Objective {
        z,
        y,
        c_total: c.iter().sum(),
        c,
        l2: opts.l2,
    };
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let mut lr = opts.lr;
    let mut loss = obj.loss(&w, b);
    let mut losses = vec![loss];
    'epochs: for _ in 0..opts.epochs {
        let (gw, gb) = obj.gradient(&w, b);
        loop {
            let nw: Vec<f64> = w.iter().zip(&gw).map(|(a, g)| a - lr * g).collect();
            let nb = b - lr * gb;
            let nl = obj.loss(&nw, nb);
            if nl <= loss {
                w = nw;
                b = nb;
                loss = nl;
                losses.push(loss);
                break;
            }
            lr *= 0.5;
            if lr < 1e-12 {
                break 'epochs;
            }
        }
    }
    Ok(LogisticFit { weights: w, bias: b, losses })
}

/// Standardizes `x` with its own statistics, fits, and packages the model.
pub fn train_logistic(
    names: &[String],
    x: &[Vec<f64>],
    y: &[bool],
    opts: &LogisticOptions,
    seed: u64,
) -> Result<ClassifierModel, ClassifierError> {
    let d = check_matrix(x, y)?;
    if d != names.len() {
        return Err(ClassifierError::WrongArity { expected: names.len(), found: d });
    }
    let standardizer = Standardizer::fit(x);
    let z: Vec<Vec<f64>> = x.iter().map(|r| standardizer.transform(r)).collect();
    let fit = fit_logistic(&z, y, opts)?;
    Ok(ClassifierModel {
        version: MODEL_VERSION,
        schema: names.to_vec(),
        standardizer,
        params: ModelParams::Logistic {
            weights: fit.weights,
            bias: fit.bias,
        },
        background: sample_background(x, seed),
    })
}
