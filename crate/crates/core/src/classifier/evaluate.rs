//! Test-set metrics with "good" as the positive class.

use serde::{Deserialize, Serialize};

use super::model::ClassifierModel;
use super::ClassifierError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub precision: f64,
    pub recall: f64,
    pub f2: f64,
    pub accuracy: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

impl EvalReport {
    pub fn from_predictions(predicted: &[bool], truth: &[bool]) -> Self {
        let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
        for (&p, &t) in predicted.iter().zip(truth) {
            match (p, t) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => tn += 1,
            }
        }
        let precision = ratio(tp as f64, (tp + fp) as f64);
        let recall = ratio(tp as f64, (tp + fn_) as f64);
        Self {
            precision,
            recall,
            f2: ratio(5.0 * precision * recall, 4.0 * precision + recall),
            accuracy: ratio((tp + tn) as f64, (tp + fp + fn_ + tn) as f64),
            tp,
            fp,
            fn_,
            tn,
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

pub fn evaluate(model: &ClassifierModel, x: &[Vec<f64>], y: &[bool]) -> Result<EvalReport, ClassifierError> {
    if x.is_empty() {
        return Err(ClassifierError::InvalidParams("test set is empty".into()));
    }
    if x.len() != y.len() {
        return Err(ClassifierError::LengthMismatch(x.len(), y.len()));
    }
    let predicted = x
        .iter()
        .map(|r| model.predict(r).map(|(_, l)| l))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(EvalReport::from_predictions(&predicted, y))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect() {
        let y = [true, false, true, false];
        let r = EvalReport::from_predictions(&y, &y);
        assert_eq!((r.precision, r.recall, r.f2, r.accuracy), (1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn half_precision_full_recall() {
        let truth = [true, false, true, false];
        let r = EvalReport::from_predictions(&[true; 4], &truth);
        assert_eq!((r.precision, r.recall), (0.5, 1.0));
        assert!((r.f2 - 2.5 / 3.0).abs() < 1e-15);
        assert_eq!(r.total(), 4);
    }

    #[test]
    fn all_negative() {
        let r = EvalReport::from_predictions(&[false; 3], &[true, false, true]);
        assert_eq!((r.precision, r.recall, r.f2), (0.0, 0.0, 0.0));
        assert_eq!(r.accuracy, 1.0 / 3.0);
        let json = serde_json::to_value(r).unwrap();
        assert_eq!(json["fn"], 2);
    }
}
