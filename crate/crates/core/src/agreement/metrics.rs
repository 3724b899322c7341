//! Pixel-level Cohen's kappa and Dice between two lesion masks, plain and
//! weighted by annotator confidence × expertise.

use serde::{Deserialize, Serialize};

use super::AgreementError;
use crate::mask::{Annotation, Mask};

/// 2×2 agreement table over pixels.
///
/// `a`: foreground in both, `b`: foreground only in the first, `c`: only in
/// the second, `d`: background in both. In the weighted form `a`, `b`, `c`
/// are sums of pixel weights and `d` remains a count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfusionSums {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl ConfusionSums {
    pub fn total(&self) -> f64 {
        self.a + self.b + self.c + self.d
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Counts {
    both: u64,
    first: u64,
    second: u64,
    neither: u64,
}

fn count(i: &Mask, j: &Mask, i_on: bool, j_on: bool) -> Result<Counts, AgreementError> {
    if i.dims() != j.dims() {
        return Err(AgreementError::DimensionMismatch {
            first: i.dims(),
            second: j.dims(),
        });
    }
    let mut c = Counts::default();
    for (&fi, &fj) in i.bits().iter().zip(j.bits()) {
        match (fi && i_on, fj && j_on) {
            (true, true) => c.both += 1,
            (true, false) => c.first += 1,
            (false, true) => c.second += 1,
            (false, false) => c.neither += 1,
        }
    }
    Ok(c)
}

pub fn confusion(i: &Mask, j: &Mask) -> Result<ConfusionSums, AgreementError> {
    let c = count(i, j, true, true)?;
    Ok(ConfusionSums {
        a: c.both as f64,
        b: c.first as f64,
        c: c.second as f64,
        d: c.neither as f64,
    })
}

/// Weighted table for masks whose foreground pixels carry the constant
/// weights `p_i` and `p_j`. A pixel counts as foreground only where its
/// weight is positive, so a zero-weight annotation behaves as empty.
pub fn weighted_confusion_masks(
    i: &Mask,
    p_i: f64,
    j: &Mask,
    p_j: f64,
) -> Result<ConfusionSums, AgreementError> {
    for p in [p_i, p_j] {
        if !(0.0..=1.0).contains(&p) {
            return Err(AgreementError::WeightOutOfRange(p));
        }
    }
    let c = count(i, j, p_i > 0.0, p_j > 0.0)?;
    Ok(ConfusionSums {
        a: c.both as f64 * (p_i * p_j),
        b: c.first as f64 * p_i,
        c: c.second as f64 * p_j,
        d: c.neither as f64,
    })
}

pub fn weighted_confusion(i: &Annotation, j: &Annotation) -> Result<ConfusionSums, AgreementError> {
    weighted_confusion_masks(&i.mask.grid, i.weight(), &j.mask.grid, j.weight())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Kappa {
    pub value: f64,
    /// Chance agreement is 1 (both masks empty or both full), so the ratio is
    /// 0/0; the value is then 1 for identical judgments and 0 otherwise.
    pub degenerate: bool,
}

/// Cohen's kappa `(P − Pe) / (1 − Pe)` with `P = (A + D)/T` and
/// `Pe = ((A+B)(A+C) + (C+D)(B+D)) / T²`, evaluated in the cancelled form
/// `2(AD − BC) / ((A+B)(B+D) + (A+C)(C+D))`.
pub fn cohen_kappa(s: &ConfusionSums) -> Result<Kappa, AgreementError> {
    // also rejects NaN totals
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    if !(s.total() > 0.0) {
        return Err(AgreementError::EmptyTable);
    }
    let den = (s.a + s.b) * (s.b + s.d) + (s.a + s.c) * (s.c + s.d);
    if den == 0.0 {
        let identical = s.b == 0.0 && s.c == 0.0;
        return Ok(Kappa {
            value: if identical { 1.0 } else { 0.0 },
            degenerate: true,
        });
    }
    let value = 2.0 * (s.a * s.d - s.b * s.c) / den;
    Ok(Kappa {
        value: value.clamp(-1.0, 1.0),
        degenerate: false,
    })
}

/// `2A / (2A + B + C)`; two empty masks agree perfectly.
pub fn dsc_from_sums(s: &ConfusionSums) -> f64 {
    let den = 2.0 * s.a + s.b + s.c;
    if den == 0.0 {
        1.0
    } else {
        2.0 * s.a / den
    }
}

pub fn dsc(i: &Mask, j: &Mask) -> Result<f64, AgreementError> {
    Ok(dsc_from_sums(&confusion(i, j)?))
}

pub fn weighted_dsc(i: &Annotation, j: &Annotation) -> Result<f64, AgreementError> {
    Ok(dsc_from_sums(&weighted_confusion(i, j)?))
}

/// All four agreement figures for one annotation pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairMetrics {
    pub kappa: f64,
    pub w_kappa: f64,
    pub dsc: f64,
    pub w_dsc: f64,
    pub degenerate: bool,
}

pub fn pair_metrics_masks(
    i: &Mask,
    p_i: f64,
    j: &Mask,
    p_j: f64,
) -> Result<PairMetrics, AgreementError> {
    let plain = confusion(i, j)?;
    let weighted = weighted_confusion_masks(i, p_i, j, p_j)?;
    let k = cohen_kappa(&plain)?;
    let wk = cohen_kappa(&weighted)?;
    Ok(PairMetrics {
        kappa: k.value,
        w_kappa: wk.value,
        dsc: dsc_from_sums(&plain),
        w_dsc: dsc_from_sums(&weighted),
        degenerate: k.degenerate || wk.degenerate,
    })
}

pub fn pair_metrics(i: &Annotation, j: &Annotation) -> Result<PairMetrics, AgreementError> {
    pair_metrics_masks(&i.mask.grid, i.weight(), &j.mask.grid, j.weight())
}
