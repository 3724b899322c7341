//! Inter-annotator agreement between lesion masks and the annotation
//! curation protocol built on it.

use thiserror::Error;

use crate::mask::LesionType;

pub mod metrics;
pub mod protocol;
pub mod report;

pub use metrics::{
    cohen_kappa, confusion, dsc, dsc_from_sums, pair_metrics, pair_metrics_masks, weighted_confusion,
    weighted_confusion_masks, weighted_dsc, ConfusionSums, Kappa, PairMetrics,
};
pub use protocol::{
    detect_outliers, overall_agreement, overall_from_type_averages, pairwise_matrix,
    OverallAgreement, PairwiseMatrix, ProtocolThresholds, Verdict,
};
pub use report::{report, AgreementReport, AverageRow, ReportRow};

#[derive(Debug, Error, PartialEq)]
pub enum AgreementError {
    #[error("mask dimensions differ: {first:?} vs {second:?}")]
    DimensionMismatch { first: (u32, u32), second: (u32, u32) },
    #[error("pixel weight {0} is outside [0, 1]")]
    WeightOutOfRange(f64),
    #[error("agreement table is empty")]
    EmptyTable,
    #[error("{lesion}: {found} annotation(s), at least 2 are needed")]
    TooFewAnnotations { lesion: LesionType, found: usize },
    #[error("annotator {annotator:?} has more than one {lesion} mask")]
    DuplicateAnnotation { annotator: String, lesion: LesionType },
    #[error("invalid threshold: {0}")]
    InvalidThreshold(String),
}
