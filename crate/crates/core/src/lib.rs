//! Curation toolkit for diabetic-retinopathy fundus photograph corpora.
//!
//! The crate scores image quality with an explainable feature-based
//! classifier, enhances retained images, cleans machine-suggested lesion
//! masks, and measures confidence- and expertise-weighted inter-annotator
//! agreement to decide which annotations and images enter a training set.

pub mod agreement;
pub mod classifier;
pub mod config;
pub mod enhance;
pub mod filters;
pub mod features;
pub mod io;
pub mod manifest;
pub mod pipeline;
pub mod postprocess;
pub mod mask;
pub mod raster;
pub mod service;
pub mod tiling;

pub use mask::{Annotation, LesionMask, LesionType, Mask};
pub use raster::{Channels, CropBox, Plane, RasterImage};
