//! Binary lesion masks, lesion types and weighted annotations.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::{Channels, RasterImage};

#[derive(Debug, Error, PartialEq)]
pub enum MaskError {
    #[error("mask dimensions {0}x{1} do not match {2}x{3}")]
    DimensionMismatch(u32, u32, u32, u32),
    #[error("mask data length {actual} does not match {width}x{height}")]
    LengthMismatch {
        width: u32,
        height: u32,
        actual: usize,
    },
    #[error("{field} must lie in [0, 1], got {value}")]
    WeightOutOfRange { field: &'static str, value: f64 },
    #[error("unknown lesion type {0:?}; expected EX, SE, HA or MA")]
    UnknownLesion(String),
    #[error("unknown {kind} band {label:?}")]
    UnknownBand { kind: &'static str, label: String },
}

/// The four annotated diabetic-retinopathy lesion classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LesionType {
    /// Hard exudates.
    EX,
    /// Haemorrhages.
    HA,
    /// Microaneurysms.
    MA,
    /// Soft exudates (cotton-wool spots).
    SE,
}

impl LesionType {
    pub const ALL: [LesionType; 4] = [LesionType::EX, LesionType::HA, LesionType::MA, LesionType::SE];

    pub fn as_str(self) -> &'static str {
        match self {
            LesionType::EX => "EX",
            LesionType::SE => "SE",
            LesionType::HA => "HA",
            LesionType::MA => "MA",
        }
    }
}

impl fmt::Display for LesionType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LesionType {
    type Err = MaskError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "EX" => Ok(LesionType::EX),
            "SE" => Ok(LesionType::SE),
            "HA" => Ok(LesionType::HA),
            "MA" => Ok(LesionType::MA),
            _ => Err(MaskError::UnknownLesion(s.to_string())),
        }
    }
}

/// Row-major binary pixel grid.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Mask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl Mask {
    pub fn empty(width: u32, height: u32) -> Self {
        Mask {
            width,
            height,
            bits: vec![false; width as usize * height as usize],
        }
    }

    pub fn from_bits(width: u32, height: u32, bits: Vec<bool>) -> Result<Self, MaskError> {
        if bits.len() != width as usize * height as usize {
            return Err(MaskError::LengthMismatch {
                width,
                height,
                actual: bits.len(),
            });
        }
        Ok(Mask {
            width,
            height,
            bits,
        })
    }

    pub fn from_fn(width: u32, height: u32, f: impl Fn(u32, u32) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Mask {
            width,
            height,
            bits,
        }
    }

    /// Binarizes a single-channel raster: samples above 127 are foreground.
    pub fn from_gray(img: &RasterImage) -> Result<Self, MaskError> {
        if img.channels() != Channels::Gray {
            return Err(MaskError::LengthMismatch {
                width: img.width(),
                height: img.height(),
                actual: img.data().len(),
            });
        }
        Ok(Mask {
            width: img.width(),
            height: img.height(),
            bits: img.data().iter().map(|&v| v > 127).collect(),
        })
    }

    /// 0 for background, 255 for foreground.
    pub fn to_gray(&self) -> RasterImage {
        let data = self.bits.iter().map(|&b| if b { 255 } else { 0 }).collect();
        RasterImage::new(self.width, self.height, Channels::Gray, data)
            .expect("mask dimensions are positive")
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: bool) {
        let w = self.width as usize;
        self.bits[y as usize * w + x as usize] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// True when every foreground pixel of `self` is foreground in `other`.
    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.dims() == other.dims()
            && self
                .bits
                .iter()
                .zip(&other.bits)
                .all(|(&a, &b)| !a || b)
    }

    pub fn ensure_dims(&self, width: u32, height: u32) -> Result<(), MaskError> {
        if self.dims() != (width, height) {
            return Err(MaskError::DimensionMismatch(
                self.width, self.height, width, height,
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LesionMask {
    pub lesion: LesionType,
    pub grid: Mask,
}

/// One annotator's mask for one lesion type on one image, with the weights
/// that scale its foreground pixels in the agreement statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub annotator_id: String,
    pub image_id: String,
    pub mask: LesionMask,
    confidence: f64,
    expertise: f64,
}

impl Annotation {
    pub fn new(
        annotator_id: impl Into<String>,
        image_id: impl Into<String>,
        mask: LesionMask,
        confidence: f64,
        expertise: f64,
    ) -> Result<Self, MaskError> {
        check_unit("confidence", confidence)?;
        check_unit("expertise", expertise)?;
        Ok(Annotation {
            annotator_id: annotator_id.into(),
            image_id: image_id.into(),
            mask,
            confidence,
            expertise,
        })
    }

    pub fn lesion(&self) -> LesionType {
        self.mask.lesion
    }

    pub fn confidence(&self) -> f64 {
        self.confidence
    }

    pub fn expertise(&self) -> f64 {
        self.expertise
    }

    /// Per-pixel weight `confidence × expertise`.
    pub fn weight(&self) -> f64 {
        self.confidence * self.expertise
    }
}

pub(crate) fn check_unit(field: &'static str, value: f64) -> Result<(), MaskError> {
    if !(0.0..=1.0).contains(&value) {
        return Err(MaskError::WeightOutOfRange { field, value });
    }
    Ok(())
}

/// Half-open band `[low, high)` of a labelled weight scale (the top band is closed).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Band {
    pub label: &'static str,
    pub low: f64,
    pub high: f64,
}

impl Band {
    pub fn midpoint(&self) -> f64 {
        (self.low + self.high) / 2.0
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.low && (v < self.high || (self.high >= 1.0 && v <= 1.0))
    }
}

pub const CONFIDENCE_BANDS: [Band; 5] = [
    Band { label: "very low", low: 0.0, high: 0.2 },
    Band { label: "low", low: 0.2, high: 0.4 },
    Band { label: "medium", low: 0.4, high: 0.6 },
    Band { label: "high", low: 0.6, high: 0.8 },
    Band { label: "very high", low: 0.8, high: 1.0 },
];

pub const EXPERTISE_BANDS: [Band; 5] = [
    Band { label: "no medical background", low: 0.0, high: 0.1 },
    Band { label: "medical student", low: 0.1, high: 0.3 },
    Band { label: "doctor in another specialty", low: 0.3, high: 0.5 },
    Band { label: "resident/junior ophthalmologist", low: 0.5, high: 0.9 },
    Band { label: "expert ophthalmologist", low: 0.9, high: 1.0 },
];

fn find_band(
    bands: &'static [Band],
    kind: &'static str,
    label: &str,
) -> Result<&'static Band, MaskError> {
    let norm = label.trim().to_ascii_lowercase().replace(['_', '-'], " ");
    bands
        .iter()
        .find(|b| {
            b.label == norm
                || b.label.split('/').any(|part| part == norm)
                || b.label.starts_with(&format!("{norm} "))
        })
        .ok_or_else(|| MaskError::UnknownBand {
            kind,
            label: label.to_string(),
        })
}

pub fn confidence_band(label: &str) -> Result<&'static Band, MaskError> {
    find_band(&CONFIDENCE_BANDS, "confidence", label)
}

/// Accepts the full label or its leading word(s), e.g. "resident" or "expert".
pub fn expertise_band(label: &str) -> Result<&'static Band, MaskError> {
    find_band(&EXPERTISE_BANDS, "expertise", label)
}
