//! Handcrafted image-quality features for fundus photographs and ingestion of
//! externally computed vision-language blur/artifact scores.
//!
//! Every feature is computed on the photograph after removal of the black
//! margin that surrounds the circular fundus field.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::filters::{self, GaussOrder};
use crate::raster::{CropBox, Plane, RasterImage};

pub const DEFAULT_DARK_THRESHOLD: u8 = 15;
pub const DEFAULT_FRANGI_C_FLOOR: f64 = 10.0;

/// Column order of feature vectors, CSV files and model schemas.
pub const FEATURE_NAMES: [&str; 7] = [
    "brightness",
    "vesselness",
    "sharpness",
    "entropy",
    "peak_to_mean",
    "blurry",
    "artifacts",
];

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("image {width}x{height} is smaller than the {min}x{min} minimum for {feature}")]
    TooSmall {
        feature: &'static str,
        width: u32,
        height: u32,
        min: u32,
    },
    #[error("peak-to-mean is undefined for an all-zero image")]
    ZeroMean,
    #[error("exposure thresholds must satisfy under < over (got {under} and {over})")]
    BadExposureThresholds { under: f64, over: f64 },
    #[error("vesselness needs at least one positive scale")]
    NoScales,
    #[error("{feature}: {source}")]
    InFeature {
        feature: &'static str,
        #[source]
        source: Box<FeatureError>,
    },
}

#[derive(Debug, Error)]
pub enum VlmError {
    #[error("cannot read VLM score file {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed VLM score file {path}: {detail}")]
    Malformed { path: PathBuf, detail: String },
    #[error("image {image_id:?}: missing field {field:?}")]
    MissingField { image_id: String, field: &'static str },
    #[error("image {image_id:?}: {field} = {value} is outside [0, 1]")]
    OutOfRange {
        image_id: String,
        field: &'static str,
        value: f64,
    },
}

/// Probabilities of the degraded text prompt; higher means worse.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VlmScores {
    pub blurry: f64,
    pub artifacts: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityFeatures {
    pub brightness: f64,
    pub vesselness: f64,
    pub sharpness: f64,
    pub entropy: f64,
    pub peak_to_mean: f64,
    pub vlm: Option<VlmScores>,
}

impl QualityFeatures {
    /// Values in [`FEATURE_NAMES`] order, VLM scores appended when present.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = vec![
            self.brightness,
            self.vesselness,
            self.sharpness,
            self.entropy,
            self.peak_to_mean,
        ];
        if let Some(s) = self.vlm {
            v.push(s.blurry);
            v.push(s.artifacts);
        }
        v
    }

    pub fn names(&self) -> Vec<String> {
        let n = if self.vlm.is_some() { 7 } else { 5 };
        FEATURE_NAMES[..n].iter().map(|s| s.to_string()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Exposure {
    Under,
    Ok,
    Over,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub dark_threshold: u8,
    pub vessel_scales: Vec<f64>,
    pub tophat_radius: u32,
    /// Lower bound on the Frangi `c` parameter, in intensity units.
    pub frangi_c_floor: f64,
    pub under_exposure: f64,
    pub over_exposure: f64,
    pub compute_vesselness: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            dark_threshold: DEFAULT_DARK_THRESHOLD,
            vessel_scales: vec![1.0, 2.0, 3.0, 4.0],
            tophat_radius: 8,
            frangi_c_floor: DEFAULT_FRANGI_C_FLOOR,
            under_exposure: 50.0,
            over_exposure: 180.0,
            compute_vesselness: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cropped {
    pub image: RasterImage,
    pub crop: CropBox,
    /// No pixel exceeded the threshold; `image` is the full frame.
    pub degenerate: bool,
}

/// Minimal bounding box of pixels whose brightest channel exceeds
/// `dark_threshold`.
pub fn crop_black_margins(img: &RasterImage, dark_threshold: u8) -> Cropped {
    let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0u32, 0u32);
    let mut any = false;
    for y in 0..img.height() {
        for x in 0..img.width() {
            let peak = img.pixel(x, y).iter().copied().max().unwrap_or(0);
            if peak > dark_threshold {
                any = true;
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x);
                y1 = y1.max(y);
            }
        }
    }
    if !any {
        return Cropped {
            image: img.clone(),
            crop: CropBox::full(img.width(), img.height()),
            degenerate: true,
        };
    }
    let crop = CropBox {
        left: x0,
        top: y0,
        width: x1 - x0 + 1,
        height: y1 - y0 + 1,
    };
    Cropped {
        image: img.crop(crop).expect("bounding box lies inside the image"),
        crop,
        degenerate: false,
    }
}

/// Mean ITU-R 601 luma.
pub fn brightness(img: &RasterImage) -> f64 {
    img.luma().mean()
}

pub fn exposure_verdict(b: f64, under: f64, over: f64) -> Result<Exposure, FeatureError> {
    if under.partial_cmp(&over) != Some(std::cmp::Ordering::Less) {
        return Err(FeatureError::BadExposureThresholds { under, over });
    }
    Ok(if b < under {
        Exposure::Under
    } else if b > over {
        Exposure::Over
    } else {
        Exposure::Ok
    })
}

/// Per-pixel multiscale Frangi response for bright tubular structures.
///
/// Hessians come from scale-normalised Gaussian derivatives; `beta` is 0.5 and
/// `c` is half the largest Hessian Frobenius norm at each scale, but never
/// below `c_floor` so that faint structure is not stretched to full response.
pub fn frangi(plane: &Plane, scales: &[f64], c_floor: f64) -> Plane {
    const BETA: f64 = 0.5;
    let mut best = Plane::zeros(plane.width, plane.height);
    for &sigma in scales {
        let g = filters::gaussian_kernel(sigma, GaussOrder::Smooth);
        let d1 = filters::gaussian_kernel(sigma, GaussOrder::First);
        let d2 = filters::gaussian_kernel(sigma, GaussOrder::Second);
        let s2 = sigma * sigma;
        let hxx = filters::convolve_separable(plane, &d2, &g);
        let hyy = filters::convolve_separable(plane, &g, &d2);
        let hxy = filters::convolve_separable(plane, &d1, &d1);

        let eig: Vec<(f64, f64)> = (0..plane.data.len())
            .map(|i| {
                let (a, b, c) = (s2 * hxx.data[i], s2 * hxy.data[i], s2 * hyy.data[i]);
                let tmp = ((a - c) * (a - c) + 4.0 * b * b).sqrt();
                let mu1 = 0.5 * (a + c + tmp);
                let mu2 = 0.5 * (a + c - tmp);
                if mu1.abs() <= mu2.abs() {
                    (mu1, mu2)
                } else {
                    (mu2, mu1)
                }
            })
            .collect();
        let max_norm = eig
            .iter()
            .map(|(l1, l2)| (l1 * l1 + l2 * l2).sqrt())
            .fold(0.0, f64::max);
        if max_norm <= 0.0 {
            continue;
        }
        let c = (0.5 * max_norm).max(c_floor);
        for (i, &(l1, l2)) in eig.iter().enumerate() {
            if l2 >= 0.0 {
                continue;
            }
            let rb = l1 / l2;
            let s_sq = l1 * l1 + l2 * l2;
            let v = (-rb * rb / (2.0 * BETA * BETA)).exp() * (1.0 - (-s_sq / (2.0 * c * c)).exp());
            if v > best.data[i] {
                best.data[i] = v;
            }
        }
    }
    best
}

/// Mean of the top-hat → Frangi response over the whole (already cropped)
/// image. Uses the green channel of RGB input.
pub fn vesselness(
    img: &RasterImage,
    scales: &[f64],
    tophat_radius: u32,
    c_floor: f64,
) -> Result<f64, FeatureError> {
    let max_sigma = scales.iter().copied().fold(0.0, f64::max);
    if scales.is_empty() || max_sigma <= 0.0 || scales.iter().any(|s| *s <= 0.0) {
        return Err(FeatureError::NoScales);
    }
    let min = (2.0 * max_sigma).ceil() as u32 + 1;
    if img.width() < min || img.height() < min {
        return Err(FeatureError::TooSmall {
            feature: "vesselness",
            width: img.width(),
            height: img.height(),
            min,
        });
    }
    let th = filters::white_top_hat(&img.green(), tophat_radius);
    Ok(frangi(&th, scales, c_floor).mean())
}

/// Mean 3×3 Sobel gradient magnitude of the luma, border pixels excluded.
pub fn sharpness(img: &RasterImage) -> Result<f64, FeatureError> {
    let (w, h) = (img.width(), img.height());
    if w < 3 || h < 3 {
        return Err(FeatureError::TooSmall {
            feature: "sharpness",
            width: w,
            height: h,
            min: 3,
        });
    }
    let l = img.luma();
    let mut total = 0.0;
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let p = |dx: i32, dy: i32| l.get((x as i32 + dx) as u32, (y as i32 + dy) as u32);
            let gx = (p(1, -1) + 2.0 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2.0 * p(-1, 0) + p(-1, 1));
            let gy = (p(-1, 1) + 2.0 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2.0 * p(0, -1) + p(1, -1));
            total += (gx * gx + gy * gy).sqrt();
        }
    }
    Ok(total / ((w - 2) as f64 * (h - 2) as f64))
}

/// Shannon entropy in bits of the 256-bin histogram of the 8-bit luma.
pub fn entropy(img: &RasterImage) -> f64 {
    let gray = img.to_gray();
    let mut hist = [0u64; 256];
    for &v in gray.data() {
        hist[v as usize] += 1;
    }
    let n = gray.data().len() as f64;
    hist.iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum()
}

/// Maximum luma divided by mean luma.
pub fn peak_to_mean(img: &RasterImage) -> Result<f64, FeatureError> {
    let l = img.luma();
    let mean = l.mean();
    if mean <= 0.0 {
        return Err(FeatureError::ZeroMean);
    }
    Ok(l.max() / mean)
}

/// Reads a `{"image_id": {"blurry": p, "artifacts": p}}` sidecar. An empty
/// file yields an empty map.
pub fn ingest_vlm_scores(sidecar: impl AsRef<Path>) -> Result<BTreeMap<String, VlmScores>, VlmError> {
    let path = sidecar.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| VlmError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    parse_vlm_scores(&text, path)
}

pub fn parse_vlm_scores(text: &str, origin: &Path) -> Result<BTreeMap<String, VlmScores>, VlmError> {
    if text.trim().is_empty() {
        return Ok(BTreeMap::new());
    }
    let malformed = |detail: String| VlmError::Malformed {
        path: origin.to_path_buf(),
        detail,
    };
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| malformed(e.to_string()))?;
    let obj = value
        .as_object()
        .ok_or_else(|| malformed("top level must be an object keyed by image id".into()))?;
    let mut out = BTreeMap::new();
    for (id, entry) in obj {
        let field = |name: &'static str| -> Result<f64, VlmError> {
            let v = entry
                .get(name)
                .ok_or_else(|| VlmError::MissingField {
                    image_id: id.clone(),
                    field: name,
                })?
                .as_f64()
                .ok_or_else(|| malformed(format!("{id}.{name} is not a number")))?;
            if !(0.0..=1.0).contains(&v) {
                return Err(VlmError::OutOfRange {
                    image_id: id.clone(),
                    field: name,
                    value: v,
                });
            }
            Ok(v)
        };
        out.insert(
            id.clone(),
            VlmScores {
                blurry: field("blurry")?,
                artifacts: field("artifacts")?,
            },
        );
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureReport {
    pub features: QualityFeatures,
    pub crop: CropBox,
    /// Nothing brighter than the dark threshold; features use the full frame.
    pub degenerate_crop: bool,
    /// All-zero luma; `peak_to_mean` is reported as 1.
    pub zero_mean: bool,
    pub exposure: Exposure,
}

fn in_feature(feature: &'static str) -> impl Fn(FeatureError) -> FeatureError {
    move |e| FeatureError::InFeature {
        feature,
        source: Box::new(e),
    }
}

/// Crops once and computes every feature on the crop. VLM fields are filled
/// iff `scores` is given.
pub fn extract_features(
    img: &RasterImage,
    config: &FeatureConfig,
    scores: Option<VlmScores>,
) -> Result<FeatureReport, FeatureError> {
    let cropped = crop_black_margins(img, config.dark_threshold);
    let crop_img = &cropped.image;
    let b = brightness(crop_img);
    let exposure = exposure_verdict(b, config.under_exposure, config.over_exposure)?;
    let vessel = if config.compute_vesselness {
        vesselness(crop_img, &config.vessel_scales, config.tophat_radius, config.frangi_c_floor)
            .map_err(in_feature("vesselness"))?
    } else {
        0.0
    };
    let sharp = sharpness(crop_img).map_err(in_feature("sharpness"))?;
    let (ptm, zero_mean) = match peak_to_mean(crop_img) {
        Ok(v) => (v, false),
        Err(FeatureError::ZeroMean) => (1.0, true),
        Err(e) => return Err(in_feature("peak_to_mean")(e)),
    };
    Ok(FeatureReport {
        features: QualityFeatures {
            brightness: b,
            vesselness: vessel,
            sharpness: sharp,
            entropy: entropy(crop_img),
            peak_to_mean: ptm,
            vlm: scores,
        },
        crop: cropped.crop,
        degenerate_crop: cropped.degenerate,
        zero_mean,
        exposure,
    })
}
