//! Clean-up of machine-predicted lesion masks before they are shown to
//! annotators as suggestions.
//!
//! Bright lesions (EX) keep pixels that stand out above their neighbourhood in
//! HSV value and look whitish or yellowish; dark lesions (HA, MA) keep pixels
//! darker than their neighbourhood, then lose specks to a morphological
//! opening. SE masks pass through unchanged. Every filter only removes
//! foreground.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::filters::{disk_offsets, WindowStats};
use crate::mask::{LesionType, Mask};
use crate::raster::RasterImage;

#[derive(Debug, Error, PartialEq)]
pub enum PostprocessError {
    #[error("mask is {mask:?} but image is {image:?}")]
    DimensionMismatch { mask: (u32, u32), image: (u32, u32) },
    #[error("dark-lesion filtering applies to HA and MA, not {0}")]
    NotDarkLesion(LesionType),
    #[error("invalid post-processing parameter: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PostprocessParams {
    /// Odd side length of the square neighbourhood for local statistics.
    pub window: u32,
    pub k_bright: f64,
    pub k_dark: f64,
    /// Inclusive hue interval in degrees accepted as "yellowish" for EX.
    pub hue_range: (f64, f64),
    /// Saturation at or below which an EX pixel counts as "whitish", in [0, 1].
    pub sat_max: f64,
    pub open_radius_ma: u32,
    pub open_radius_ha: u32,
    pub open_radius_ex: u32,
    pub min_area: usize,
}

impl Default for PostprocessParams {
    fn default() -> Self {
        PostprocessParams {
            window: 25,
            k_bright: 1.0,
            k_dark: 1.0,
            hue_range: (20.0, 80.0),
            sat_max: 0.6,
            open_radius_ma: 1,
            open_radius_ha: 2,
            open_radius_ex: 2,
            min_area: 5,
        }
    }
}

impl PostprocessParams {
    pub fn validate(&self) -> Result<(), PostprocessError> {
        let bad = |m: String| Err(PostprocessError::InvalidParams(m));
        if self.window < 3 || self.window.is_multiple_of(2) {
            return bad(format!("window must be odd and >= 3, got {}", self.window));
        }
        let (lo, hi) = self.hue_range;
        if !(0.0..360.0).contains(&lo) || !(0.0..360.0).contains(&hi) || lo > hi {
            return bad(format!("hue range [{lo}, {hi}] must lie within [0, 360)"));
        }
        if !(0.0..=1.0).contains(&self.sat_max) {
            return bad(format!("sat_max {} must lie in [0, 1]", self.sat_max));
        }
        if self.k_bright < 0.0 || self.k_dark < 0.0 {
            return bad("k multipliers must be non-negative".into());
        }
        if self.min_area == 0 {
            return bad("min_area must be at least 1".into());
        }
        Ok(())
    }

    pub fn open_radius(&self, lesion: LesionType) -> u32 {
        match lesion {
            LesionType::MA => self.open_radius_ma,
            LesionType::HA => self.open_radius_ha,
            LesionType::EX | LesionType::SE => self.open_radius_ex,
        }
    }
}

/// Hue in degrees `[0, 360)`, saturation in `[0, 1]`, value in `[0, 255]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hsv {
    pub h: f64,
    pub s: f64,
    pub v: u8,
}

pub fn rgb_to_hsv(rgb: [u8; 3]) -> Hsv {
    let [r, g, b] = rgb;
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = f64::from(max - min);
    let s = if max == 0 { 0.0 } else { delta / f64::from(max) };
    let h = if delta == 0.0 {
        0.0
    } else {
        let (r, g, b) = (f64::from(r), f64::from(g), f64::from(b));
        let sector = if max as f64 == r {
            ((g - b) / delta).rem_euclid(6.0)
        } else if max as f64 == g {
            (b - r) / delta + 2.0
        } else {
            (r - g) / delta + 4.0
        };
        (60.0 * sector).rem_euclid(360.0)
    };
    Hsv { h, s, v: max }
}

pub fn hsv_to_rgb(hsv: Hsv) -> [u8; 3] {
    let v = f64::from(hsv.v);
    let c = v * hsv.s;
    let hp = hsv.h.rem_euclid(360.0) / 60.0;
    let x = c * (1.0 - (hp.rem_euclid(2.0) - 1.0).abs());
    let (r1, g1, b1) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    let q = |t: f64| (t + m).round().clamp(0.0, 255.0) as u8;
    [q(r1), q(g1), q(b1)]
}

fn check_dims(img: &RasterImage, mask: &Mask) -> Result<(), PostprocessError> {
    if (img.width(), img.height()) != mask.dims() {
        return Err(PostprocessError::DimensionMismatch {
            mask: mask.dims(),
            image: (img.width(), img.height()),
        });
    }
    Ok(())
}

/// Whether `v` lies strictly beyond `mean ± k·σ` of its window. Evaluated on
/// integer window sums: `n·v − Σ` compared against `k·sqrt(n·Σv² − (Σv)²)`.
fn exceeds(stats: &WindowStats, x: usize, y: usize, v: u8, k: f64, bright: bool) -> bool {
    let (s, q) = stats.sums(x, y);
    let n = stats.count();
    let spread = k * ((n * q) as f64 - (s as f64) * (s as f64)).max(0.0).sqrt();
    let diff = (n * u64::from(v)) as f64 - s as f64;
    if bright {
        diff > spread
    } else {
        -diff > spread
    }
}

fn value_channel(img: &RasterImage) -> Vec<u8> {
    img.rgb_pixels().map(|p| p[0].max(p[1]).max(p[2])).collect()
}

/// Keeps predicted EX pixels that are brighter than `mean + k_bright·σ` of
/// their neighbourhood and either low in saturation or within the yellow
/// hue range, then drops components smaller than `min_area`.
pub fn filter_ex(
    img: &RasterImage,
    mask: &Mask,
    params: &PostprocessParams,
) -> Result<Mask, PostprocessError> {
    params.validate()?;
    check_dims(img, mask)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let values = value_channel(img);
    let stats = WindowStats::new(&values, w, h, params.window as usize);
    let (hlo, hhi) = params.hue_range;
    let kept = Mask::from_fn(mask.width(), mask.height(), |x, y| {
        if !mask.get(x, y) {
            return false;
        }
        let (xu, yu) = (x as usize, y as usize);
        let px = img.pixel(x, y);
        let rgb = if px.len() == 1 { [px[0]; 3] } else { [px[0], px[1], px[2]] };
        let hsv = rgb_to_hsv(rgb);
        let colour_ok = hsv.s <= params.sat_max || (hsv.h >= hlo && hsv.h <= hhi);
        colour_ok && exceeds(&stats, xu, yu, values[yu * w + xu], params.k_bright, true)
    });
    Ok(remove_small_components(&kept, params.min_area))
}

/// Keeps predicted HA/MA pixels darker than `mean − k_dark·σ` of their
/// neighbourhood, opens with a disk and drops small components.
pub fn filter_dark(
    img: &RasterImage,
    mask: &Mask,
    lesion: LesionType,
    params: &PostprocessParams,
) -> Result<Mask, PostprocessError> {
    if !matches!(lesion, LesionType::HA | LesionType::MA) {
        return Err(PostprocessError::NotDarkLesion(lesion));
    }
    params.validate()?;
    check_dims(img, mask)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let values = value_channel(img);
    let stats = WindowStats::new(&values, w, h, params.window as usize);
    let kept = Mask::from_fn(mask.width(), mask.height(), |x, y| {
        let (xu, yu) = (x as usize, y as usize);
        mask.get(x, y) && exceeds(&stats, xu, yu, values[yu * w + xu], params.k_dark, false)
    });
    let opened = morphological_open(&kept, params.open_radius(lesion));
    Ok(remove_small_components(&opened, params.min_area))
}

/// Dispatches on lesion type; SE masks are returned unchanged.
pub fn postprocess(
    img: &RasterImage,
    mask: &Mask,
    lesion: LesionType,
    params: &PostprocessParams,
) -> Result<Mask, PostprocessError> {
    match lesion {
        LesionType::EX => filter_ex(img, mask, params),
        LesionType::HA | LesionType::MA => filter_dark(img, mask, lesion, params),
        LesionType::SE => {
            check_dims(img, mask)?;
            Ok(mask.clone())
        }
    }
}

/// Binary erosion by a disk; pixels outside the image count as background.
pub fn erode(mask: &Mask, radius: u32) -> Mask {
    let offs = disk_offsets(radius);
    let (w, h) = (mask.width() as i64, mask.height() as i64);
    Mask::from_fn(mask.width(), mask.height(), |x, y| {
        offs.iter().all(|&(dx, dy)| {
            let (nx, ny) = (x as i64 + dx, y as i64 + dy);
            nx >= 0 && ny >= 0 && nx < w && ny < h && mask.get(nx as u32, ny as u32)
        })
    })
}

pub fn dilate(mask: &Mask, radius: u32) -> Mask {
    let offs = disk_offsets(radius);
    let (w, h) = (mask.width() as i64, mask.height() as i64);
    Mask::from_fn(mask.width(), mask.height(), |x, y| {
        offs.iter().any(|&(dx, dy)| {
            let (nx, ny) = (x as i64 + dx, y as i64 + dy);
            nx >= 0 && ny >= 0 && nx < w && ny < h && mask.get(nx as u32, ny as u32)
        })
    })
}

/// Erosion followed by dilation with the same disk. Radius 0 is the identity.
pub fn morphological_open(mask: &Mask, radius: u32) -> Mask {
    if radius == 0 {
        return mask.clone();
    }
    dilate(&erode(mask, radius), radius)
}

/// 8-connected component labels; 0 is background, components count from 1.
pub fn label_components(mask: &Mask) -> (Vec<u32>, Vec<usize>) {
    let (w, h) = (mask.width() as i64, mask.height() as i64);
    let mut labels = vec![0u32; mask.len()];
    let mut areas = vec![0usize];
    let mut queue = VecDeque::new();
    for start in 0..mask.len() {
        if !mask.bits()[start] || labels[start] != 0 {
            continue;
        }
        let id = areas.len() as u32;
        let mut area = 0;
        labels[start] = id;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            area += 1;
            let (x, y) = ((i as i64) % w, (i as i64) / w);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w || ny >= h {
                        continue;
                    }
                    let j = (ny * w + nx) as usize;
                    if mask.bits()[j] && labels[j] == 0 {
                        labels[j] = id;
                        queue.push_back(j);
                    }
                }
            }
        }
        areas.push(area);
    }
    (labels, areas)
}

/// Removes 8-connected components with fewer than `min_area` pixels.
pub fn remove_small_components(mask: &Mask, min_area: usize) -> Mask {
    let (labels, areas) = label_components(mask);
    let bits = labels
        .iter()
        .map(|&l| l != 0 && areas[l as usize] >= min_area)
        .collect();
    Mask::from_bits(mask.width(), mask.height(), bits).expect("same dimensions")
}
