//! Lesion-visibility enhancement: black-margin crop, contrast-limited
//! adaptive histogram equalization of the LAB lightness, gamma correction.

use std::sync::LazyLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{crop_black_margins, DEFAULT_DARK_THRESHOLD};
use crate::raster::{Channels, Plane, RasterImage};

#[derive(Debug, Error, PartialEq)]
pub enum EnhanceError {
    #[error("invalid enhancement parameter: {0}")]
    InvalidParams(String),
    #[error("image {width}x{height} is smaller than the {cols}x{rows} tile grid")]
    ImageSmallerThanGrid { width: u32, height: u32, cols: u32, rows: u32 },
    #[error("tile ({col}, {row}) has {pixels} pixel(s), at least 4 are needed")]
    DegenerateTile { col: u32, row: u32, pixels: usize },
    #[error("expected a single-channel image")]
    NotGray,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnhancementParams {
    /// Histogram clip limit as a multiple of the uniform bin height.
    /// `1.0` flattens every tile histogram; infinity disables clipping.
    pub clahe_clip: f64,
    /// (cols, rows)
    pub tile_grid: (u32, u32),
    pub gamma: f64,
}

impl Default for EnhancementParams {
    fn default() -> Self {
        Self {
            clahe_clip: 3.0,
            tile_grid: (8, 8),
            gamma: 0.8,
        }
    }
}

impl EnhancementParams {
    pub fn validate(&self) -> Result<(), EnhanceError> {
        check_clip(self.clahe_clip)?;
        check_grid(self.tile_grid)?;
        check_gamma(self.gamma)
    }
}

fn check_clip(clip: f64) -> Result<(), EnhanceError> {
    if clip.is_nan() || clip < 1.0 {
        return Err(EnhanceError::InvalidParams(format!("clip {clip} must be at least 1")));
    }
    Ok(())
}

fn check_grid((cols, rows): (u32, u32)) -> Result<(), EnhanceError> {
    if cols == 0 || rows == 0 {
        return Err(EnhanceError::InvalidParams(format!("tile grid {cols}x{rows}")));
    }
    Ok(())
}

fn check_gamma(gamma: f64) -> Result<(), EnhanceError> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(EnhanceError::InvalidParams(format!("gamma {gamma} must be positive")));
    }
    Ok(())
}

/// Clips `hist` at `limit` and spreads the excess uniformly over all bins,
/// repeating until no bin exceeds the limit. The fixed point is
/// `min(h + t, limit)` with `t` chosen so that the total is preserved.
fn clip_histogram(hist: &[f64; 256], limit: f64) -> [f64; 256] {
    let total: f64 = hist.iter().sum();
    if hist.iter().all(|&h| h <= limit) {
        return *hist;
    }
    if 256.0 * limit <= total {
        return [total / 256.0; 256];
    }
    let mass = |t: f64| hist.iter().map(|&h| (h + t).min(limit)).sum::<f64>();
    let (mut lo, mut hi) = (0.0, limit);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mass(mid) < total {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hist.map(|h| (h + hi).min(limit))
}

/// Equalization lookup table of one tile.
fn tile_mapping(hist: &[f64; 256], clip: f64) -> [u8; 256] {
    let n: f64 = hist.iter().sum();
    let h = if clip.is_finite() {
        clip_histogram(hist, clip * n / 256.0)
    } else {
        *hist
    };
    let cdf_min = h.iter().copied().find(|&v| v > 0.0).unwrap_or(0.0);
    let mut map = [0u8; 256];
    let mut cdf = 0.0;
    for (v, &count) in h.iter().enumerate() {
        cdf += count;
        map[v] = if n - cdf_min <= 0.0 {
            0
        } else {
            (255.0 * (cdf - cdf_min) / (n - cdf_min)).round().clamp(0.0, 255.0) as u8
        };
    }
    map
}

/// Tile edges along one axis: `[i·len/k, (i+1)·len/k)`.
fn edges(len: u32, k: u32) -> Vec<u32> {
    (0..=k).map(|i| (i as u64 * len as u64 / k as u64) as u32).collect()
}

/// Neighbouring tile indices and the weight of the second one for a pixel
/// coordinate, interpolating between tile centres and clamping beyond them.
fn interp(pos: u32, centres: &[f64]) -> (usize, usize, f64) {
    let p = pos as f64;
    let last = centres.len() - 1;
    if p <= centres[0] {
        return (0, 0, 0.0);
    }
    if p >= centres[last] {
        return (last, last, 0.0);
    }
    let i = centres.partition_point(|&c| c <= p) - 1;
    let f = (p - centres[i]) / (centres[i + 1] - centres[i]);
    (i, i + 1, f)
}

struct TileMaps {
    cols: usize,
    maps: Vec<[u8; 256]>,
    cx: Vec<f64>,
    cy: Vec<f64>,
}

fn build_maps(
    width: u32,
    height: u32,
    bins: &[u8],
    clip: f64,
    grid: (u32, u32),
) -> Result<TileMaps, EnhanceError> {
    check_clip(clip)?;
    check_grid(grid)?;
    let (cols, rows) = grid;
    if width < cols || height < rows {
        return Err(EnhanceError::ImageSmallerThanGrid { width, height, cols, rows });
    }
    let ex = edges(width, cols);
    let ey = edges(height, rows);
    for row in 0..rows {
        for col in 0..cols {
            let pixels = ((ex[col as usize + 1] - ex[col as usize])
                * (ey[row as usize + 1] - ey[row as usize])) as usize;
            if pixels < 4 {
                return Err(EnhanceError::DegenerateTile { col, row, pixels });
            }
        }
    }
    let maps = (0..(cols * rows) as usize)
        .into_par_iter()
        .map(|t| {
            let (col, row) = (t % cols as usize, t / cols as usize);
            let mut hist = [0f64; 256];
            for y in ey[row]..ey[row + 1] {
                let start = (y * width) as usize;
                for &b in &bins[start + ex[col] as usize..start + ex[col + 1] as usize] {
                    hist[b as usize] += 1.0;
                }
            }
            tile_mapping(&hist, clip)
        })
        .collect();
    let centres = |e: &[u32]| -> Vec<f64> {
        e.windows(2).map(|w| (w[0] + w[1]) as f64 / 2.0 - 0.5).collect()
    };
    Ok(TileMaps {
        cols: cols as usize,
        maps,
        cx: centres(&ex),
        cy: centres(&ey),
    })
}

impl TileMaps {
    /// Mapped value of `v` in tile `t`, linear between adjacent table
    /// entries so fractional inputs keep an identity table exact.
    fn lookup(&self, t: usize, v: f64) -> f64 {
        let map = &self.maps[t];
        let v = v.clamp(0.0, 255.0);
        let lo = v.floor() as usize;
        let f = v - lo as f64;
        if f == 0.0 || lo == 255 {
            return map[lo] as f64;
        }
        map[lo] as f64 * (1.0 - f) + map[lo + 1] as f64 * f
    }

    fn apply(&self, x: u32, y: u32, v: f64) -> f64 {
        let (x0, x1, fx) = interp(x, &self.cx);
        let (y0, y1, fy) = interp(y, &self.cy);
        let at = |tx: usize, ty: usize| self.lookup(ty * self.cols + tx, v);
        let top = at(x0, y0) * (1.0 - fx) + at(x1, y0) * fx;
        let bottom = at(x0, y1) * (1.0 - fx) + at(x1, y1) * fx;
        top * (1.0 - fy) + bottom * fy
    }
}

/// Per-tile lookup tables of a grayscale image in row-major tile order.
pub fn tile_mappings(
    channel: &RasterImage,
    clip: f64,
    grid: (u32, u32),
) -> Result<Vec<[u8; 256]>, EnhanceError> {
    if channel.channels() != Channels::Gray {
        return Err(EnhanceError::NotGray);
    }
    Ok(build_maps(channel.width(), channel.height(), channel.data(), clip, grid)?.maps)
}

/// Contrast-limited adaptive histogram equalization of a grayscale image.
/// `clip = f64::INFINITY` with a 1×1 grid is plain histogram equalization.
pub fn clahe(channel: &RasterImage, clip: f64, grid: (u32, u32)) -> Result<RasterImage, EnhanceError> {
    if channel.channels() != Channels::Gray {
        return Err(EnhanceError::NotGray);
    }
    let (w, h) = (channel.width(), channel.height());
    let maps = build_maps(w, h, channel.data(), clip, grid)?;
    let mut out = vec![0u8; channel.data().len()];
    out.par_chunks_mut(w as usize).enumerate().for_each(|(y, row)| {
        for (x, o) in row.iter_mut().enumerate() {
            let v = channel.data()[y * w as usize + x] as f64;
            *o = maps.apply(x as u32, y as u32, v).round().clamp(0.0, 255.0) as u8;
        }
    });
    Ok(RasterImage::new(w, h, Channels::Gray, out).expect("same geometry"))
}

/// CLAHE on a real-valued plane with samples in `[0, 255]`. Histograms use
/// the rounded samples; the output is not rounded.
pub fn clahe_plane(plane: &Plane, clip: f64, grid: (u32, u32)) -> Result<Plane, EnhanceError> {
    let bins: Vec<u8> = plane.data.iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect();
    let maps = build_maps(plane.width, plane.height, &bins, clip, grid)?;
    let w = plane.width as usize;
    let mut out = vec![0f64; plane.data.len()];
    out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for (x, o) in row.iter_mut().enumerate() {
            *o = maps.apply(x as u32, y as u32, plane.data[y * w + x]);
        }
    });
    Ok(Plane { width: plane.width, height: plane.height, data: out })
}

pub fn gamma_lut(gamma: f64) -> Result<[u8; 256], EnhanceError> {
    check_gamma(gamma)?;
    let mut lut = [0u8; 256];
    for (v, o) in lut.iter_mut().enumerate() {
        *o = (255.0 * (v as f64 / 255.0).powf(gamma)).round() as u8;
    }
    Ok(lut)
}

/// `round(255 · (v/255)^gamma)` on every sample.
pub fn gamma_correct(img: &RasterImage, gamma: f64) -> Result<RasterImage, EnhanceError> {
    let lut = gamma_lut(gamma)?;
    let data = img.data().iter().map(|&v| lut[v as usize]).collect();
    Ok(RasterImage::new(img.width(), img.height(), img.channels(), data).expect("same geometry"))
}

const RGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
];

static XYZ_TO_RGB: LazyLock<[[f64; 3]; 3]> = LazyLock::new(|| invert3(&RGB_TO_XYZ));

/// D65 reference white as the image of linear RGB white, so neutral greys
/// get a = b = 0.
static WHITE: LazyLock<[f64; 3]> = LazyLock::new(|| RGB_TO_XYZ.map(|r| r.iter().sum()));

fn invert3(m: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let c = |r: usize, k: usize| {
        let (r1, r2) = ((r + 1) % 3, (r + 2) % 3);
        let (k1, k2) = ((k + 1) % 3, (k + 2) % 3);
        m[r1][k1] * m[r2][k2] - m[r1][k2] * m[r2][k1]
    };
    let det = m[0][0] * c(0, 0) + m[0][1] * c(0, 1) + m[0][2] * c(0, 2);
    let mut inv = [[0.0; 3]; 3];
    for (r, row) in inv.iter_mut().enumerate() {
        for (k, v) in row.iter_mut().enumerate() {
            *v = c(k, r) / det;
        }
    }
    inv
}

fn mul3(m: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    m.map(|r| r[0] * v[0] + r[1] * v[1] + r[2] * v[2])
}

fn srgb_decode(c: f64) -> f64 {
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn srgb_encode(c: f64) -> f64 {
    if c <= 0.0031308 {
        12.92 * c
    } else {
        1.055 * c.powf(1.0 / 2.4) - 0.055
    }
}

const DELTA: f64 = 6.0 / 29.0;

fn lab_f(t: f64) -> f64 {
    if t > DELTA * DELTA * DELTA {
        t.cbrt()
    } else {
        t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
    }
}

fn lab_finv(f: f64) -> f64 {
    if f > DELTA {
        f * f * f
    } else {
        3.0 * DELTA * DELTA * (f - 4.0 / 29.0)
    }
}

/// 8-bit sRGB to CIE L*a*b* under D65; L in `[0, 100]`.
pub fn srgb_to_lab(rgb: [u8; 3]) -> [f64; 3] {
    let lin = rgb.map(|c| srgb_decode(c as f64 / 255.0));
    let xyz = mul3(&RGB_TO_XYZ, lin);
    let w = *WHITE;
    let [fx, fy, fz] = [lab_f(xyz[0] / w[0]), lab_f(xyz[1] / w[1]), lab_f(xyz[2] / w[2])];
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

/// Inverse of [`srgb_to_lab`], clamped to the sRGB gamut and rounded.
pub fn lab_to_srgb(lab: [f64; 3]) -> [u8; 3] {
    let fy = (lab[0] + 16.0) / 116.0;
    let fx = fy + lab[1] / 500.0;
    let fz = fy - lab[2] / 200.0;
    let w = *WHITE;
    let xyz = [lab_finv(fx) * w[0], lab_finv(fy) * w[1], lab_finv(fz) * w[2]];
    mul3(&XYZ_TO_RGB, xyz).map(|c| (255.0 * srgb_encode(c.clamp(0.0, 1.0))).round().clamp(0.0, 255.0) as u8)
}

fn to_rgb(img: &RasterImage) -> RasterImage {
    match img.channels() {
        Channels::Rgb => img.clone(),
        Channels::Gray => {
            let data = img.data().iter().flat_map(|&v| [v, v, v]).collect();
            RasterImage::new(img.width(), img.height(), Channels::Rgb, data).expect("same geometry")
        }
    }
}

/// Crops the black margin, equalizes the LAB lightness with CLAHE and applies
/// gamma to each RGB channel. Grayscale input is treated as neutral RGB.
pub fn enhance(img: &RasterImage, params: &EnhancementParams) -> Result<RasterImage, EnhanceError> {
    params.validate()?;
    let cropped = crop_black_margins(&to_rgb(img), DEFAULT_DARK_THRESHOLD).image;
    let (w, h) = (cropped.width(), cropped.height());
    let lab: Vec<[f64; 3]> = cropped.rgb_pixels().map(srgb_to_lab).collect();
    let lightness = Plane {
        width: w,
        height: h,
        data: lab.iter().map(|p| p[0] * 2.55).collect(),
    };
    let equalized = clahe_plane(&lightness, params.clahe_clip, params.tile_grid)?;
    let lut = gamma_lut(params.gamma)?;
    let data: Vec<u8> = lab
        .par_iter()
        .zip(equalized.data.par_iter())
        .flat_map_iter(|(p, &l)| lab_to_srgb([l / 2.55, p[1], p[2]]).map(|c| lut[c as usize]))
        .collect();
    Ok(RasterImage::new(w, h, Channels::Rgb, data).expect("same geometry"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::sharpness;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ramp(w: u32, h: u32) -> RasterImage {
        RasterImage::from_fn_gray(w, h, |x, y| ((x + y * w) * 255 / (w * h - 1)) as u8)
    }

    fn random_gray(rng: &mut ChaCha8Rng, w: u32, h: u32) -> RasterImage {
        let data = (0..w * h).map(|_| rng.gen()).collect();
        RasterImage::new(w, h, Channels::Gray, data).unwrap()
    }

    /// Dark-red disc on black with a few vessels only slightly darker than
    /// the background.
    fn low_contrast_fundus() -> RasterImage {
        RasterImage::from_fn_rgb(128, 128, |x, y| {
            let (dx, dy) = (x as f64 - 64.0, y as f64 - 64.0);
            if dx * dx + dy * dy > 60.0 * 60.0 {
                return [0, 0, 0];
            }
            let vessel = (y as i64 - 64 - (x as i64 - 64) / 3).abs() < 2
                || (x as i64 - 40).abs() < 2
                || (x as i64 + y as i64 - 150).abs() < 2;
            let base = [120u8, 62, 30];
            if vessel {
                base.map(|c| c + 10)
            } else {
                base
            }
        })
    }

    #[test]
    fn gamma_values() {
        let lut = gamma_lut(0.5).unwrap();
        assert_eq!(lut[64], 128);
        assert_eq!(lut[0], 0);
        assert_eq!(lut[255], 255);
        let id = gamma_lut(1.0).unwrap();
        assert!(id.iter().enumerate().all(|(v, &o)| o as usize == v));
        assert!(gamma_lut(0.8).unwrap()[100] > 100);
        assert!(matches!(gamma_lut(0.0), Err(EnhanceError::InvalidParams(_))));
        assert!(gamma_lut(f64::NAN).is_err());
    }

    #[test]
    fn flat_clahe_on_ramp_is_identity() {
        for (w, h, grid) in [(64, 64, (8, 8)), (50, 37, (3, 5)), (256, 4, (1, 1))] {
            let img = ramp(w, h);
            let out = clahe(&img, 1.0, grid).unwrap();
            for (a, b) in img.data().iter().zip(out.data()) {
                assert!((*a as i32 - *b as i32).abs() <= 1);
            }
        }
    }

    #[test]
    fn constant_tile_maps_to_zero() {
        let img = RasterImage::filled(16, 16, Channels::Gray, 90);
        let out = clahe(&img, f64::INFINITY, (2, 2)).unwrap();
        assert!(out.data().iter().all(|&v| v == 0));
    }

    #[test]
    fn plain_equalization_special_case() {
        // two levels split 3:1, cdf_min = 12 of 16
        let img = RasterImage::from_fn_gray(4, 4, |x, _| if x < 3 { 10 } else { 200 });
        let out = clahe(&img, f64::INFINITY, (1, 1)).unwrap();
        assert_eq!(out.pixel(0, 0)[0], 0);
        assert_eq!(out.pixel(3, 0)[0], 255);
    }

    #[test]
    fn clip_redistribution_preserves_mass() {
        let mut hist = [0f64; 256];
        hist[3] = 900.0;
        hist[100] = 100.0;
        let limit = 3.0 * 1000.0 / 256.0;
        let h = clip_histogram(&hist, limit);
        assert!((h.iter().sum::<f64>() - 1000.0).abs() < 1e-6);
        assert!(h.iter().all(|&v| v <= limit + 1e-12));
        assert_eq!(h[3], limit);
        assert_eq!(clip_histogram(&hist, 1000.0 / 256.0), [1000.0 / 256.0; 256]);
    }

    #[test]
    fn grid_errors() {
        let img = ramp(10, 10);
        assert!(matches!(
            clahe(&img, 2.0, (11, 2)),
            Err(EnhanceError::ImageSmallerThanGrid { .. })
        ));
        assert!(matches!(
            clahe(&img, 2.0, (6, 6)),
            Err(EnhanceError::DegenerateTile { .. })
        ));
        assert!(clahe(&img, 0.5, (2, 2)).is_err());
        assert!(clahe(&img, 2.0, (0, 2)).is_err());
        let rgb = RasterImage::filled(10, 10, Channels::Rgb, 4);
        assert_eq!(clahe(&rgb, 2.0, (1, 1)), Err(EnhanceError::NotGray));
    }

    #[test]
    fn lab_round_trip_and_neutrals() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20_000 {
            let c: [u8; 3] = [rng.gen(), rng.gen(), rng.gen()];
            let back = lab_to_srgb(srgb_to_lab(c));
            for k in 0..3 {
                assert!((c[k] as i32 - back[k] as i32).abs() <= 1, "{c:?} {back:?}");
            }
        }
        let lab = srgb_to_lab([128, 128, 128]);
        assert!(lab[1].abs() < 1e-9 && lab[2].abs() < 1e-9);
        assert!((srgb_to_lab([255, 255, 255])[0] - 100.0).abs() < 1e-9);
        assert_eq!(srgb_to_lab([0, 0, 0])[0], 0.0);
    }

    #[test]
    fn gamma_only_config_keeps_cropped_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let data = (0..40 * 30 * 3).map(|_| rng.gen_range(16..=255)).collect();
        let img = RasterImage::new(40, 30, Channels::Rgb, data).unwrap();
        let params = EnhancementParams { clahe_clip: 1.0, tile_grid: (4, 3), gamma: 1.0 };
        let out = enhance(&img, &params).unwrap();
        for (a, b) in img.data().iter().zip(out.data()) {
            assert!((*a as i32 - *b as i32).abs() <= 1);
        }
    }

    #[test]
    fn all_black_stays_black() {
        let img = RasterImage::filled(32, 32, Channels::Rgb, 0);
        let out = enhance(&img, &EnhancementParams::default()).unwrap();
        assert_eq!((out.width(), out.height()), (32, 32));
        assert!(out.data().iter().all(|&v| v == 0));
    }

    #[test]
    fn output_has_crop_dimensions() {
        let img = low_contrast_fundus();
        let out = enhance(&img, &EnhancementParams::default()).unwrap();
        let crop = crop_black_margins(&img, DEFAULT_DARK_THRESHOLD);
        assert_eq!((out.width(), out.height()), (crop.crop.width, crop.crop.height));
        assert_eq!(enhance(&img, &EnhancementParams::default()).unwrap(), out);
    }

    #[test]
    fn enhancement_sharpens_low_contrast_fundus() {
        let img = low_contrast_fundus();
        let before = sharpness(&crop_black_margins(&img, DEFAULT_DARK_THRESHOLD).image).unwrap();
        let after = sharpness(&enhance(&img, &EnhancementParams::default()).unwrap()).unwrap();
        assert!(after > before, "{before} -> {after}");
    }

    #[test]
    fn gray_input_is_accepted() {
        let img = ramp(32, 32);
        let out = enhance(&img, &EnhancementParams::default()).unwrap();
        assert_eq!(out.channels(), Channels::Rgb);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn gamma_is_monotone(gamma in 0.05f64..5.0) {
            let lut = gamma_lut(gamma).unwrap();
            prop_assert!(lut.windows(2).all(|p| p[0] <= p[1]));
        }

        #[test]
        fn tile_mappings_non_decreasing(seed in any::<u64>(), clip in 1.0f64..8.0, cols in 1u32..5, rows in 1u32..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let img = random_gray(&mut rng, 24, 20);
            for map in tile_mappings(&img, clip, (cols, rows)).unwrap() {
                prop_assert!(map.windows(2).all(|p| p[0] <= p[1]));
            }
        }

        #[test]
        fn second_pass_keeps_dimensions(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (w, h) = (rng.gen_range(16..40), rng.gen_range(16..40));
            let img = RasterImage::from_fn_rgb(w, h, |x, y| {
                if x < 3 || y < 2 { [0, 0, 0] } else { [((x * 7 + y * 3) % 200 + 40) as u8, 60, 30] }
            });
            let params = EnhancementParams { tile_grid: (2, 2), ..Default::default() };
            let once = enhance(&img, &params).unwrap();
            let twice = enhance(&once, &params).unwrap();
            prop_assert_eq!((once.width(), once.height()), (twice.width(), twice.height()));
        }
    }
}
