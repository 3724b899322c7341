//! C interface to `fundus_curator`.
//!
//! Objects cross the boundary as opaque handles owned by the caller and
//! released with the matching `fc_*_free`. Every fallible call returns an
//! [`FcStatus`]; on failure [`fc_last_error`] describes what went wrong on the
//! calling thread. Panics never unwind into C: they surface as
//! `FC_STATUS_INTERNAL`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use fundus_curator::agreement::pair_metrics_masks;
use fundus_curator::classifier::ClassifierModel;
use fundus_curator::enhance::{enhance, EnhancementParams};
use fundus_curator::features::{extract_features, FeatureConfig};
use fundus_curator::io::{self, IoError};
use fundus_curator::postprocess::{postprocess, PostprocessParams};
use fundus_curator::{Channels, LesionType, Mask, RasterImage};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    NotFound = 3,
    UnsupportedFormat = 4,
    CorruptData = 5,
    Io = 6,
    DimensionMismatch = 7,
    Model = 8,
    Internal = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FcLesion {
    Ex = 0,
    Ha = 1,
    Ma = 2,
    Se = 3,
}

impl From<FcLesion> for LesionType {
    fn from(l: FcLesion) -> Self {
        match l {
            FcLesion::Ex => LesionType::EX,
            FcLesion::Ha => LesionType::HA,
            FcLesion::Ma => LesionType::MA,
            FcLesion::Se => LesionType::SE,
        }
    }
}

/// Decoded 8-bit image, gray or RGB.
pub struct FcImage(RasterImage);

/// Binary lesion mask.
pub struct FcMask(Mask);

/// Trained quality classifier.
pub struct FcModel(ClassifierModel);

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FcFeatures {
    pub brightness: f64,
    pub vesselness: f64,
    pub sharpness: f64,
    pub entropy: f64,
    pub peak_to_mean: f64,
    /// Nothing brighter than the dark threshold; the full frame was used.
    pub degenerate_crop: bool,
    /// All-zero luma; `peak_to_mean` is reported as 1.
    pub zero_mean: bool,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FcPairMetrics {
    pub kappa: f64,
    pub weighted_kappa: f64,
    pub dsc: f64,
    pub weighted_dsc: f64,
    /// Chance agreement was 1 and kappa fell back to its convention.
    pub degenerate: bool,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FcEnhanceParams {
    pub clahe_clip: f64,
    pub tile_cols: u32,
    pub tile_rows: u32,
    pub gamma: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(FcStatus, String);

impl Failure {
    fn invalid(msg: impl Into<String>) -> Self {
        Failure(FcStatus::InvalidArgument, msg.into())
    }
}

impl From<IoError> for Failure {
    fn from(e: IoError) -> Self {
        let status = match e {
            IoError::NotFound(_) => FcStatus::NotFound,
            IoError::UnsupportedFormat { .. } => FcStatus::UnsupportedFormat,
            IoError::Corrupt { .. } | IoError::MultiChannelMask(_) => FcStatus::CorruptData,
            IoError::Io { .. } | IoError::Encode(_) => FcStatus::Io,
        };
        Failure(status, e.to_string())
    }
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> FcStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FcStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(&format!("internal error: {msg}"));
            FcStatus::Internal
        }
    }
}

unsafe fn nonnull<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or_else(|| Failure(FcStatus::NullPointer, format!("{what} is null")))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut()
        .ok_or_else(|| Failure(FcStatus::NullPointer, format!("{what} is null")))
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Failure> {
    let s = nonnull(p, "path")?;
    let s = CStr::from_ptr(s)
        .to_str()
        .map_err(|_| Failure::invalid("path is not valid UTF-8"))?;
    Ok(PathBuf::from(s))
}

unsafe fn bytes_arg<'a>(data: *const u8, len: usize, what: &str) -> Result<&'a [u8], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    nonnull(data, what)?;
    Ok(std::slice::from_raw_parts(data, len))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL after a
/// successful one. Valid until the next `fc_*` call on the same thread.
#[no_mangle]
pub extern "C" fn fc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Decodes a PNG, JPEG, TIFF or BMP file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fc_image_load(path: *const c_char, out: *mut *mut FcImage) -> FcStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let img = io::load_image(path_arg(path)?)?;
        *out = Box::into_raw(Box::new(FcImage(img)));
        Ok(())
    })
}

/// Copies `len` interleaved samples; `channels` is 1 (gray) or 3 (RGB).
///
/// # Safety
/// `data` must point to `len` readable bytes; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fc_image_from_raw(
    data: *const u8,
    len: usize,
    width: u32,
    height: u32,
    channels: u32,
    out: *mut *mut FcImage,
) -> FcStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let bytes = bytes_arg(data, len, "data")?;
        let ch = Channels::from_count(channels as usize).map_err(|e| Failure::invalid(e.to_string()))?;
        let img = RasterImage::new(width, height, ch, bytes.to_vec()).map_err(|e| Failure::invalid(e.to_string()))?;
        *out = Box::into_raw(Box::new(FcImage(img)));
        Ok(())
    })
}

/// Dimensions and channel count; any pointer may be NULL to skip it.
///
/// # Safety
/// `img` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn fc_image_info(
    img: *const FcImage,
    width: *mut u32,
    height: *mut u32,
    channels: *mut u32,
) -> FcStatus {
    guard(|| {
        let img = &nonnull(img, "image")?.0;
        if let Some(w) = width.as_mut() {
            *w = img.width();
        }
        if let Some(h) = height.as_mut() {
            *h = img.height();
        }
        if let Some(c) = channels.as_mut() {
            *c = img.channels().count() as u32;
        }
        Ok(())
    })
}

/// Borrowed view of the samples, valid while the handle lives.
///
/// # Safety
/// `img` must be a live handle; `data` and `len` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fc_image_data(img: *const FcImage, data: *mut *const u8, len: *mut usize) -> FcStatus {
    guard(|| {
        let img = &nonnull(img, "image")?.0;
        let (data, len) = (out_ptr(data, "data")?, out_ptr(len, "len")?);
        *data = img.data().as_ptr();
        *len = img.data().len();
        Ok(())
    })
}

/// # Safety
/// `img` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fc_image_free(img: *mut FcImage) {
    if !img.is_null() {
        drop(Box::from_raw(img));
    }
}

/// Quality features with the default configuration.
///
/// # Safety
/// `img` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fc_extract_features(img: *const FcImage, out: *mut FcFeatures) -> FcStatus {
    guard(|| {
        let img = &nonnull(img, "image")?.0;
        let out = out_ptr(out, "out")?;
        let r = extract_features(img, &FeatureConfig::default(), None).map_err(|e| Failure::invalid(e.to_string()))?;
        let f = r.features;
        *out = FcFeatures {
            brightness: f.brightness,
            vesselness: f.vesselness,
            sharpness: f.sharpness,
            entropy: f.entropy,
            peak_to_mean: f.peak_to_mean,
            degenerate_crop: r.degenerate_crop,
            zero_mean: r.zero_mean,
        };
        Ok(())
    })
}

/// Default enhancement parameters.
#[no_mangle]
pub extern "C" fn fc_enhance_params_default() -> FcEnhanceParams {
    let p = EnhancementParams::default();
    FcEnhanceParams {
        clahe_clip: p.clahe_clip,
        tile_cols: p.tile_grid.0,
        tile_rows: p.tile_grid.1,
        gamma: p.gamma,
    }
}

/// Crop, CLAHE on lightness and gamma; `params` NULL means defaults. The
/// result is a new RGB image.
///
/// # Safety
/// `img` must be a live handle; `params` NULL or readable; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fc_enhance(
    img: *const FcImage,
    params: *const FcEnhanceParams,
    out: *mut *mut FcImage,
) -> FcStatus {
    guard(|| {
        let img = &nonnull(img, "image")?.0;
        let out = out_ptr(out, "out")?;
        let p = params.as_ref().copied().unwrap_or_else(|| fc_enhance_params_default());
        let p = EnhancementParams {
            clahe_clip: p.clahe_clip,
            tile_grid: (p.tile_cols, p.tile_rows),
            gamma: p.gamma,
        };
        let e = enhance(img, &p).map_err(|e| Failure::invalid(e.to_string()))?;
        *out = Box::into_raw(Box::new(FcImage(e)));
        Ok(())
    })
}

/// Mask from one byte per pixel, foreground above 127.
///
/// # Safety
/// `data` must point to `width * height` readable bytes; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fc_mask_from_raw(data: *const u8, width: u32, height: u32, out: *mut *mut FcMask) -> FcStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let n = (width as usize)
            .checked_mul(height as usize)
            .ok_or_else(|| Failure::invalid("mask size overflows"))?;
        if n == 0 {
            return Err(Failure::invalid("mask has zero pixels"));
        }
        let bytes = bytes_arg(data, n, "data")?;
        let bits = bytes.iter().map(|&v| v > 127).collect();
        let m = Mask::from_bits(width, height, bits).map_err(|e| Failure::invalid(e.to_string()))?;
        *out = Box::into_raw(Box::new(FcMask(m)));
        Ok(())
    })
}

/// Reads a single-channel mask file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fc_mask_load(path: *const c_char, out: *mut *mut FcMask) -> FcStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let m = io::load_mask(path_arg(path)?)?;
        *out = Box::into_raw(Box::new(FcMask(m)));
        Ok(())
    })
}

/// Writes 0 or 255 per pixel into `buf`, which must hold `width * height`
/// bytes; `count` (nullable) receives the foreground size.
///
/// # Safety
/// `mask` must be a live handle; `buf` must point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn fc_mask_copy(mask: *const FcMask, buf: *mut u8, len: usize, count: *mut usize) -> FcStatus {
    guard(|| {
        let m = &nonnull(mask, "mask")?.0;
        if len != m.len() {
            return Err(Failure(
                FcStatus::DimensionMismatch,
                format!("buffer holds {len} bytes, mask has {} pixels", m.len()),
            ));
        }
        nonnull(buf, "buf")?;
        let dst = std::slice::from_raw_parts_mut(buf, len);
        for (d, &b) in dst.iter_mut().zip(m.bits()) {
            *d = if b { 255 } else { 0 };
        }
        if let Some(c) = count.as_mut() {
            *c = m.count();
        }
        Ok(())
    })
}

/// # Safety
/// `mask` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fc_mask_free(mask: *mut FcMask) {
    if !mask.is_null() {
        drop(Box::from_raw(mask));
    }
}

/// Cleans a predicted mask against its image with the default parameters;
/// `min_area` overrides the smallest kept component.
///
/// # Safety
/// `img` and `mask` must be live handles; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fc_postprocess(
    img: *const FcImage,
    mask: *const FcMask,
    lesion: FcLesion,
    min_area: usize,
    out: *mut *mut FcMask,
) -> FcStatus {
    guard(|| {
        let img = &nonnull(img, "image")?.0;
        let m = &nonnull(mask, "mask")?.0;
        let out = out_ptr(out, "out")?;
        if m.dims() != (img.width(), img.height()) {
            return Err(Failure(
                FcStatus::DimensionMismatch,
                format!("mask {:?} does not match image {}x{}", m.dims(), img.width(), img.height()),
            ));
        }
        let params = PostprocessParams { min_area, ..Default::default() };
        let cleaned = postprocess(img, m, lesion.into(), &params).map_err(|e| Failure::invalid(e.to_string()))?;
        *out = Box::into_raw(Box::new(FcMask(cleaned)));
        Ok(())
    })
}

/// Plain and weighted kappa and DSC of two masks whose foreground pixels
/// carry the weights `p_i` and `p_j` (confidence times expertise).
///
/// # Safety
/// Both masks must be live handles; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fc_agreement_pair(
    mask_i: *const FcMask,
    p_i: f64,
    mask_j: *const FcMask,
    p_j: f64,
    out: *mut FcPairMetrics,
) -> FcStatus {
    guard(|| {
        let (i, j) = (&nonnull(mask_i, "mask_i")?.0, &nonnull(mask_j, "mask_j")?.0);
        let out = out_ptr(out, "out")?;
        if i.dims() != j.dims() {
            return Err(Failure(
                FcStatus::DimensionMismatch,
                format!("masks are {:?} and {:?}", i.dims(), j.dims()),
            ));
        }
        let m = pair_metrics_masks(i, p_i, j, p_j).map_err(|e| Failure::invalid(e.to_string()))?;
        *out = FcPairMetrics {
            kappa: m.kappa,
            weighted_kappa: m.w_kappa,
            dsc: m.dsc,
            weighted_dsc: m.w_dsc,
            degenerate: m.degenerate,
        };
        Ok(())
    })
}

/// Loads a `model.json` written by the `train` command.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fc_model_load(path: *const c_char, out: *mut *mut FcModel) -> FcStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let m = ClassifierModel::load(&path_arg(path)?).map_err(|e| Failure(FcStatus::Model, e.to_string()))?;
        *out = Box::into_raw(Box::new(FcModel(m)));
        Ok(())
    })
}

/// Number of features the model expects.
///
/// # Safety
/// `model` must be a live handle; `dim` writable.
#[no_mangle]
pub unsafe extern "C" fn fc_model_dim(model: *const FcModel, dim: *mut usize) -> FcStatus {
    guard(|| {
        *out_ptr(dim, "dim")? = nonnull(model, "model")?.0.dim();
        Ok(())
    })
}

/// Probability of good quality for `len` raw feature values in schema
/// order; `good` (nullable) receives the thresholded label.
///
/// # Safety
/// `model` must be a live handle; `x` must point to `len` doubles;
/// `p_good` writable.
#[no_mangle]
pub unsafe extern "C" fn fc_model_predict(
    model: *const FcModel,
    x: *const f64,
    len: usize,
    p_good: *mut f64,
    good: *mut bool,
) -> FcStatus {
    guard(|| {
        let m = &nonnull(model, "model")?.0;
        let p_out = out_ptr(p_good, "p_good")?;
        if len > 0 {
            nonnull(x, "x")?;
        }
        let xs = if len == 0 { &[][..] } else { std::slice::from_raw_parts(x, len) };
        let (p, label) = m.predict(xs).map_err(|e| Failure(FcStatus::DimensionMismatch, e.to_string()))?;
        *p_out = p;
        if let Some(g) = good.as_mut() {
            *g = label;
        }
        Ok(())
    })
}

/// # Safety
/// `model` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fc_model_free(model: *mut FcModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}
