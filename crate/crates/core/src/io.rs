//! Raster and mask file I/O. All writes go through a temp file in the target
//! directory followed by a rename.

use std::io::{self, Cursor, Write};
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageError, ImageReader};
use thiserror::Error;

use crate::mask::Mask;
use crate::raster::{Channels, RasterImage};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("file not found: {0}")]
    NotFound(PathBuf),
    #[error("unsupported image format: {path}: {detail}")]
    UnsupportedFormat { path: PathBuf, detail: String },
    #[error("corrupt image data: {path}: {detail}")]
    Corrupt { path: PathBuf, detail: String },
    #[error("mask must be single-channel: {0}")]
    MultiChannelMask(PathBuf),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("PNG encoding failed: {0}")]
    Encode(String),
}

pub fn load_image(path: impl AsRef<Path>) -> Result<RasterImage, IoError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| match e.kind() {
        io::ErrorKind::NotFound => IoError::NotFound(path.to_path_buf()),
        _ => IoError::Io {
            path: path.to_path_buf(),
            source: e,
        },
    })?;
    decode_image(&bytes, path)
}

/// Decodes in-memory image bytes; `origin` only labels errors.
pub fn decode_image(bytes: &[u8], origin: &Path) -> Result<RasterImage, IoError> {
    let reader = ImageReader::new(Cursor::new(bytes))
        .with_guessed_format()
        .map_err(|e| IoError::Io {
            path: origin.to_path_buf(),
            source: e,
        })?;
    if reader.format().is_none() {
        return Err(IoError::UnsupportedFormat {
            path: origin.to_path_buf(),
            detail: "unrecognised file signature".into(),
        });
    }
    let decoded = reader.decode().map_err(|e| classify(e, origin))?;
    Ok(from_dynamic(decoded))
}

fn classify(e: ImageError, path: &Path) -> IoError {
    match e {
        ImageError::Unsupported(u) => IoError::UnsupportedFormat {
            path: path.to_path_buf(),
            detail: u.to_string(),
        },
        ImageError::IoError(io) if io.kind() != io::ErrorKind::UnexpectedEof => IoError::Io {
            path: path.to_path_buf(),
            source: io,
        },
        other => IoError::Corrupt {
            path: path.to_path_buf(),
            detail: other.to_string(),
        },
    }
}

fn from_dynamic(img: DynamicImage) -> RasterImage {
    let gray = !img.color().has_color();
    let (w, h) = (img.width(), img.height());
    if gray {
        let buf = img.into_luma8();
        RasterImage::new(w, h, Channels::Gray, buf.into_raw()).expect("decoder dimensions")
    } else {
        let buf = img.into_rgb8();
        RasterImage::new(w, h, Channels::Rgb, buf.into_raw()).expect("decoder dimensions")
    }
}

/// Loads a single-channel mask, binarizing at > 127.
pub fn load_mask(path: impl AsRef<Path>) -> Result<Mask, IoError> {
    let path = path.as_ref();
    let img = load_image(path)?;
    if img.channels() != Channels::Gray {
        return Err(IoError::MultiChannelMask(path.to_path_buf()));
    }
    Ok(Mask::from_gray(&img).expect("gray image"))
}

pub fn encode_png(img: &RasterImage) -> Result<Vec<u8>, IoError> {
    let color = match img.channels() {
        Channels::Gray => image::ExtendedColorType::L8,
        Channels::Rgb => image::ExtendedColorType::Rgb8,
    };
    let mut out = Vec::new();
    let encoder = image::codecs::png::PngEncoder::new(&mut out);
    image::ImageEncoder::write_image(encoder, img.data(), img.width(), img.height(), color)
        .map_err(|e| IoError::Encode(e.to_string()))?;
    Ok(out)
}

pub fn save_png(img: &RasterImage, path: impl AsRef<Path>) -> Result<(), IoError> {
    let bytes = encode_png(img)?;
    write_atomic(path.as_ref(), &bytes)
}

/// Writes a mask as an 8-bit PNG with 0 = background, 255 = foreground.
pub fn save_mask(mask: &Mask, path: impl AsRef<Path>) -> Result<(), IoError> {
    save_png(&mask.to_gray(), path)
}

pub fn mask_to_png(mask: &Mask) -> Result<Vec<u8>, IoError> {
    encode_png(&mask.to_gray())
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    let io_err = |source| IoError::Io {
        path: path.to_path_buf(),
        source,
    };
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(io_err)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err)?;
    tmp.write_all(bytes).map_err(io_err)?;
    tmp.as_file().sync_all().map_err(io_err)?;
    tmp.persist(path).map_err(|e| io_err(e.error))?;
    Ok(())
}
