//! 8-bit raster images and single-channel float planes.
//!
//! [`RasterImage`] carries every photograph, channel and mask read from disk.
//! [`Plane`] is the `f64` working buffer used by the filters.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RasterError {
    #[error("image dimensions must be at least 1x1, got {width}x{height}")]
    EmptyDimensions { width: u32, height: u32 },
    #[error("expected {expected} samples for {width}x{height}x{channels}, got {actual}")]
    LengthMismatch {
        width: u32,
        height: u32,
        channels: usize,
        expected: usize,
        actual: usize,
    },
    #[error("unsupported channel count {0}; expected 1 or 3")]
    UnsupportedChannels(usize),
    #[error("crop box {left},{top} {width}x{height} lies outside a {image_width}x{image_height} image")]
    CropOutOfBounds {
        left: u32,
        top: u32,
        width: u32,
        height: u32,
        image_width: u32,
        image_height: u32,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Channels {
    Gray,
    Rgb,
}

impl Channels {
    pub fn count(self) -> usize {
        match self {
            Channels::Gray => 1,
            Channels::Rgb => 3,
        }
    }

    pub fn from_count(n: usize) -> Result<Self, RasterError> {
        match n {
            1 => Ok(Channels::Gray),
            3 => Ok(Channels::Rgb),
            other => Err(RasterError::UnsupportedChannels(other)),
        }
    }
}

/// Axis-aligned rectangle in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CropBox {
    pub left: u32,
    pub top: u32,
    pub width: u32,
    pub height: u32,
}

impl CropBox {
    pub fn full(width: u32, height: u32) -> Self {
        CropBox {
            left: 0,
            top: 0,
            width,
            height,
        }
    }
}

/// Row-major 8-bit image with one (gray) or three (RGB) interleaved channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RasterImage {
    width: u32,
    height: u32,
    channels: Channels,
    data: Vec<u8>,
}

impl RasterImage {
    pub fn new(
        width: u32,
        height: u32,
        channels: Channels,
        data: Vec<u8>,
    ) -> Result<Self, RasterError> {
        if width == 0 || height == 0 {
            return Err(RasterError::EmptyDimensions { width, height });
        }
        let expected = width as usize * height as usize * channels.count();
        if data.len() != expected {
            return Err(RasterError::LengthMismatch {
                width,
                height,
                channels: channels.count(),
                expected,
                actual: data.len(),
            });
        }
        Ok(RasterImage {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: u32, height: u32, channels: Channels, value: u8) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        let len = width as usize * height as usize * channels.count();
        RasterImage {
            width,
            height,
            channels,
            data: vec![value; len],
        }
    }

    pub fn from_fn_gray(width: u32, height: u32, f: impl Fn(u32, u32) -> u8) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        let mut data = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        RasterImage {
            width,
            height,
            channels: Channels::Gray,
            data,
        }
    }

    pub fn from_fn_rgb(width: u32, height: u32, f: impl Fn(u32, u32) -> [u8; 3]) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        let mut data = Vec::with_capacity(width as usize * height as usize * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        RasterImage {
            width,
            height,
            channels: Channels::Rgb,
            data,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn channels(&self) -> Channels {
        self.channels
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    /// Samples of the pixel at `(x, y)`; one entry for gray, three for RGB.
    pub fn pixel(&self, x: u32, y: u32) -> &[u8] {
        let c = self.channels.count();
        let i = (y as usize * self.width as usize + x as usize) * c;
        &self.data[i..i + c]
    }

    pub fn pixel_mut(&mut self, x: u32, y: u32) -> &mut [u8] {
        let c = self.channels.count();
        let i = (y as usize * self.width as usize + x as usize) * c;
        &mut self.data[i..i + c]
    }

    /// Iterates pixels as RGB triples; gray pixels are replicated.
    pub fn rgb_pixels(&self) -> impl Iterator<Item = [u8; 3]> + '_ {
        let c = self.channels.count();
        self.data.chunks_exact(c).map(move |px| {
            if c == 1 {
                [px[0]; 3]
            } else {
                [px[0], px[1], px[2]]
            }
        })
    }

    /// ITU-R 601 luma as floats. Gray images and neutral RGB pixels map exactly
    /// to their sample value.
    pub fn luma(&self) -> Plane {
        let data = match self.channels {
            Channels::Gray => self.data.iter().map(|&v| f64::from(v)).collect(),
            Channels::Rgb => self.rgb_pixels().map(luma_of).collect(),
        };
        Plane {
            width: self.width,
            height: self.height,
            data,
        }
    }

    /// Luma rounded to 8 bits, for histogram-based measures.
    pub fn to_gray(&self) -> RasterImage {
        match self.channels {
            Channels::Gray => self.clone(),
            Channels::Rgb => RasterImage {
                width: self.width,
                height: self.height,
                channels: Channels::Gray,
                data: self
                    .rgb_pixels()
                    .map(|px| luma_of(px).round().clamp(0.0, 255.0) as u8)
                    .collect(),
            },
        }
    }

    /// Green channel of RGB images; gray images are returned as-is.
    pub fn green(&self) -> Plane {
        let data = match self.channels {
            Channels::Gray => self.data.iter().map(|&v| f64::from(v)).collect(),
            Channels::Rgb => self.data.chunks_exact(3).map(|px| f64::from(px[1])).collect(),
        };
        Plane {
            width: self.width,
            height: self.height,
            data,
        }
    }

    pub fn crop(&self, b: CropBox) -> Result<RasterImage, RasterError> {
        let fits = b.width >= 1
            && b.height >= 1
            && b.left.checked_add(b.width).is_some_and(|r| r <= self.width)
            && b.top.checked_add(b.height).is_some_and(|r| r <= self.height);
        if !fits {
            return Err(RasterError::CropOutOfBounds {
                left: b.left,
                top: b.top,
                width: b.width,
                height: b.height,
                image_width: self.width,
                image_height: self.height,
            });
        }
        let c = self.channels.count();
        let row_len = b.width as usize * c;
        let mut data = Vec::with_capacity(row_len * b.height as usize);
        for y in b.top..b.top + b.height {
            let start = (y as usize * self.width as usize + b.left as usize) * c;
            data.extend_from_slice(&self.data[start..start + row_len]);
        }
        Ok(RasterImage {
            width: b.width,
            height: b.height,
            channels: self.channels,
            data,
        })
    }
}

pub(crate) fn luma_of(px: [u8; 3]) -> f64 {
    if px[0] == px[1] && px[1] == px[2] {
        return f64::from(px[0]);
    }
    0.299 * f64::from(px[0]) + 0.587 * f64::from(px[1]) + 0.114 * f64::from(px[2])
}

/// Row-major single-channel `f64` buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub width: u32,
    pub height: u32,
    pub data: Vec<f64>,
}

impl Plane {
    pub fn zeros(width: u32, height: u32) -> Self {
        Plane {
            width,
            height,
            data: vec![0.0; width as usize * height as usize],
        }
    }

    pub fn from_fn(width: u32, height: u32, f: impl Fn(u32, u32) -> f64) -> Self {
        let mut data = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Plane {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> f64 {
        self.data[y as usize * self.width as usize + x as usize]
    }

    /// Sample with border replication for out-of-range coordinates.
    #[inline]
    pub fn get_clamped(&self, x: i64, y: i64) -> f64 {
        let x = x.clamp(0, self.width as i64 - 1) as usize;
        let y = y.clamp(0, self.height as i64 - 1) as usize;
        self.data[y * self.width as usize + x]
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Rounds and clamps into an 8-bit gray image.
    pub fn to_gray_image(&self) -> RasterImage {
        RasterImage {
            width: self.width,
            height: self.height,
            channels: Channels::Gray,
            data: self
                .data
                .iter()
                .map(|v| v.round().clamp(0.0, 255.0) as u8)
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_lengths_and_sizes() {
        assert!(matches!(
            RasterImage::new(2, 2, Channels::Rgb, vec![0; 11]),
            Err(RasterError::LengthMismatch { expected: 12, .. })
        ));
        assert!(matches!(
            RasterImage::new(0, 2, Channels::Gray, vec![]),
            Err(RasterError::EmptyDimensions { .. })
        ));
        assert!(Channels::from_count(4).is_err());
    }

    #[test]
    fn luma_of_pure_red() {
        let img = RasterImage::filled(2, 2, Channels::Rgb, 0);
        let mut img = img;
        for y in 0..2 {
            for x in 0..2 {
                img.pixel_mut(x, y).copy_from_slice(&[255, 0, 0]);
            }
        }
        let l = img.luma();
        assert!((l.mean() - 76.245).abs() < 1e-12);
    }

    #[test]
    fn crop_extracts_rows() {
        let img = RasterImage::from_fn_gray(4, 3, |x, y| (y * 4 + x) as u8);
        let c = img
            .crop(CropBox {
                left: 1,
                top: 1,
                width: 2,
                height: 2,
            })
            .unwrap();
        assert_eq!(c.data(), &[5, 6, 9, 10]);
        assert!(img
            .crop(CropBox {
                left: 3,
                top: 0,
                width: 2,
                height: 1
            })
            .is_err());
    }
}
