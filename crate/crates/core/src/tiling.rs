//! Patch tiling for patch-based segmentation models and the inverse stitch.

use thiserror::Error;

use crate::raster::{Channels, CropBox, RasterImage};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TilingError {
    #[error("patch size and stride must be at least 1 (size {size}, stride {stride})")]
    ZeroParameter { size: u32, stride: u32 },
    #[error("patch at ({x},{y}) of {w}x{h} does not fit a {width}x{height} canvas")]
    PatchOutOfBounds {
        x: u32,
        y: u32,
        w: u32,
        h: u32,
        width: u32,
        height: u32,
    },
    #[error("patch channel layout differs from the canvas")]
    ChannelMismatch,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Patch {
    pub x: u32,
    pub y: u32,
    pub image: RasterImage,
}

/// Start offsets along one axis: every `stride` while the patch fits, plus a
/// final patch clamped to the far border. A stride wider than the patch is
/// reduced to the patch size so that no pixel is skipped.
pub fn axis_offsets(len: u32, size: u32, stride: u32) -> Vec<u32> {
    if size >= len {
        return vec![0];
    }
    let last = len - size;
    let step = stride.min(size).max(1) as usize;
    let mut out: Vec<u32> = (0..=last).step_by(step).collect();
    if out.last() != Some(&last) {
        out.push(last);
    }
    out
}

/// Splits `img` into `size`×`size` patches. Patches larger than the image are
/// clamped to the image extent.
pub fn tile_patches(img: &RasterImage, size: u32, stride: u32) -> Result<Vec<Patch>, TilingError> {
    if size == 0 || stride == 0 {
        return Err(TilingError::ZeroParameter { size, stride });
    }
    let xs = axis_offsets(img.width(), size, stride);
    let ys = axis_offsets(img.height(), size, stride);
    let pw = size.min(img.width());
    let ph = size.min(img.height());
    let mut patches = Vec::with_capacity(xs.len() * ys.len());
    for &y in &ys {
        for &x in &xs {
            let image = img
                .crop(CropBox {
                    left: x,
                    top: y,
                    width: pw,
                    height: ph,
                })
                .expect("offsets are clamped inside the image");
            patches.push(Patch { x, y, image });
        }
    }
    Ok(patches)
}

/// Writes patches onto a zeroed canvas in order; later patches overwrite
/// overlapping regions.
pub fn stitch_patches(
    width: u32,
    height: u32,
    channels: Channels,
    patches: &[Patch],
) -> Result<RasterImage, TilingError> {
    let mut canvas = RasterImage::filled(width, height, channels, 0);
    for p in patches {
        let (w, h) = (p.image.width(), p.image.height());
        if p.x + w > width || p.y + h > height {
            return Err(TilingError::PatchOutOfBounds {
                x: p.x,
                y: p.y,
                w,
                h,
                width,
                height,
            });
        }
        if p.image.channels() != channels {
            return Err(TilingError::ChannelMismatch);
        }
        for y in 0..h {
            for x in 0..w {
                canvas
                    .pixel_mut(p.x + x, p.y + y)
                    .copy_from_slice(p.image.pixel(x, y));
            }
        }
    }
    Ok(canvas)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn offsets(patches: &[Patch]) -> Vec<(u32, u32)> {
        patches.iter().map(|p| (p.x, p.y)).collect()
    }

    #[test]
    fn exact_tiling() {
        let img = RasterImage::from_fn_gray(4, 4, |x, y| (x + 4 * y) as u8);
        let p = tile_patches(&img, 2, 2).unwrap();
        assert_eq!(offsets(&p), vec![(0, 0), (2, 0), (0, 2), (2, 2)]);
    }

    #[test]
    fn clamped_last_patch() {
        // offsets per axis: 0, 2 fit; 4 would overrun, so the border patch sits at 5 - 2 = 3
        assert_eq!(axis_offsets(5, 2, 2), vec![0, 2, 3]);
        let img = RasterImage::filled(5, 5, Channels::Gray, 9);
        let p = tile_patches(&img, 2, 2).unwrap();
        assert_eq!(p.len(), 9);
        assert_eq!(p[2].x, 3);
        assert_eq!(p[8].y, 3);
    }

    #[test]
    fn oversized_patch_is_whole_image() {
        let img = RasterImage::from_fn_gray(2, 2, |x, y| (x * 10 + y) as u8);
        let p = tile_patches(&img, 4, 1).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].image, img);
    }

    #[test]
    fn zero_stride_rejected() {
        let img = RasterImage::filled(2, 2, Channels::Gray, 0);
        assert!(tile_patches(&img, 2, 0).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn tile_stitch_identity(w in 1u32..40, h in 1u32..40, size in 1u32..20, stride in 1u32..20, rgb: bool, seed: u64) {
            let f = move |x: u32, y: u32| ((x as u64 * 31 + y as u64 * 17 + seed) % 256) as u8;
            let img = if rgb {
                RasterImage::from_fn_rgb(w, h, |x, y| [f(x, y), f(y, x), f(x + 1, y)])
            } else {
                RasterImage::from_fn_gray(w, h, f)
            };
            let patches = tile_patches(&img, size, stride).unwrap();
            let back = stitch_patches(w, h, img.channels(), &patches).unwrap();
            prop_assert_eq!(back, img);
        }
    }
}
