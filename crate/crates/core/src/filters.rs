//! Convolution, grayscale morphology and windowed statistics on [`Plane`]s.
//! Out-of-range samples are border-replicated unless stated otherwise.

use crate::raster::Plane;

/// Derivative order of a sampled Gaussian kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GaussOrder {
    Smooth,
    First,
    Second,
}

/// Sampled Gaussian (or derivative) kernel of radius `ceil(3σ)`. The smoothing
/// kernel sums to one; derivative kernels sum to zero.
pub fn gaussian_kernel(sigma: f64, order: GaussOrder) -> Vec<f64> {
    assert!(sigma > 0.0, "sigma must be positive");
    let radius = (3.0 * sigma).ceil() as i64;
    let s2 = sigma * sigma;
    let g: Vec<f64> = (-radius..=radius)
        .map(|t| (-(t * t) as f64 / (2.0 * s2)).exp())
        .collect();
    let norm: f64 = g.iter().sum();
    let g: Vec<f64> = g.iter().map(|v| v / norm).collect();
    match order {
        GaussOrder::Smooth => g,
        GaussOrder::First => (-radius..=radius)
            .zip(&g)
            .map(|(t, gv)| -(t as f64) / s2 * gv)
            .collect(),
        GaussOrder::Second => {
            let k: Vec<f64> = (-radius..=radius)
                .zip(&g)
                .map(|(t, gv)| ((t * t) as f64 / (s2 * s2) - 1.0 / s2) * gv)
                .collect();
            let mean = k.iter().sum::<f64>() / k.len() as f64;
            k.iter().map(|v| v - mean).collect()
        }
    }
}

/// Applies `kx` along rows then `ky` along columns. Kernels are centred and
/// must have odd length.
pub fn convolve_separable(src: &Plane, kx: &[f64], ky: &[f64]) -> Plane {
    let (w, h) = (src.width as i64, src.height as i64);
    let rx = (kx.len() / 2) as i64;
    let ry = (ky.len() / 2) as i64;
    let mut tmp = Plane::zeros(src.width, src.height);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, k) in kx.iter().enumerate() {
                acc += k * src.get_clamped(x + rx - i as i64, y);
            }
            tmp.data[(y * w + x) as usize] = acc;
        }
    }
    let mut out = Plane::zeros(src.width, src.height);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, k) in ky.iter().enumerate() {
                acc += k * tmp.get_clamped(x, y + ry - i as i64);
            }
            out.data[(y * w + x) as usize] = acc;
        }
    }
    out
}

pub fn gaussian_blur(src: &Plane, sigma: f64) -> Plane {
    let k = gaussian_kernel(sigma, GaussOrder::Smooth);
    convolve_separable(src, &k, &k)
}

/// Offsets `(dx, dy)` of a digital disk `dx² + dy² ≤ r²`.
pub fn disk_offsets(radius: u32) -> Vec<(i64, i64)> {
    let r = radius as i64;
    let mut out = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if dx * dx + dy * dy <= r * r {
                out.push((dx, dy));
            }
        }
    }
    out
}

fn rank_filter(src: &Plane, offsets: &[(i64, i64)], pick_max: bool) -> Plane {
    let (w, h) = (src.width as i64, src.height as i64);
    let mut out = Plane::zeros(src.width, src.height);
    for y in 0..h {
        for x in 0..w {
            let mut acc = if pick_max { f64::NEG_INFINITY } else { f64::INFINITY };
            for &(dx, dy) in offsets {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w || ny >= h {
                    continue;
                }
                let v = src.data[(ny * w + nx) as usize];
                acc = if pick_max { acc.max(v) } else { acc.min(v) };
            }
            out.data[(y * w + x) as usize] = acc;
        }
    }
    out
}

/// Grayscale erosion with a disk; samples outside the image are ignored.
pub fn gray_erode(src: &Plane, radius: u32) -> Plane {
    rank_filter(src, &disk_offsets(radius), false)
}

pub fn gray_dilate(src: &Plane, radius: u32) -> Plane {
    rank_filter(src, &disk_offsets(radius), true)
}

/// White top-hat: the image minus its opening by a disk. Non-negative.
pub fn white_top_hat(src: &Plane, radius: u32) -> Plane {
    let opened = gray_dilate(&gray_erode(src, radius), radius);
    let data = src
        .data
        .iter()
        .zip(&opened.data)
        .map(|(a, b)| (a - b).max(0.0))
        .collect();
    Plane {
        width: src.width,
        height: src.height,
        data,
    }
}

/// Exact windowed sums over a square window with border replication, backed
/// by integer summed-area tables of the padded image.
pub struct WindowStats {
    width: usize,
    height: usize,
    radius: usize,
    padded_w: usize,
    sum: Vec<u64>,
    sum_sq: Vec<u64>,
}

impl WindowStats {
    /// `window` is the odd side length of the square neighbourhood.
    pub fn new(values: &[u8], width: usize, height: usize, window: usize) -> Self {
        assert!(window % 2 == 1, "window must be odd");
        assert_eq!(values.len(), width * height);
        let radius = window / 2;
        let pw = width + 2 * radius;
        let ph = height + 2 * radius;
        // summed-area tables carry an extra leading row and column of zeros
        let stride = pw + 1;
        let mut sum = vec![0u64; stride * (ph + 1)];
        let mut sum_sq = vec![0u64; stride * (ph + 1)];
        for py in 0..ph {
            let sy = (py as i64 - radius as i64).clamp(0, height as i64 - 1) as usize;
            let mut row = 0u64;
            let mut row_sq = 0u64;
            for px in 0..pw {
                let sx = (px as i64 - radius as i64).clamp(0, width as i64 - 1) as usize;
                let v = u64::from(values[sy * width + sx]);
                row += v;
                row_sq += v * v;
                let i = (py + 1) * stride + px + 1;
                sum[i] = sum[i - stride] + row;
                sum_sq[i] = sum_sq[i - stride] + row_sq;
            }
        }
        WindowStats {
            width,
            height,
            radius,
            padded_w: pw,
            sum,
            sum_sq,
        }
    }

    pub fn count(&self) -> u64 {
        let side = (2 * self.radius + 1) as u64;
        side * side
    }

    /// `(Σv, Σv²)` over the window centred at `(x, y)`.
    pub fn sums(&self, x: usize, y: usize) -> (u64, u64) {
        debug_assert!(x < self.width && y < self.height);
        let stride = self.padded_w + 1;
        let side = 2 * self.radius + 1;
        // padded coordinates of the window's top-left are (x, y)
        let (x0, y0, x1, y1) = (x, y, x + side, y + side);
        let at = |t: &[u64], xx: usize, yy: usize| t[yy * stride + xx];
        let s = at(&self.sum, x1, y1) + at(&self.sum, x0, y0)
            - at(&self.sum, x0, y1)
            - at(&self.sum, x1, y0);
        let q = at(&self.sum_sq, x1, y1) + at(&self.sum_sq, x0, y0)
            - at(&self.sum_sq, x0, y1)
            - at(&self.sum_sq, x1, y0);
        (s, q)
    }

    pub fn mean_std(&self, x: usize, y: usize) -> (f64, f64) {
        let (s, q) = self.sums(x, y);
        let n = self.count();
        let var_n2 = (n * q) as f64 - (s as f64) * (s as f64);
        let n = n as f64;
        (s as f64 / n, var_n2.max(0.0).sqrt() / n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_sums() {
        for sigma in [0.5, 1.0, 2.5, 4.0] {
            let g = gaussian_kernel(sigma, GaussOrder::Smooth);
            assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let d1 = gaussian_kernel(sigma, GaussOrder::First);
            assert!(d1.iter().sum::<f64>().abs() < 1e-12);
            let d2 = gaussian_kernel(sigma, GaussOrder::Second);
            assert!(d2.iter().sum::<f64>().abs() < 1e-12);
        }
    }

    #[test]
    fn second_derivative_of_parabola() {
        // f(x) = x², interior second derivative ≈ 2
        let p = Plane::from_fn(41, 5, |x, _| {
            let t = x as f64 - 20.0;
            t * t
        });
        let d2 = gaussian_kernel(1.5, GaussOrder::Second);
        let s = gaussian_kernel(1.5, GaussOrder::Smooth);
        let out = convolve_separable(&p, &d2, &s);
        assert!((out.get(20, 2) - 2.0).abs() < 0.05, "{}", out.get(20, 2));
    }

    #[test]
    fn first_derivative_sign() {
        let p = Plane::from_fn(21, 3, |x, _| x as f64);
        let d1 = gaussian_kernel(1.0, GaussOrder::First);
        let s = gaussian_kernel(1.0, GaussOrder::Smooth);
        let out = convolve_separable(&p, &d1, &s);
        assert!((out.get(10, 1) - 1.0).abs() < 0.05, "{}", out.get(10, 1));
    }

    #[test]
    fn top_hat_keeps_thin_bright_line() {
        let p = Plane::from_fn(30, 30, |_, y| if (14..17).contains(&y) { 100.0 } else { 0.0 });
        let th = white_top_hat(&p, 8);
        assert_eq!(th.get(10, 15), 100.0);
        assert_eq!(th.get(10, 5), 0.0);
        let flat = Plane::from_fn(20, 20, |_, _| 77.0);
        assert!(white_top_hat(&flat, 8).data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn window_stats_match_brute_force() {
        let (w, h) = (9usize, 7usize);
        let vals: Vec<u8> = (0..w * h).map(|i| ((i * 53 + 11) % 256) as u8).collect();
        let ws = WindowStats::new(&vals, w, h, 5);
        for y in 0..h {
            for x in 0..w {
                let mut s = 0u64;
                let mut q = 0u64;
                for dy in -2i64..=2 {
                    for dx in -2i64..=2 {
                        let sx = (x as i64 + dx).clamp(0, w as i64 - 1) as usize;
                        let sy = (y as i64 + dy).clamp(0, h as i64 - 1) as usize;
                        let v = vals[sy * w + sx] as u64;
                        s += v;
                        q += v * v;
                    }
                }
                assert_eq!(ws.sums(x, y), (s, q));
            }
        }
    }
}
