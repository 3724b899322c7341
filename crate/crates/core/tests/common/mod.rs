#![allow(dead_code)]

use std::path::{Path, PathBuf};

use fundus_curator::filters::gaussian_blur;
use fundus_curator::io;
use fundus_curator::manifest::{AnnotationRecord, Manifest, ManifestEntry, QualityLabel};
use fundus_curator::{Channels, LesionType, Mask, Plane, RasterImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn seg_dist(px: f64, py: f64, (ax, ay): (f64, f64), (bx, by): (f64, f64)) -> f64 {
    let (dx, dy) = (bx - ax, by - ay);
    let t = (((px - ax) * dx + (py - ay) * dy) / (dx * dx + dy * dy)).clamp(0.0, 1.0);
    ((px - ax - t * dx).powi(2) + (py - ay - t * dy).powi(2)).sqrt()
}

type Segment = ((f64, f64), (f64, f64), f64);

/// Reddish disc on black with an optic disc and a fan of dark vessels.
pub fn synthetic_fundus(size: u32, seed: u64) -> RasterImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = size as f64;
    let (cx, cy, r) = (s / 2.0, s / 2.0, 0.46 * s);
    let base = [rng.gen_range(150.0..190.0), rng.gen_range(70.0..95.0), rng.gen_range(30.0..50.0)];
    let disc = (cx + rng.gen_range(-0.2..0.2) * s, cy + rng.gen_range(-0.1..0.1) * s);
    let vessels: Vec<Segment> = (0..8)
        .map(|_| {
            let a: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let len = rng.gen_range(0.3..0.5) * s;
            let end = (disc.0 + a.cos() * len, disc.1 + a.sin() * len);
            (disc, end, rng.gen_range(0.8..1.8))
        })
        .collect();
    let noise: Vec<f64> = (0..size * size).map(|_| rng.gen_range(-3.0..3.0)).collect();
    RasterImage::from_fn_rgb(size, size, |x, y| {
        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
        let rr = ((px - cx).powi(2) + (py - cy).powi(2)).sqrt();
        if rr > r {
            return [0, 0, 0];
        }
        let shade = 1.0 - 0.35 * (rr / r).powi(2);
        let mut c = base.map(|v| v * shade);
        let dd = ((px - disc.0).powi(2) + (py - disc.1).powi(2)).sqrt();
        if dd < 0.07 * s {
            c = [c[0] + 50.0, c[1] + 60.0, c[2] + 40.0];
        }
        for &(a, b, w) in &vessels {
            if seg_dist(px, py, a, b) < w {
                c = [c[0] - 45.0, c[1] - 35.0, c[2] - 12.0];
            }
        }
        let n = noise[(y * size + x) as usize];
        c.map(|v| (v + n).round().clamp(0.0, 255.0) as u8)
    })
}

/// Gaussian blur of every channel followed by scaling towards black.
pub fn degrade(img: &RasterImage, sigma: f64, factor: f64) -> RasterImage {
    let (w, h) = (img.width(), img.height());
    let planes: Vec<Plane> = (0..3)
        .map(|c| {
            let p = Plane::from_fn(w, h, |x, y| img.pixel(x, y)[c] as f64);
            gaussian_blur(&p, sigma)
        })
        .collect();
    RasterImage::from_fn_rgb(w, h, |x, y| {
        [0, 1, 2].map(|c| (planes[c].get(x, y) * factor).round().clamp(0.0, 255.0) as u8)
    })
}

pub fn rect(w: u32, h: u32, x0: u32, y0: u32, x1: u32, y1: u32) -> Mask {
    Mask::from_fn(w, h, |x, y| (x0..x1).contains(&x) && (y0..y1).contains(&y))
}

pub struct AnnotationSpec {
    pub annotator: &'static str,
    pub lesion: LesionType,
    pub mask: Mask,
    pub confidence: f64,
    pub expertise: f64,
}

pub struct ImageSpec {
    pub id: String,
    pub image: RasterImage,
    pub quality: Option<QualityLabel>,
    pub annotations: Vec<AnnotationSpec>,
    pub predictions: Vec<(LesionType, Mask)>,
}

/// Writes images, masks and `manifest.json` under `dir`; returns the
/// manifest path.
pub fn write_dataset(dir: &Path, specs: &[ImageSpec]) -> PathBuf {
    let mut manifest = Manifest::default();
    for s in specs {
        let path = format!("images/{}.png", s.id);
        io::save_png(&s.image, dir.join(&path)).unwrap();
        let mut entry = ManifestEntry {
            id: s.id.clone(),
            path,
            quality: s.quality,
            vlm_scores: None,
            annotations: vec![],
            predictions: Default::default(),
        };
        for a in &s.annotations {
            let rel = format!("masks/{}.{}.{}.png", s.id, a.annotator, a.lesion);
            io::save_mask(&a.mask, dir.join(&rel)).unwrap();
            entry.annotations.push(AnnotationRecord {
                path: rel,
                annotator: a.annotator.to_string(),
                lesion: a.lesion,
                confidence: a.confidence,
                expertise: a.expertise,
            });
        }
        for (lesion, m) in &s.predictions {
            let rel = format!("predictions/{}.{lesion}.png", s.id);
            io::save_mask(m, dir.join(&rel)).unwrap();
            entry.predictions.insert(*lesion, rel);
        }
        manifest.images.push(entry);
    }
    let p = dir.join("manifest.json");
    fundus_curator::manifest::save_manifest(&manifest, &p).unwrap();
    p
}

/// Good originals and blurred, darkened copies with labels, plus
/// predictions and two annotators on a few images.
pub fn small_corpus(n: usize, size: u32, seed: u64) -> Vec<ImageSpec> {
    (0..n)
        .map(|i| {
            let orig = synthetic_fundus(size, seed + i as u64 / 2);
            let good = i % 2 == 0;
            let image = if good { orig } else { degrade(&orig, 2.0, 0.6) };
            let mut annotations = vec![];
            let mut predictions = vec![];
            if i < 4 {
                let m = rect(size, size, size / 4, size / 4, size / 2, size / 2);
                let shifted = rect(size, size, size / 4 + 2, size / 4, size / 2 + 2, size / 2);
                for lesion in [LesionType::EX, LesionType::HA] {
                    annotations.push(AnnotationSpec { annotator: "expert", lesion, mask: m.clone(), confidence: 0.9, expertise: 1.0 });
                    annotations.push(AnnotationSpec { annotator: "resident", lesion, mask: shifted.clone(), confidence: 0.7, expertise: 0.6 });
                }
                predictions.push((LesionType::EX, m.clone()));
                predictions.push((LesionType::HA, shifted));
                predictions.push((LesionType::SE, m));
            }
            ImageSpec {
                id: format!("img{i:03}"),
                image,
                quality: Some(if good { QualityLabel::Good } else { QualityLabel::Bad }),
                annotations,
                predictions,
            }
        })
        .collect()
}

pub fn gray(w: u32, h: u32, data: Vec<u8>) -> RasterImage {
    RasterImage::new(w, h, Channels::Gray, data).unwrap()
}

/// Every file under `dir` with its path relative to `dir`, sorted.
pub fn tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}
