//! Synthetic fundus-like images: a bright textured disc with dark curved
//! vessels of width 1-5 px.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use image::{GrayImage, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use trivessel_tensor::Tensor;

use super::{DatasetSplit, FundusSample};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthConfig {
    pub train: usize,
    pub test: usize,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            train: 20,
            test: 20,
            height: 192,
            width: 192,
            seed: 0,
        }
    }
}

/// Generates one sample from its own random stream. Pixel values are
/// quantized to 8 bits so a written and re-read sample is identical.
pub fn generate_sample(id: impl Into<String>, height: usize, width: usize, seed: u64, stream: u64) -> FundusSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let (h, w) = (height, width);
    let (cy, cx) = (h as f64 / 2.0, w as f64 / 2.0);
    let radius = 0.47 * h.min(w) as f64;
    let inside = |y: f64, x: f64| (y - cy).powi(2) + (x - cx).powi(2) <= radius * radius;

    let mut fov = vec![0.0f32; h * w];
    for y in 0..h {
        for x in 0..w {
            if inside(y as f64 + 0.5, x as f64 + 0.5) {
                fov[y * w + x] = 1.0;
            }
        }
    }

    // vessel centerlines with smoothly turning heading
    let mut vessel = vec![0.0f32; h * w];
    let mut depth = vec![0.0f64; h * w];
    let curves = 8 + (h.min(w) / 16);
    let turn = Normal::new(0.0, 0.012).expect("std");
    for _ in 0..curves {
        let width_px = rng.random_range(1..=5usize) as f64;
        let contrast = 0.3 + 0.06 * width_px + rng.random_range(-0.05..0.05);
        let (mut y, mut x) = loop {
            let (y, x) = (rng.random_range(0.0..h as f64), rng.random_range(0.0..w as f64));
            if inside(y, x) {
                break (y, x);
            }
        };
        let mut heading = rng.random_range(0.0..2.0 * PI);
        let mut bend = 0.0f64;
        let steps = rng.random_range(0.4..1.2) * h.max(w) as f64 * 2.0;
        for _ in 0..steps as usize {
            let r = width_px / 2.0;
            let (y0, y1) = ((y - r).floor().max(0.0) as usize, ((y + r).ceil() as usize).min(h));
            let (x0, x1) = ((x - r).floor().max(0.0) as usize, ((x + r).ceil() as usize).min(w));
            for py in y0..y1 {
                for px in x0..x1 {
                    let d2 = (py as f64 + 0.5 - y).powi(2) + (px as f64 + 0.5 - x).powi(2);
                    if d2 <= r * r.max(0.5) {
                        let i = py * w + px;
                        vessel[i] = 1.0;
                        depth[i] = depth[i].max(contrast);
                    }
                }
            }
            bend = (0.95 * bend + turn.sample(&mut rng)).clamp(-0.04, 0.04);
            heading += bend;
            y += 0.5 * heading.sin();
            x += 0.5 * heading.cos();
            if !inside(y, x) {
                break;
            }
        }
    }

    // low-frequency texture, an optic-disc-like bright spot and pixel noise
    let waves: Vec<(f64, f64, f64, f64)> = (0..4)
        .map(|_| {
            (
                rng.random_range(0.01..0.06),
                rng.random_range(0.0..2.0 * PI),
                rng.random_range(0.0..2.0 * PI),
                rng.random_range(0.015..0.04),
            )
        })
        .collect();
    let angle = rng.random_range(0.0..2.0 * PI);
    let (dy, dx) = (cy + 0.55 * radius * angle.sin(), cx + 0.55 * radius * angle.cos());
    let disc_r = 0.12 * radius;
    let noise = Normal::new(0.0, 0.015).expect("std");
    let mut image = vec![0.0f32; 3 * h * w];
    let plane = h * w;
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let (r, g, b) = if fov[i] == 0.0 {
                (0.02, 0.02, 0.02)
            } else {
                let tex: f64 = waves
                    .iter()
                    .map(|&(f, a, p, amp)| amp * ((y as f64 * a.sin() + x as f64 * a.cos()) * f + p).sin())
                    .sum();
                let spot = (-((y as f64 - dy).powi(2) + (x as f64 - dx).powi(2)) / (2.0 * disc_r * disc_r)).exp();
                let vignette = 1.0 - 0.25 * ((y as f64 - cy).powi(2) + (x as f64 - cx).powi(2)) / (radius * radius);
                let d = depth[i];
                (
                    (0.72 * vignette + tex + 0.2 * spot) * (1.0 - 0.4 * d),
                    (0.40 * vignette + 0.7 * tex + 0.3 * spot) * (1.0 - d),
                    (0.20 * vignette + 0.3 * tex + 0.2 * spot) * (1.0 - 0.5 * d),
                )
            };
            for (c, v) in [r, g, b].into_iter().enumerate() {
                let v = (v + noise.sample(&mut rng)).clamp(0.0, 1.0);
                image[c * plane + i] = (v * 255.0).round() as f32 / 255.0;
            }
        }
    }
    for (v, f) in vessel.iter_mut().zip(&fov) {
        *v *= *f;
    }

    FundusSample::new(
        id,
        Tensor::from_vec([1, 3, h, w], image).expect("image size"),
        Tensor::from_vec([1, 1, h, w], vessel).expect("mask size"),
        Tensor::from_vec([1, 1, h, w], fov).expect("mask size"),
    )
    .expect("synthetic sample is well formed")
}

/// DRIVE-style ids: training images are numbered from 21, test images from 01.
pub fn generate(cfg: &SynthConfig) -> DatasetSplit {
    let train = (0..cfg.train)
        .map(|i| generate_sample(format!("{:02}_training", 21 + i), cfg.height, cfg.width, cfg.seed, i as u64))
        .collect();
    let test = (0..cfg.test)
        .map(|i| {
            generate_sample(
                format!("{:02}_test", 1 + i),
                cfg.height,
                cfg.width,
                cfg.seed,
                (1 << 32) + i as u64,
            )
        })
        .collect();
    DatasetSplit { train, test }
}

/// Generates a dataset and writes it in the DRIVE directory layout as PNG.
pub fn write_synthetic(root: &Path, cfg: &SynthConfig) -> Result<DatasetSplit> {
    let split = generate(cfg);
    for (dir, samples, suffix) in [("training", &split.train, "_training"), ("test", &split.test, "_test")] {
        let base = root.join(dir);
        for sub in ["images", "1st_manual", "mask"] {
            fs::create_dir_all(base.join(sub)).map_err(|e| Error::io(base.join(sub), e))?;
        }
        for s in samples.iter() {
            let num = s.id.trim_end_matches(suffix);
            write_rgb(&base.join("images").join(format!("{}.png", s.id)), &s.image)?;
            write_mask(&base.join("1st_manual").join(format!("{num}_manual1.png")), &s.vessel)?;
            write_mask(&base.join("mask").join(format!("{}_mask.png", s.id)), &s.fov)?;
        }
    }
    Ok(split)
}

/// Writes a `(1, 3, h, w)` tensor in `[0, 1]` as 8-bit RGB PNG.
pub fn write_rgb(path: &Path, image: &Tensor<f32>) -> Result<()> {
    let s = image.shape();
    let plane = s.h * s.w;
    let d = image.data();
    let bytes: Vec<u8> = (0..plane)
        .flat_map(|i| (0..3).map(move |c| (d[c * plane + i].clamp(0.0, 1.0) * 255.0).round() as u8))
        .collect();
    let img = RgbImage::from_raw(s.w as u32, s.h as u32, bytes).expect("buffer size");
    img.save(path).map_err(|e| Error::image(path, e))
}

/// Writes a binary `(1, 1, h, w)` tensor as an 8-bit PNG with values 0 and 255.
pub fn write_mask(path: &Path, mask: &Tensor<f32>) -> Result<()> {
    let s = mask.shape();
    let bytes = mask.data().iter().map(|&v| if v > 0.0 { 255 } else { 0 }).collect();
    let img = GrayImage::from_raw(s.w as u32, s.h as u32, bytes).expect("buffer size");
    img.save(path).map_err(|e| Error::image(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generated_samples_are_plausible() {
        let s = generate_sample("a", 128, 128, 3, 0);
        s.validate().unwrap();
        let fov: f32 = s.fov.data().iter().sum();
        let vessels: f32 = s.vessel.data().iter().sum();
        let frac = vessels / fov;
        assert!(fov > 0.5 * 128.0 * 128.0);
        assert!((0.03..0.4).contains(&frac), "vessel fraction {frac}");
        assert!(s
            .vessel
            .data()
            .iter()
            .zip(s.fov.data())
            .all(|(&v, &f)| v <= f));
    }

    #[test]
    fn vessels_are_darker_than_background() {
        let s = generate_sample("a", 128, 128, 5, 1);
        let plane = 128 * 128;
        let g = &s.image.data()[plane..2 * plane];
        let (mut vs, mut vn, mut bs, mut bn) = (0.0, 0, 0.0, 0);
        for ((&gv, &f), &v) in g.iter().zip(s.fov.data()).zip(s.vessel.data()) {
            if f == 1.0 {
                if v == 1.0 {
                    vs += gv;
                    vn += 1;
                } else {
                    bs += gv;
                    bn += 1;
                }
            }
        }
        assert!(vs / (vn as f32) < 0.8 * bs / (bn as f32));
    }

    #[test]
    fn generation_is_seeded() {
        assert_eq!(generate_sample("a", 64, 96, 1, 0), generate_sample("a", 64, 96, 1, 0));
        assert_ne!(generate_sample("a", 64, 96, 1, 0), generate_sample("a", 64, 96, 1, 1));
    }
}
