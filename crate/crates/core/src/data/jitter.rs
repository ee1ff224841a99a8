use rand::Rng;

/// Photometric jitter strengths. Brightness, contrast and saturation
/// factors are drawn from `[1 - s, 1 + s]`; the hue shift from
/// `[-hue, hue]` as a fraction of the colour wheel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColorJitter {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub hue: f64,
}

impl Default for ColorJitter {
    fn default() -> Self {
        ColorJitter {
            brightness: 0.2,
            contrast: 0.2,
            saturation: 0.2,
            hue: 0.05,
        }
    }
}

impl ColorJitter {
    pub const NONE: ColorJitter = ColorJitter {
        brightness: 0.0,
        contrast: 0.0,
        saturation: 0.0,
        hue: 0.0,
    };

    pub fn validate(&self) -> crate::Result<()> {
        let ok = |s: f64, max: f64| s.is_finite() && (0.0..=max).contains(&s);
        if !(ok(self.brightness, 1.0) && ok(self.contrast, 1.0) && ok(self.saturation, 1.0) && ok(self.hue, 0.5)) {
            return Err(crate::Error::Config(format!(
                "jitter strengths must lie in [0, 1] (hue in [0, 0.5]), got {self:?}"
            )));
        }
        Ok(())
    }

    /// Always consumes four draws, so streams stay aligned across strengths.
    pub fn sample(&self, rng: &mut impl Rng) -> JitterFactors {
        let factor = |rng: &mut dyn rand::RngCore, s: f64| {
            let u: f64 = rng.random();
            (1.0 - s) + 2.0 * s * u
        };
        let brightness = factor(rng, self.brightness);
        let contrast = factor(rng, self.contrast);
        let saturation = factor(rng, self.saturation);
        let u: f64 = rng.random();
        JitterFactors {
            brightness,
            contrast,
            saturation,
            hue: self.hue * (2.0 * u - 1.0),
        }
    }

    pub fn apply(&self, rgb: &mut [f32], rng: &mut impl Rng) {
        self.sample(rng).apply(rgb);
    }
}

/// Concrete factors for one application.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JitterFactors {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub hue: f64,
}

impl JitterFactors {
    pub const IDENTITY: JitterFactors = JitterFactors {
        brightness: 1.0,
        contrast: 1.0,
        saturation: 1.0,
        hue: 0.0,
    };

    /// Applies brightness, contrast, saturation, then hue to a planar RGB
    /// buffer in `[0, 1]`, clamping after each step. Neutral steps are
    /// skipped.
    pub fn apply(&self, rgb: &mut [f32]) {
        let plane = rgb.len() / 3;
        if plane == 0 {
            return;
        }
        if self.brightness != 1.0 {
            let f = self.brightness as f32;
            rgb.iter_mut().for_each(|v| *v = (*v * f).clamp(0.0, 1.0));
        }
        if self.contrast != 1.0 {
            let mean = (0..plane).map(|i| luma(rgb, plane, i) as f64).sum::<f64>() / plane as f64;
            blend(rgb, self.contrast as f32, |_| mean as f32, plane);
        }
        if self.saturation != 1.0 {
            let gray: Vec<f32> = (0..plane).map(|i| luma(rgb, plane, i)).collect();
            blend(rgb, self.saturation as f32, |i| gray[i], plane);
        }
        if self.hue != 0.0 {
            for i in 0..plane {
                let (h, s, v) = rgb_to_hsv(rgb[i], rgb[plane + i], rgb[2 * plane + i]);
                let (r, g, b) = hsv_to_rgb((h + self.hue as f32).rem_euclid(1.0), s, v);
                rgb[i] = r.clamp(0.0, 1.0);
                rgb[plane + i] = g.clamp(0.0, 1.0);
                rgb[2 * plane + i] = b.clamp(0.0, 1.0);
            }
        }
    }
}

fn luma(rgb: &[f32], plane: usize, i: usize) -> f32 {
    0.299 * rgb[i] + 0.587 * rgb[plane + i] + 0.114 * rgb[2 * plane + i]
}

fn blend(rgb: &mut [f32], f: f32, other: impl Fn(usize) -> f32, plane: usize) {
    for c in 0..3 {
        for i in 0..plane {
            let v = &mut rgb[c * plane + i];
            *v = (f * *v + (1.0 - f) * other(i)).clamp(0.0, 1.0);
        }
    }
}

/// Hue in `[0, 1)`.
fn rgb_to_hsv(r: f32, g: f32, b: f32) -> (f32, f32, f32) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let s = if max > 0.0 { d / max } else { 0.0 };
    let h = if d == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / d).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / d + 2.0) / 6.0
    } else {
        ((r - g) / d + 4.0) / 6.0
    };
    (h, s, max)
}

fn hsv_to_rgb(h: f32, s: f32, v: f32) -> (f32, f32, f32) {
    let h6 = h * 6.0;
    let sector = h6.floor();
    let f = h6 - sector;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match sector as i32 % 6 {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn image() -> Vec<f32> {
        (0..3 * 64).map(|i| ((i * 37) % 101) as f32 / 100.0).collect()
    }

    #[test]
    fn zero_strength_is_identity() {
        let mut img = image();
        ColorJitter::NONE.apply(&mut img, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(img, image());
    }

    #[test]
    fn brightness_scales_constant_image() {
        let mut img = vec![0.5f32; 3 * 16];
        JitterFactors {
            brightness: 1.1,
            ..JitterFactors::IDENTITY
        }
        .apply(&mut img);
        assert!(img.iter().all(|&v| (v - 0.55).abs() < 1e-7));
    }

    #[test]
    fn same_seed_same_output() {
        let run = |seed| {
            let mut img = image();
            ColorJitter::default().apply(&mut img, &mut ChaCha8Rng::seed_from_u64(seed));
            img
        };
        assert_eq!(run(4), run(4));
        assert_ne!(run(4), run(5));
    }

    #[test]
    fn output_stays_in_unit_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let strong = ColorJitter {
            brightness: 1.0,
            contrast: 1.0,
            saturation: 1.0,
            hue: 0.5,
        };
        for _ in 0..50 {
            let mut img = image();
            strong.apply(&mut img, &mut rng);
            assert!(img.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn hsv_round_trip() {
        for (r, g, b) in [(0.9, 0.2, 0.1), (0.1, 0.8, 0.3), (0.2, 0.3, 0.7), (0.5, 0.5, 0.5), (0.0, 0.0, 0.0)] {
            let (h, s, v) = rgb_to_hsv(r, g, b);
            let (r2, g2, b2) = hsv_to_rgb(h, s, v);
            assert!((r - r2).abs() < 1e-6 && (g - g2).abs() < 1e-6 && (b - b2).abs() < 1e-6);
        }
    }

    #[test]
    fn factors_stay_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let f = ColorJitter::default().sample(&mut rng);
            for x in [f.brightness, f.contrast, f.saturation] {
                assert!((0.8..=1.2).contains(&x));
            }
            assert!(f.hue.abs() <= 0.05);
        }
    }
}
