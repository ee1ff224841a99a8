use super::FundusSample;
use crate::{Error, Result};

/// Per-channel means over every pixel of a training set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelStats {
    pub mean: [f64; 3],
}

impl ChannelStats {
    pub fn compute(train: &[FundusSample]) -> Result<Self> {
        let mut sum = [0.0f64; 3];
        let mut count = 0usize;
        for s in train {
            let plane = s.height() * s.width();
            for (c, total) in sum.iter_mut().enumerate() {
                *total += s.image.data()[c * plane..(c + 1) * plane]
                    .iter()
                    .map(|&v| v as f64)
                    .sum::<f64>();
            }
            count += plane;
        }
        if count == 0 {
            return Err(Error::Dataset("channel statistics need at least one training image".into()));
        }
        let mean = sum.map(|s| s / count as f64);
        if mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::Numerical(format!("non-finite channel means {mean:?}")));
        }
        Ok(ChannelStats { mean })
    }

    /// Subtracts the channel means from a planar `3 x plane` buffer.
    pub fn apply(&self, rgb: &mut [f32]) {
        let plane = rgb.len() / 3;
        for (c, chunk) in rgb.chunks_mut(plane).enumerate() {
            let m = self.mean[c] as f32;
            chunk.iter_mut().for_each(|v| *v -= m);
        }
    }

    /// Mean-subtracted copy of `sample`; masks are untouched.
    pub fn normalize(&self, sample: &FundusSample) -> FundusSample {
        let mut out = sample.clone();
        self.apply(out.image.data_mut());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use trivessel_tensor::Tensor;

    fn sample(id: &str, f: impl FnMut(usize, usize, usize, usize) -> f32) -> FundusSample {
        FundusSample::new(
            id,
            Tensor::from_fn([1, 3, 4, 5], f),
            Tensor::zeros([1, 1, 4, 5]),
            Tensor::ones([1, 1, 4, 5]),
        )
        .unwrap()
    }

    #[test]
    fn constant_images() {
        let set = vec![sample("a", |_, _, _, _| 0.5), sample("b", |_, _, _, _| 0.5)];
        let stats = ChannelStats::compute(&set).unwrap();
        assert_eq!(stats.mean, [0.5; 3]);
        assert!(stats.normalize(&set[0]).image.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn empty_set_is_an_error() {
        assert!(matches!(ChannelStats::compute(&[]), Err(Error::Dataset(_))));
    }
}
