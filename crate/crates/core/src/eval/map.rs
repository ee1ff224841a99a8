use crate::{Error, Result};

/// A full-resolution vessel probability map with its field of view.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMap {
    pub id: String,
    pub height: usize,
    pub width: usize,
    /// Row-major probabilities in `[0, 1]`.
    pub probs: Vec<f32>,
    /// Row-major, `true` inside the field of view.
    pub fov: Vec<bool>,
}

impl ProbabilityMap {
    pub fn new(id: impl Into<String>, height: usize, width: usize, probs: Vec<f32>, fov: Vec<bool>) -> Result<Self> {
        let id = id.into();
        if probs.len() != height * width || fov.len() != height * width {
            return Err(Error::Dataset(format!(
                "{id}: {} probabilities and {} FOV flags for a {height}x{width} map",
                probs.len(),
                fov.len()
            )));
        }
        if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::Numerical(format!("{id}: probability {p} outside [0, 1]")));
        }
        Ok(ProbabilityMap {
            id,
            height,
            width,
            probs,
            fov,
        })
    }

    /// Probabilities of FOV pixels in row-major order.
    pub fn fov_probs(&self) -> impl Iterator<Item = f32> + '_ {
        self.probs.iter().zip(&self.fov).filter(|(_, &f)| f).map(|(&p, _)| p)
    }

    pub fn fov_count(&self) -> usize {
        self.fov.iter().filter(|&&f| f).count()
    }

    /// `probs >= threshold` over the whole map.
    pub fn binarize(&self, threshold: f64) -> Vec<bool> {
        self.probs.iter().map(|&p| p as f64 >= threshold).collect()
    }
}

/// Converts a `{0, 1}` mask buffer to flags.
pub fn mask_flags(mask: &[f32]) -> Vec<bool> {
    mask.iter().map(|&v| v > 0.0).collect()
}
