use std::ops::{Add, AddAssign};

use super::ProbabilityMap;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }
}

impl Add for ConfusionCounts {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        ConfusionCounts {
            tp: self.tp + o.tp,
            tn: self.tn + o.tn,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
        }
    }
}

impl AddAssign for ConfusionCounts {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

/// Counts FOV pixels only; a pixel is predicted vessel when `p >= threshold`.
pub fn confusion(map: &ProbabilityMap, threshold: f64, truth: &[bool]) -> Result<ConfusionCounts> {
    if truth.len() != map.probs.len() {
        return Err(Error::Dataset(format!(
            "{}: truth has {} pixels, map has {}",
            map.id,
            truth.len(),
            map.probs.len()
        )));
    }
    let mut c = ConfusionCounts::default();
    for ((&p, &f), &t) in map.probs.iter().zip(&map.fov).zip(truth) {
        if !f {
            continue;
        }
        match (p as f64 >= threshold, t) {
            (true, true) => c.tp += 1,
            (false, false) => c.tn += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}
