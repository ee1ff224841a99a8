use super::ProbabilityMap;
use crate::{Error, Result};

pub const OTSU_BINS: usize = 256;

/// Counts of FOV probabilities in 256 equal bins over `[0, 1]`; 1.0 falls
/// in the last bin.
pub fn histogram<'a>(maps: impl IntoIterator<Item = &'a ProbabilityMap>) -> [u64; OTSU_BINS] {
    let mut hist = [0u64; OTSU_BINS];
    for m in maps {
        for p in m.fov_probs() {
            hist[bin_of(p)] += 1;
        }
    }
    hist
}

pub fn bin_of(p: f32) -> usize {
    ((p as f64 * OTSU_BINS as f64) as usize).min(OTSU_BINS - 1)
}

/// Between-class variance (up to a constant factor) of splitting the
/// histogram into bins `< k` and `>= k`, with bin index as the value.
pub fn between_class_variance(hist: &[u64; OTSU_BINS], k: usize) -> f64 {
    let (mut n0, mut s0, mut n1, mut s1) = (0u128, 0u128, 0u128, 0u128);
    for (i, &c) in hist.iter().enumerate() {
        if i < k {
            n0 += c as u128;
            s0 += c as u128 * i as u128;
        } else {
            n1 += c as u128;
            s1 += c as u128 * i as u128;
        }
    }
    if n0 == 0 || n1 == 0 {
        return 0.0;
    }
    let (a, b) = (n1 * s0, n0 * s1);
    let diff = if a >= b { (a - b) as f64 } else { (b - a) as f64 };
    diff * diff / (n0 as f64 * n1 as f64)
}

/// Otsu threshold `k / 256` maximizing between-class variance over
/// `k = 1..=255`, lowest `k` on ties.
pub fn otsu_from_histogram(hist: &[u64; OTSU_BINS]) -> Result<f64> {
    if hist.iter().filter(|&&c| c > 0).count() < 2 {
        return Err(Error::Degenerate(
            "Otsu threshold needs at least two distinct binned values inside the FOV".into(),
        ));
    }
    // running sums keep this linear in the bin count
    let total_n: u128 = hist.iter().map(|&c| c as u128).sum();
    let total_s: u128 = hist.iter().enumerate().map(|(i, &c)| c as u128 * i as u128).sum();
    let (mut n0, mut s0) = (0u128, 0u128);
    let mut best = (0usize, -1.0f64);
    for k in 1..OTSU_BINS {
        n0 += hist[k - 1] as u128;
        s0 += hist[k - 1] as u128 * (k - 1) as u128;
        let (n1, s1) = (total_n - n0, total_s - s0);
        if n0 == 0 || n1 == 0 {
            continue;
        }
        let (a, b) = (n1 * s0, n0 * s1);
        let diff = if a >= b { (a - b) as f64 } else { (b - a) as f64 };
        let var = diff * diff / (n0 as f64 * n1 as f64);
        if var > best.1 {
            best = (k, var);
        }
    }
    Ok(best.0 as f64 / OTSU_BINS as f64)
}

pub fn otsu_threshold(map: &ProbabilityMap) -> Result<f64> {
    otsu_from_histogram(&histogram([map]))
}

/// One threshold from the histogram of all maps' FOV pixels.
pub fn otsu_pooled(maps: &[ProbabilityMap]) -> Result<f64> {
    otsu_from_histogram(&histogram(maps))
}
