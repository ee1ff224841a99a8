use rayon::prelude::*;
use trivessel_tensor::{Scalar, Tensor};

use super::{mask_flags, otsu_pooled, otsu_threshold, confusion, metrics, roc_auc, ConfusionCounts, MetricReport, ProbabilityMap};
use crate::data::{crop_into, stitch, tile_plan, ChannelStats, FundusSample, PATCH_SIZE, TILE_STRIDE};
use crate::network::TriNetwork;
use crate::{Error, Result};

/// Tiling parameters for full-image prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TileOptions {
    pub patch: usize,
    pub stride: usize,
    /// Tiles per forward pass.
    pub batch: usize,
}

impl Default for TileOptions {
    fn default() -> Self {
        TileOptions {
            patch: PATCH_SIZE,
            stride: TILE_STRIDE,
            batch: 16,
        }
    }
}

/// Stitched network outputs for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePrediction {
    pub map: ProbabilityMap,
    /// Stitched 1x1, 3x3 and 5x5 branch activations, row-major.
    pub branches: [Vec<f32>; 3],
}

/// Tiles a mean-subtracted `(1, 3, h, w)` image, runs inference on every
/// tile and averages overlaps.
pub fn predict_image<T: Scalar>(
    net: &TriNetwork<T>,
    id: &str,
    image: &Tensor<f32>,
    fov: Vec<bool>,
    opts: TileOptions,
) -> Result<ImagePrediction> {
    let s = image.shape();
    let plan = tile_plan(s.h, s.w, opts.patch, opts.stride)?;
    let p = opts.patch;
    let mut outputs: [Vec<Vec<f32>>; 4] = Default::default();
    for chunk in plan.anchors.chunks(opts.batch.max(1)) {
        let mut x = vec![T::zero(); chunk.len() * 3 * p * p];
        for (k, a) in chunk.iter().enumerate() {
            crop_into(image, a.y, a.x, p, &mut x[k * 3 * p * p..(k + 1) * 3 * p * p]);
        }
        let pred = net.infer(&Tensor::from_vec([chunk.len(), 3, p, p], x)?)?;
        let maps = [&pred.probability, &pred.branches[0], &pred.branches[1], &pred.branches[2]];
        for (out, t) in outputs.iter_mut().zip(maps) {
            out.extend(t.data().chunks(p * p).map(|c| c.iter().map(|v| v.to_f64_lossy() as f32).collect()));
        }
    }
    let stitched = outputs
        .iter()
        .map(|o| {
            let refs: Vec<&[f32]> = o.iter().map(Vec::as_slice).collect();
            stitch(s.h, s.w, &plan, &refs)
        })
        .collect::<Result<Vec<_>>>()?;
    let [probs, b1, b3, b5]: [Vec<f32>; 4] = stitched.try_into().expect("four maps");
    if probs.iter().any(|p| !p.is_finite()) {
        return Err(Error::Numerical(format!("{id}: non-finite probabilities")));
    }
    Ok(ImagePrediction {
        map: ProbabilityMap::new(id, s.h, s.w, probs, fov)?,
        branches: [b1, b3, b5],
    })
}

/// Normalizes and predicts every sample, in parallel across samples.
pub fn predict_samples<T: Scalar>(
    net: &TriNetwork<T>,
    samples: &[FundusSample],
    stats: &ChannelStats,
    opts: TileOptions,
) -> Result<Vec<ImagePrediction>> {
    samples
        .par_iter()
        .map(|s| {
            let normed = stats.normalize(s);
            predict_image(net, &s.id, &normed.image, mask_flags(s.fov.data()), opts)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThresholdMode {
    /// One Otsu threshold from all images' FOV pixels.
    PooledOtsu,
    /// An Otsu threshold per image; pooled counts sum the per-image counts.
    PerImageOtsu,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageEvaluation {
    pub id: String,
    pub threshold: f64,
    pub counts: ConfusionCounts,
    /// `None` when a metric is undefined for this image alone.
    pub report: Option<MetricReport>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    /// The pooled threshold, or `None` with per-image thresholds.
    pub threshold: Option<f64>,
    pub pooled: MetricReport,
    pub per_image: Vec<ImageEvaluation>,
}

/// Thresholds maps, counts FOV pixels against `truths`, and computes pooled
/// and per-image metrics including AUC.
pub fn evaluate_maps(maps: &[ProbabilityMap], truths: &[Vec<bool>], mode: ThresholdMode) -> Result<Evaluation> {
    if maps.is_empty() || maps.len() != truths.len() {
        return Err(Error::Dataset(format!("{} maps and {} truth masks", maps.len(), truths.len())));
    }
    let pooled_threshold = match mode {
        ThresholdMode::PooledOtsu => Some(otsu_pooled(maps)?),
        ThresholdMode::Fixed(t) => Some(t),
        ThresholdMode::PerImageOtsu => None,
    };
    let mut per_image = Vec::with_capacity(maps.len());
    let mut total = ConfusionCounts::default();
    let (mut scores, mut labels) = (Vec::new(), Vec::new());
    for (m, t) in maps.iter().zip(truths) {
        let threshold = match pooled_threshold {
            Some(t) => t,
            None => otsu_threshold(m)?,
        };
        let counts = confusion(m, threshold, t)?;
        total += counts;
        let (s, l): (Vec<f64>, Vec<bool>) = m
            .probs
            .iter()
            .zip(&m.fov)
            .zip(t)
            .filter(|((_, &f), _)| f)
            .map(|((&p, _), &t)| (p as f64, t))
            .unzip();
        let report = metrics(&counts).ok().map(|mut r| {
            r.auc = roc_auc(&s, &l).ok();
            r
        });
        scores.extend(s);
        labels.extend(l);
        per_image.push(ImageEvaluation {
            id: m.id.clone(),
            threshold,
            counts,
            report,
        });
    }
    let mut pooled = metrics(&total)?;
    pooled.auc = Some(roc_auc(&scores, &labels)?);
    Ok(Evaluation {
        threshold: pooled_threshold,
        pooled,
        per_image,
    })
}

/// Full protocol: normalize, tile, infer, stitch, threshold, count, score.
pub fn evaluate_dataset<T: Scalar>(
    net: &TriNetwork<T>,
    samples: &[FundusSample],
    stats: &ChannelStats,
    opts: TileOptions,
    mode: ThresholdMode,
) -> Result<(Evaluation, Vec<ImagePrediction>)> {
    let preds = predict_samples(net, samples, stats, opts)?;
    let maps: Vec<ProbabilityMap> = preds.iter().map(|p| p.map.clone()).collect();
    let truths: Vec<Vec<bool>> = samples.iter().map(|s| mask_flags(s.vessel.data())).collect();
    Ok((evaluate_maps(&maps, &truths, mode)?, preds))
}

/// Feeds the truth masks in as probability maps; every metric should be 1.
pub fn oracle_self_test(samples: &[FundusSample], mode: ThresholdMode) -> Result<Evaluation> {
    let maps = samples
        .iter()
        .map(|s| {
            ProbabilityMap::new(
                s.id.clone(),
                s.height(),
                s.width(),
                s.vessel.data().to_vec(),
                mask_flags(s.fov.data()),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let truths: Vec<Vec<bool>> = samples.iter().map(|s| mask_flags(s.vessel.data())).collect();
    evaluate_maps(&maps, &truths, mode)
}
