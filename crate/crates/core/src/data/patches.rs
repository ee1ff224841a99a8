use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trivessel_tensor::{Scalar, Tensor};

use super::{ChannelStats, ColorJitter, FundusSample};
use crate::{Error, Result};

pub const PATCH_SIZE: usize = 96;
pub const TILE_STRIDE: usize = 30;

/// Top-left corner of a square crop from sample `sample`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Anchor {
    pub sample: usize,
    pub y: usize,
    pub x: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PatchPurpose {
    Train,
    Validation,
    Tile,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchPlan {
    pub patch: usize,
    pub purpose: PatchPurpose,
    pub anchors: Vec<Anchor>,
}

impl PatchPlan {
    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    /// Checks every anchor lies fully inside its sample.
    pub fn validate(&self, samples: &[FundusSample]) -> Result<()> {
        for a in &self.anchors {
            let s = samples
                .get(a.sample)
                .ok_or_else(|| Error::Dataset(format!("anchor refers to missing sample {}", a.sample)))?;
            if a.y + self.patch > s.height() || a.x + self.patch > s.width() {
                return Err(Error::Dataset(format!(
                    "anchor ({}, {}) with patch {} exceeds {} ({}x{})",
                    a.y,
                    a.x,
                    self.patch,
                    s.id,
                    s.height(),
                    s.width()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchSampling {
    pub patch: usize,
    pub per_image: usize,
    pub val_per_image: usize,
}

impl Default for PatchSampling {
    fn default() -> Self {
        PatchSampling {
            patch: PATCH_SIZE,
            per_image: 4000,
            val_per_image: 400,
        }
    }
}

/// Uniformly random crops per image; the first `val_per_image` of each
/// image's draws go to validation, the rest to training.
pub fn sample_training_patches(
    samples: &[FundusSample],
    cfg: PatchSampling,
    seed: u64,
) -> Result<(PatchPlan, PatchPlan)> {
    if cfg.val_per_image > cfg.per_image || cfg.patch == 0 {
        return Err(Error::Config(format!(
            "invalid patch sampling: {} validation of {} per image, patch {}",
            cfg.val_per_image, cfg.per_image, cfg.patch
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::with_capacity(samples.len() * (cfg.per_image - cfg.val_per_image));
    let mut val = Vec::with_capacity(samples.len() * cfg.val_per_image);
    for (i, s) in samples.iter().enumerate() {
        if s.height() < cfg.patch || s.width() < cfg.patch {
            return Err(Error::Dataset(format!(
                "{} is {}x{}, smaller than the {} pixel patch",
                s.id,
                s.width(),
                s.height(),
                cfg.patch
            )));
        }
        for k in 0..cfg.per_image {
            let a = Anchor {
                sample: i,
                y: rng.random_range(0..=s.height() - cfg.patch),
                x: rng.random_range(0..=s.width() - cfg.patch),
            };
            if k < cfg.val_per_image {
                val.push(a);
            } else {
                train.push(a);
            }
        }
    }
    Ok((
        PatchPlan {
            patch: cfg.patch,
            purpose: PatchPurpose::Train,
            anchors: train,
        },
        PatchPlan {
            patch: cfg.patch,
            purpose: PatchPurpose::Validation,
            anchors: val,
        },
    ))
}

/// Anchors along one axis: multiples of `stride` plus a final anchor at
/// `dim - patch` when the last multiple does not reach the edge.
pub fn axis_anchors(dim: usize, patch: usize, stride: usize) -> Result<Vec<usize>> {
    if dim < patch || patch == 0 || stride == 0 {
        return Err(Error::Dataset(format!(
            "cannot tile length {dim} with patch {patch} and stride {stride}"
        )));
    }
    let mut out: Vec<usize> = (0..=dim - patch).step_by(stride).collect();
    if out.last() != Some(&(dim - patch)) {
        out.push(dim - patch);
    }
    Ok(out)
}

/// Grid covering an `h x w` image, row-major.
pub fn tile_plan(h: usize, w: usize, patch: usize, stride: usize) -> Result<PatchPlan> {
    let ys = axis_anchors(h, patch, stride)?;
    let xs = axis_anchors(w, patch, stride)?;
    let anchors = ys
        .iter()
        .flat_map(|&y| xs.iter().map(move |&x| Anchor { sample: 0, y, x }))
        .collect();
    Ok(PatchPlan {
        patch,
        purpose: PatchPurpose::Tile,
        anchors,
    })
}

/// How many plan patches cover each pixel.
pub fn coverage(h: usize, w: usize, plan: &PatchPlan) -> Vec<u32> {
    let mut count = vec![0u32; h * w];
    for a in &plan.anchors {
        for y in a.y..a.y + plan.patch {
            count[y * w + a.x..y * w + a.x + plan.patch].iter_mut().for_each(|c| *c += 1);
        }
    }
    count
}

/// Per-pixel mean of overlapping patch outputs. `patches[i]` is the
/// row-major `patch x patch` output at `plan.anchors[i]`. Accumulation is
/// in f64, so averaging identical f32 values is exact.
pub fn stitch(h: usize, w: usize, plan: &PatchPlan, patches: &[&[f32]]) -> Result<Vec<f32>> {
    let p = plan.patch;
    if patches.len() != plan.anchors.len() {
        return Err(Error::Dataset(format!(
            "{} patch outputs for {} anchors",
            patches.len(),
            plan.anchors.len()
        )));
    }
    let mut sum = vec![0.0f64; h * w];
    let mut count = vec![0u32; h * w];
    for (a, values) in plan.anchors.iter().zip(patches) {
        if values.len() != p * p || a.y + p > h || a.x + p > w {
            return Err(Error::Dataset(format!("patch at ({}, {}) does not fit {h}x{w}", a.y, a.x)));
        }
        for dy in 0..p {
            let row = (a.y + dy) * w + a.x;
            for dx in 0..p {
                sum[row + dx] += values[dy * p + dx] as f64;
                count[row + dx] += 1;
            }
        }
    }
    sum.iter()
        .zip(&count)
        .enumerate()
        .map(|(i, (&s, &c))| {
            if c == 0 {
                Err(Error::Dataset(format!("pixel ({}, {}) is not covered", i / w, i % w)))
            } else {
                Ok((s / c as f64) as f32)
            }
        })
        .collect()
}

/// Copies a `(c, patch, patch)` crop of a `(1, c, h, w)` tensor into `out`.
pub fn crop_into<T: Scalar>(src: &Tensor<f32>, y: usize, x: usize, patch: usize, out: &mut [T]) {
    let s = src.shape();
    for c in 0..s.c {
        for dy in 0..patch {
            let from = s.index(0, c, y + dy, x);
            let to = (c * patch + dy) * patch;
            for (o, v) in out[to..to + patch].iter_mut().zip(&src.data()[from..from + patch]) {
                *o = T::from_f64_lossy(*v as f64);
            }
        }
    }
}

/// Crop of a `(1, c, h, w)` tensor as `(1, c, patch, patch)`.
pub fn crop(src: &Tensor<f32>, y: usize, x: usize, patch: usize) -> Tensor<f32> {
    let c = src.shape().c;
    let mut data = vec![0.0f32; c * patch * patch];
    crop_into(src, y, x, patch, &mut data);
    Tensor::from_vec([1, c, patch, patch], data).expect("crop size")
}

/// Writes a `(1, c, patch, patch)` tensor back into `dst` at `(y, x)`.
pub fn paste(dst: &mut Tensor<f32>, y: usize, x: usize, patch: &Tensor<f32>) {
    let (s, p) = (dst.shape(), patch.shape());
    for c in 0..p.c {
        for dy in 0..p.h {
            let to = s.index(0, c, y + dy, x);
            let from = p.index(0, c, dy, 0);
            dst.data_mut()[to..to + p.w].copy_from_slice(&patch.data()[from..from + p.w]);
        }
    }
}

/// Source of `(input, target)` mini-batches for training.
pub trait BatchSource<T: Scalar> {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Inputs `(b, c, h, w)` and targets `(b, 1, h, w)` for the given
    /// example indices. `epoch` feeds per-epoch randomness.
    fn batch(&self, indices: &[usize], epoch: usize) -> Result<(Tensor<T>, Tensor<T>)>;
}

/// Patches cropped on demand from raw samples, optionally jittered, then
/// mean-subtracted.
#[derive(Debug, Clone)]
pub struct PatchSet<'a> {
    pub samples: &'a [FundusSample],
    pub plan: PatchPlan,
    pub stats: ChannelStats,
    pub jitter: Option<ColorJitter>,
    pub seed: u64,
}

impl<'a> PatchSet<'a> {
    pub fn new(samples: &'a [FundusSample], plan: PatchPlan, stats: ChannelStats) -> Result<Self> {
        plan.validate(samples)?;
        Ok(PatchSet {
            samples,
            plan,
            stats,
            jitter: None,
            seed: 0,
        })
    }

    pub fn with_jitter(mut self, jitter: ColorJitter, seed: u64) -> Self {
        self.jitter = Some(jitter);
        self.seed = seed;
        self
    }

    /// The raw image and mask crops for one anchor, before jitter and
    /// normalization.
    pub fn raw(&self, index: usize) -> (Tensor<f32>, Tensor<f32>) {
        let a = self.plan.anchors[index];
        let s = &self.samples[a.sample];
        (crop(&s.image, a.y, a.x, self.plan.patch), crop(&s.vessel, a.y, a.x, self.plan.patch))
    }

    /// The prepared input for one anchor in a given epoch.
    pub fn input(&self, index: usize, epoch: usize) -> Vec<f32> {
        let (mut img, _) = self.raw(index);
        if let Some(j) = &self.jitter {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            rng.set_stream(epoch as u64);
            rng.set_word_pos(index as u128 * 16);
            j.apply(img.data_mut(), &mut rng);
        }
        self.stats.apply(img.data_mut());
        img.into_data()
    }
}

impl<T: Scalar> BatchSource<T> for PatchSet<'_> {
    fn len(&self) -> usize {
        self.plan.len()
    }

    fn batch(&self, indices: &[usize], epoch: usize) -> Result<(Tensor<T>, Tensor<T>)> {
        let p = self.plan.patch;
        let mut x = Vec::with_capacity(indices.len() * 3 * p * p);
        let mut y = vec![T::zero(); indices.len() * p * p];
        for (k, &i) in indices.iter().enumerate() {
            if i >= self.plan.len() {
                return Err(Error::Dataset(format!("patch index {i} out of range")));
            }
            x.extend(self.input(i, epoch).into_iter().map(|v| T::from_f64_lossy(v as f64)));
            let a = self.plan.anchors[i];
            crop_into(&self.samples[a.sample].vessel, a.y, a.x, p, &mut y[k * p * p..(k + 1) * p * p]);
        }
        Ok((
            Tensor::from_vec([indices.len(), 3, p, p], x)?,
            Tensor::from_vec([indices.len(), 1, p, p], y)?,
        ))
    }
}

/// Whole examples held in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorSet<T: Scalar> {
    pub inputs: Tensor<T>,
    pub targets: Tensor<T>,
}

impl<T: Scalar> BatchSource<T> for TensorSet<T> {
    fn len(&self) -> usize {
        self.inputs.shape().n
    }

    fn batch(&self, indices: &[usize], _epoch: usize) -> Result<(Tensor<T>, Tensor<T>)> {
        let pick = |t: &Tensor<T>| -> Result<Tensor<T>> {
            let items = indices.iter().map(|&i| t.batch_item(i)).collect::<Result<Vec<_>, _>>()?;
            Ok(Tensor::stack(&items)?)
        };
        Ok((pick(&self.inputs)?, pick(&self.targets)?))
    }
}

/// Seeded permutation of `0..n` for one epoch.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}
