//! Dataset loading, normalization, jitter, patch sampling and stitching.

mod jitter;
mod load;
mod patches;
mod sample;
mod stats;
pub mod synth;

pub use jitter::{ColorJitter, JitterFactors};
pub use load::{load_dataset, load_sample, read_mask, read_rgb, DatasetSplit, Layout, IOSTAR_TRAIN};
pub use patches::{
    axis_anchors, coverage, crop, crop_into, epoch_order, paste, sample_training_patches, stitch, tile_plan, Anchor,
    BatchSource, PatchPlan, PatchPurpose, PatchSampling, PatchSet, TensorSet, PATCH_SIZE, TILE_STRIDE,
};
pub use sample::FundusSample;
pub use stats::ChannelStats;
