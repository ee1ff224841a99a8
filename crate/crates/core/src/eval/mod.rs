//! Thresholding, confusion counting, metrics, AUC, and report output.

mod auc;
mod confusion;
mod map;
mod metrics;
mod otsu;
mod output;
mod predict;

pub use auc::roc_auc;
pub use confusion::{confusion, ConfusionCounts};
pub use map::{mask_flags, ProbabilityMap};
pub use metrics::{g_mean, metrics, MetricReport};
pub use otsu::{between_class_variance, bin_of, histogram, otsu_from_histogram, otsu_pooled, otsu_threshold, OTSU_BINS};
pub use output::{
    metrics_csv, metrics_table, read_branch_bounds, read_probability_png, write_activation_png, write_binary_mask,
    write_branch_maps, write_probability_png, METRICS_HEADER,
};
pub use predict::{
    evaluate_dataset, evaluate_maps, oracle_self_test, predict_image, predict_samples, Evaluation, ImageEvaluation,
    ImagePrediction, ThresholdMode, TileOptions,
};
