use proptest::prelude::*;
use trivessel_core::eval::{
    bin_of, confusion, evaluate_maps, metrics, oracle_self_test, otsu_threshold, roc_auc, ConfusionCounts,
    ProbabilityMap, ThresholdMode,
};
use trivessel_core::data::synth::{generate, SynthConfig};
use trivessel_core::Error;

fn scores_and_labels() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (2usize..300).prop_flat_map(|n| {
        (
            prop::collection::vec((0u32..40).prop_map(|v| v as f64 / 40.0), n),
            prop::collection::vec(any::<bool>(), n),
        )
            .prop_map(|(s, mut l)| {
                l[0] = true;
                l[1] = false;
                (s, l)
            })
    })
}

proptest! {
    #[test]
    fn auc_is_invariant_under_monotone_transforms((scores, labels) in scores_and_labels(), a in 0.1f64..5.0, b in -3.0f64..3.0) {
        let base = roc_auc(&scores, &labels).unwrap();
        let affine: Vec<f64> = scores.iter().map(|s| a * s + b).collect();
        let cubed: Vec<f64> = scores.iter().map(|s| (s - 0.3).powi(3)).collect();
        prop_assert!((roc_auc(&affine, &labels).unwrap() - base).abs() < 1e-12);
        prop_assert!((roc_auc(&cubed, &labels).unwrap() - base).abs() < 1e-12);
    }

    #[test]
    fn swapping_labels_complements_auc((scores, labels) in scores_and_labels()) {
        let flipped: Vec<bool> = labels.iter().map(|l| !l).collect();
        let sum = roc_auc(&scores, &labels).unwrap() + roc_auc(&scores, &flipped).unwrap();
        prop_assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn metrics_lie_in_unit_interval(tp in 1u64..10_000, tn in 1u64..10_000, fp in 0u64..10_000, fn_ in 0u64..10_000) {
        let r = metrics(&ConfusionCounts { tp, tn, fp, fn_ }).unwrap();
        for v in [r.accuracy, r.sensitivity, r.specificity, r.g_mean] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        prop_assert!((r.g_mean * r.g_mean - r.sensitivity * r.specificity).abs() < 1e-12);
    }

    #[test]
    fn otsu_matches_exhaustive_search(values in prop::collection::vec(0.0f32..=1.0, 4..400)) {
        let n = values.len();
        let map = ProbabilityMap::new("p", 1, n, values.clone(), vec![true; n]).unwrap();
        let bins: Vec<usize> = values.iter().map(|&v| bin_of(v)).collect();
        let mut best: Option<(usize, f64)> = None;
        for k in 1..256 {
            let lo: Vec<f64> = bins.iter().filter(|&&b| b < k).map(|&b| b as f64).collect();
            let hi: Vec<f64> = bins.iter().filter(|&&b| b >= k).map(|&b| b as f64).collect();
            if lo.is_empty() || hi.is_empty() {
                continue;
            }
            let (n0, n1) = (lo.len() as f64, hi.len() as f64);
            let v = (n1 * lo.iter().sum::<f64>() - n0 * hi.iter().sum::<f64>()).powi(2) / (n0 * n1);
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((k, v));
            }
        }
        match best {
            Some((k, _)) => prop_assert_eq!(otsu_threshold(&map).unwrap(), k as f64 / 256.0),
            None => prop_assert!(matches!(otsu_threshold(&map), Err(Error::Degenerate(_)))),
        }
    }
}

#[test]
fn auc_examples() {
    assert_eq!(roc_auc(&[0.9, 0.1], &[true, false]).unwrap(), 1.0);
    assert_eq!(roc_auc(&[0.1, 0.9], &[true, false]).unwrap(), 0.0);
    assert_eq!(roc_auc(&[0.5, 0.5, 0.5], &[true, false, false]).unwrap(), 0.5);
    assert!(matches!(roc_auc(&[0.2, 0.3], &[true, true]), Err(Error::UndefinedMetric { .. })));
}

#[test]
fn undefined_metrics_are_errors() {
    let no_positives = ConfusionCounts { tp: 0, fn_: 0, tn: 5, fp: 1 };
    assert!(matches!(metrics(&no_positives), Err(Error::UndefinedMetric { metric: "sensitivity", .. })));
    let no_negatives = ConfusionCounts { tp: 3, fn_: 1, tn: 0, fp: 0 };
    assert!(matches!(metrics(&no_negatives), Err(Error::UndefinedMetric { metric: "specificity", .. })));
}

#[test]
fn threshold_boundary_counts_as_vessel_and_fov_excludes_pixels() {
    let map = ProbabilityMap::new("m", 2, 2, vec![0.5, 0.49, 1.0, 0.0], vec![true, true, false, true]).unwrap();
    let c = confusion(&map, 0.5, &[true, false, false, true]).unwrap();
    assert_eq!((c.tp, c.fp, c.tn, c.fn_), (1, 0, 1, 1));
    assert_eq!(c.total(), 3);
}

#[test]
fn probabilities_outside_unit_interval_are_rejected() {
    assert!(ProbabilityMap::new("m", 1, 2, vec![0.5, 1.5], vec![true, true]).is_err());
    assert!(ProbabilityMap::new("m", 1, 2, vec![0.5, f32::NAN], vec![true, true]).is_err());
    assert!(ProbabilityMap::new("m", 1, 3, vec![0.5, 0.1], vec![true, true]).is_err());
}

#[test]
fn constant_map_has_no_otsu_threshold() {
    let map = ProbabilityMap::new("c", 2, 2, vec![0.3; 4], vec![true; 4]).unwrap();
    assert!(matches!(otsu_threshold(&map), Err(Error::Degenerate(_))));
}

#[test]
fn ground_truth_scores_one_in_every_mode() {
    let split = generate(&SynthConfig { train: 0, test: 3, height: 64, width: 64, seed: 2 });
    for mode in [ThresholdMode::PooledOtsu, ThresholdMode::PerImageOtsu, ThresholdMode::Fixed(0.5)] {
        let e = oracle_self_test(&split.test, mode).unwrap();
        let r = e.pooled;
        assert_eq!((r.accuracy, r.sensitivity, r.specificity, r.g_mean, r.auc), (1.0, 1.0, 1.0, 1.0, Some(1.0)));
        assert_eq!(e.per_image.len(), 3);
    }
}

#[test]
fn pooled_counts_sum_per_image_counts() {
    let a = ProbabilityMap::new("a", 1, 4, vec![0.9, 0.8, 0.2, 0.1], vec![true; 4]).unwrap();
    let b = ProbabilityMap::new("b", 1, 4, vec![0.7, 0.3, 0.6, 0.05], vec![true; 4]).unwrap();
    let truths = vec![vec![true, false, false, false], vec![true, false, true, false]];
    let e = evaluate_maps(&[a, b], &truths, ThresholdMode::Fixed(0.5)).unwrap();
    let total = e.per_image.iter().fold(ConfusionCounts::default(), |acc, i| acc + i.counts);
    assert_eq!((total.tp, total.fp, total.tn, total.fn_), (3, 1, 4, 0));
    assert_eq!(e.pooled.sensitivity, 1.0);
    assert_eq!(e.pooled.specificity, 0.8);
    assert_eq!(e.threshold, Some(0.5));
}
