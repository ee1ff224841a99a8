use proptest::prelude::*;
use trivessel_core::data::synth::{generate, SynthConfig};
use trivessel_core::data::{ChannelStats, TensorSet};
use trivessel_core::network::{load_checkpoint, NetworkConfig, TriNetwork};
use trivessel_core::train::{history_csv, mean_loss, train, AdamConfig, AdamState, TrainOptions, TrainPlan, Trainer};
use trivessel_tensor::Tensor;

fn tiny_set(n: usize, size: usize, seed: u64) -> TensorSet<f32> {
    let split = generate(&SynthConfig { train: n, test: 0, height: size, width: size, seed });
    let stats = ChannelStats::compute(&split.train).unwrap();
    let xs: Vec<_> = split.train.iter().map(|s| stats.normalize(s).image).collect();
    let ys: Vec<_> = split.train.iter().map(|s| s.vessel.clone()).collect();
    TensorSet { inputs: Tensor::stack(&xs).unwrap(), targets: Tensor::stack(&ys).unwrap() }
}

/// Textbook Adam on one scalar, in f64.
fn reference_adam(theta: f64, grads: &[f64], lr: f64) -> f64 {
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    let (mut m, mut v, mut th) = (0.0, 0.0, theta);
    for (t, g) in grads.iter().enumerate() {
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let mh = m / (1.0 - b1.powi(t as i32 + 1));
        let vh = v / (1.0 - b2.powi(t as i32 + 1));
        th -= lr * mh / (vh.sqrt() + eps);
    }
    th
}

#[test]
fn adam_matches_reference_updates() {
    let mut net = TriNetwork::<f64>::new(NetworkConfig::with_widths(&[2], 4), 1).unwrap();
    let mut adam = AdamState::new(net.store(), AdamConfig::default());
    let start = net.store().params()[0].tensor.data()[0];
    let grads = [0.5, -1.25, 3.0, 0.0, 1e-3];
    for &g in &grads {
        for p in net.store_mut().params_mut() {
            p.tensor.grad = Some(vec![g; p.tensor.numel()]);
        }
        adam.step(net.store_mut(), 0.01).unwrap();
    }
    let got = net.store().params()[0].tensor.data()[0];
    assert!((got - reference_adam(start, &grads, 0.01)).abs() < 1e-12);
    assert_eq!(adam.step, 5);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn adam_keeps_parameters_finite(grads in prop::collection::vec(-1e6f64..1e6, 1..6), lr in 1e-6f64..1.0) {
        let mut net = TriNetwork::<f64>::new(NetworkConfig::with_widths(&[2], 4), 2).unwrap();
        let mut adam = AdamState::new(net.store(), AdamConfig::default());
        for g in grads {
            for p in net.store_mut().params_mut() {
                p.tensor.grad = Some(vec![g; p.tensor.numel()]);
            }
            adam.step(net.store_mut(), lr).unwrap();
        }
        prop_assert!(net.store().params().iter().all(|p| p.tensor.data().iter().all(|v| v.is_finite())));
    }

    #[test]
    fn schedule_is_geometric(base in 1e-5f64..1.0, decay in 0.5f64..1.0, epochs in 1usize..100) {
        let plan = TrainPlan { base_lr: base, decay, epochs, ..TrainPlan::default() };
        prop_assert_eq!(plan.lr_at(0).unwrap(), base);
        for e in 1..epochs {
            let ratio = plan.lr_at(e).unwrap() / plan.lr_at(e - 1).unwrap();
            prop_assert!((ratio - decay).abs() < 1e-12);
        }
        prop_assert!(plan.lr_at(epochs).is_err());
    }
}

#[test]
fn validation_leaves_running_statistics_alone() {
    let set = tiny_set(3, 32, 1);
    let mut trainer = Trainer::new(TriNetwork::<f32>::new(NetworkConfig::scaled(4), 0).unwrap());
    trainer.step(&set.inputs, &set.targets, 1e-3).unwrap();
    let before = trainer.net.store().norms().to_vec();
    let loss = mean_loss(&trainer.net, &set, 2).unwrap();
    assert!(loss.is_finite());
    assert_eq!(trainer.net.store().norms(), before.as_slice());
}

#[test]
fn overfit_loss_keeps_decreasing_over_windows() {
    let set = tiny_set(4, 48, 2);
    let mut trainer = Trainer::new(TriNetwork::<f32>::new(NetworkConfig::scaled(4), 0).unwrap());
    let losses: Vec<f64> = (0..150).map(|_| trainer.step(&set.inputs, &set.targets, 0.01).unwrap()).collect();
    let window_min: Vec<f64> = losses.chunks(50).map(|w| w.iter().copied().fold(f64::INFINITY, f64::min)).collect();
    assert!(window_min.windows(2).all(|w| w[1] < w[0]), "{window_min:?}");
}

#[test]
fn last_partial_batch_is_used_and_outputs_are_written() {
    let set = tiny_set(5, 32, 3);
    let dir = tempfile::tempdir().unwrap();
    let mut trainer = Trainer::new(TriNetwork::<f32>::new(NetworkConfig::scaled(4), 4).unwrap());
    let plan = TrainPlan { epochs: 2, batch_size: 2, seed: 1, checkpoint_every: 1, ..TrainPlan::default() };
    let opts = TrainOptions { checkpoint_dir: Some(dir.path().to_path_buf()), channel_mean: Some([0.1, 0.2, 0.3]) };
    let out = train(&mut trainer, &set, None, &plan, &opts).unwrap();
    // three updates per epoch: 2 + 2 + 1
    assert_eq!(trainer.adam.step, 6);
    assert_eq!(out.history.len(), 2);
    assert!(out.history.iter().all(|h| h.val_loss.is_none()));
    for f in ["best.ckpt", "last.ckpt", "epoch_0.ckpt", "epoch_1.ckpt"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    let last = load_checkpoint::<f32>(&dir.path().join("last.ckpt")).unwrap();
    assert_eq!(last.channel_mean, Some([0.1, 0.2, 0.3]));
    assert_eq!(last.adam.unwrap().step, 6);
    assert!(load_checkpoint::<f32>(&dir.path().join("best.ckpt")).unwrap().adam.is_none());
    let csv = history_csv(&out.history);
    assert!(csv.starts_with("epoch,lr,train_loss,val_loss\n0,0.0008,"));
}

#[test]
fn best_model_follows_lowest_validation_loss() {
    let train_set = tiny_set(4, 32, 5);
    let val_set = tiny_set(2, 32, 6);
    let mut trainer = Trainer::new(TriNetwork::<f32>::new(NetworkConfig::scaled(4), 5).unwrap());
    let plan = TrainPlan { epochs: 4, batch_size: 4, base_lr: 0.01, ..TrainPlan::default() };
    let out = train(&mut trainer, &train_set, Some(&val_set), &plan, &TrainOptions::default()).unwrap();
    let best = out
        .history
        .iter()
        .min_by(|a, b| a.val_loss.unwrap().total_cmp(&b.val_loss.unwrap()))
        .unwrap();
    assert_eq!(out.best_epoch, best.epoch);
    let recomputed = mean_loss(&out.best, &val_set, 4).unwrap();
    assert!((recomputed - best.val_loss.unwrap()).abs() < 1e-9);
}

#[test]
fn invalid_plans_are_rejected() {
    let set = tiny_set(1, 32, 1);
    let mut trainer = Trainer::new(TriNetwork::<f32>::new(NetworkConfig::scaled(4), 0).unwrap());
    for plan in [
        TrainPlan { epochs: 0, ..TrainPlan::default() },
        TrainPlan { batch_size: 0, ..TrainPlan::default() },
        TrainPlan { base_lr: -1.0, ..TrainPlan::default() },
    ] {
        assert!(train(&mut trainer, &set, None, &plan, &TrainOptions::default()).is_err());
    }
}

#[test]
fn diverging_training_reports_a_numerical_error() {
    let set = tiny_set(2, 32, 1);
    let mut trainer = Trainer::new(TriNetwork::<f32>::new(NetworkConfig::scaled(4), 0).unwrap());
    let mut x = set.inputs.clone();
    x.data_mut()[0] = f32::NAN;
    let err = trainer.step(&x, &set.targets, 1e-3).unwrap_err();
    assert!(matches!(err, trivessel_core::Error::Numerical(_)), "{err}");
}
