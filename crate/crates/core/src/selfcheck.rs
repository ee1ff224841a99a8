//! Built-in consistency checks: finite-difference gradients, metric
//! oracles, tiling coverage and checkpoint round trips.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trivessel_tensor::gradcheck::{check_tape_gradients, GradCheckOptions};
use trivessel_tensor::{Result as TensorResult, TensorError, BatchNormConfig, BatchNormState, Mode, OpKind, Shape, Tape, Tensor, Var};

use crate::data::{coverage, stitch, tile_plan};
use crate::eval::{between_class_variance, histogram, otsu_from_histogram, roc_auc, ProbabilityMap, OTSU_BINS};
use crate::network::{NetworkConfig, TriNetwork};
use crate::{Error, Result};

/// Largest accepted norm-wise relative gradient error.
pub const GRADIENT_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Check {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }

    fn from_errors<E: std::fmt::Display>(name: &str, errors: std::result::Result<Vec<f64>, E>) -> Self {
        match errors {
            Ok(e) => {
                let worst = e.iter().copied().fold(0.0f64, f64::max);
                Check::new(name, worst < GRADIENT_TOLERANCE, format!("max relative error {worst:.2e}"))
            }
            Err(err) => Check::new(name, false, err.to_string()),
        }
    }
}

fn random(shape: impl Into<Shape>, rng: &mut ChaCha8Rng, scale: f64) -> Tensor<f64> {
    let shape = shape.into();
    let data = (0..shape.numel()).map(|_| rng.random_range(-scale..scale)).collect();
    Tensor::from_vec(shape, data).expect("shape")
}

/// Weighted sum, so every output element carries a distinct gradient.
fn probe(tape: &mut Tape<f64>, y: Var, salt: u64) -> TensorResult<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(salt);
    let target = random(tape.shape(y), &mut rng, 3.0);
    tape.mse_loss(y, &target)
}

/// Finite-difference checks of every differentiable op and of a small
/// three-branch network. `fault` corrupts one backward rule.
pub fn gradient_checks(fault: Option<OpKind>) -> Vec<Check> {
    let opts = GradCheckOptions {
        fault,
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut out = Vec::new();

    for (k, stride) in [(1, 1), (3, 1), (3, 2)] {
        let x = random([2, 3, 5, 6], &mut rng, 1.0);
        let w = random([4, 3, k, k], &mut rng, 0.5);
        let b = random([4, 1, 1, 1], &mut rng, 0.5);
        let e = check_tape_gradients(&[x, w, b], opts, |t, v| {
            let y = t.conv2d(v[0], v[1], Some(v[2]), stride, k / 2)?;
            probe(t, y, 1)
        });
        out.push(Check::from_errors(&format!("gradient conv {k}x{k} stride {stride}"), e));
    }

    let x = random([2, 2, 4, 6], &mut rng, 1.0);
    let e = check_tape_gradients(&[x], opts, |t, v| {
        let y = t.maxpool2x(v[0])?;
        probe(t, y, 2)
    });
    out.push(Check::from_errors("gradient max-pool", e));

    let x = random([2, 2, 3, 4], &mut rng, 1.0);
    let e = check_tape_gradients(&[x], opts, |t, v| {
        let y = t.upsample2x(v[0])?;
        probe(t, y, 3)
    });
    out.push(Check::from_errors("gradient bilinear upsample", e));

    let x = random([3, 2, 3, 3], &mut rng, 2.0);
    let g = random([2, 1, 1, 1], &mut rng, 1.5);
    let b = random([2, 1, 1, 1], &mut rng, 1.0);
    let e = check_tape_gradients(&[x, g, b], opts, |t, v| {
        let mut state = BatchNormState::new(2);
        let y = t.batch_norm_train(v[0], v[1], v[2], &mut state, BatchNormConfig::default())?;
        probe(t, y, 4)
    });
    out.push(Check::from_errors("gradient batch norm (train)", e));

    let x = random([2, 2, 3, 3], &mut rng, 2.0);
    let g = random([2, 1, 1, 1], &mut rng, 1.5);
    let b = random([2, 1, 1, 1], &mut rng, 1.0);
    let mut state = BatchNormState::new(2);
    state.set_running(vec![0.3, -0.2], vec![1.7, 0.6]);
    let e = check_tape_gradients(&[x, g, b], opts, |t, v| {
        let y = t.batch_norm_infer(v[0], v[1], v[2], &state, BatchNormConfig::default())?;
        probe(t, y, 5)
    });
    out.push(Check::from_errors("gradient batch norm (infer)", e));

    // keep inputs away from the ReLU kink
    let x = random([2, 2, 3, 3], &mut rng, 1.0).map(|v| if v.abs() < 0.05 { v + 0.1 } else { v });
    let e = check_tape_gradients(&[x], opts, |t, v| {
        let y = t.relu(v[0])?;
        probe(t, y, 6)
    });
    out.push(Check::from_errors("gradient relu", e));

    let x = random([2, 2, 3, 3], &mut rng, 3.0);
    let e = check_tape_gradients(&[x], opts, |t, v| {
        let y = t.sigmoid(v[0])?;
        probe(t, y, 7)
    });
    out.push(Check::from_errors("gradient sigmoid", e));

    let a = random([2, 2, 3, 3], &mut rng, 1.0);
    let b = random([2, 3, 3, 3], &mut rng, 1.0);
    let e = check_tape_gradients(&[a, b], opts, |t, v| {
        let y = t.concat_channels(v[0], v[1])?;
        probe(t, y, 8)
    });
    out.push(Check::from_errors("gradient concat", e));

    let a = random([2, 2, 3, 3], &mut rng, 1.0);
    let b = random([2, 2, 3, 3], &mut rng, 1.0);
    let e = check_tape_gradients(&[a, b], opts, |t, v| {
        let y = t.add(v[0], v[1])?;
        probe(t, y, 9)
    });
    out.push(Check::from_errors("gradient add", e));

    let p = random([2, 1, 3, 3], &mut rng, 1.0);
    let target = random([2, 1, 3, 3], &mut rng, 1.0);
    let e = check_tape_gradients(&[p], opts, |t, v| t.mse_loss(v[0], &target));
    out.push(Check::from_errors("gradient mse", e));

    let e = mini_network_gradients(opts);
    out.push(Check::from_errors("gradient mini three-branch network", e));
    out
}

/// Finite-difference check of every parameter of a two-level network.
pub fn mini_network_gradients(opts: GradCheckOptions) -> Result<Vec<f64>> {
    let net = TriNetwork::<f64>::new(NetworkConfig::with_widths(&[2], 4), 5)?;
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let x = random([2, 3, 4, 4], &mut rng, 1.0);
    let target = random([2, 1, 4, 4], &mut rng, 1.0).map(|v| (v > 0.0) as u8 as f64);
    let mut inputs = vec![x];
    inputs.extend(net.store().params().iter().map(|p| p.tensor.clone()));
    let errors = check_tape_gradients(&inputs, opts, |t, v| {
        let mut n = net.clone();
        let out = n
            .forward_with_params(t, v[0], v[1..].to_vec(), Mode::Train)
            .map_err(|e| match e {
                Error::Tensor(e) => e,
                other => TensorError::Usage(other.to_string()),
            })?;
        t.mse_loss(out.probability, &target)
    })?;
    Ok(errors)
}

fn brute_force_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] && !labels[j] {
                pairs += 1.0;
                wins += if si > sj {
                    1.0
                } else if si == sj {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    wins / pairs
}

/// AUC against pairwise counting, Otsu against exhaustive search, and the
/// g-mean arithmetic at two decimals.
pub fn metric_checks(instances: usize, seed: u64) -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst_auc = 0.0f64;
    for _ in 0..instances {
        let n = rng.random_range(2..400);
        let levels = rng.random_range(2..50);
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64 / levels as f64).collect();
        let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.3)).collect();
        labels[0] = true;
        labels[1] = false;
        match roc_auc(&scores, &labels) {
            Ok(a) => worst_auc = worst_auc.max((a - brute_force_auc(&scores, &labels)).abs()),
            Err(_) => worst_auc = f64::INFINITY,
        }
    }
    let mut otsu_ok = true;
    for i in 0..instances {
        let (h, w) = (rng.random_range(4..24), rng.random_range(4..24));
        let probs: Vec<f32> = (0..h * w).map(|_| rng.random::<f32>()).collect();
        let fov = (0..h * w).map(|_| rng.random_bool(0.8)).collect();
        let Ok(map) = ProbabilityMap::new(format!("m{i}"), h, w, probs, fov) else {
            otsu_ok = false;
            continue;
        };
        let hist = histogram([&map]);
        let Ok(t) = otsu_from_histogram(&hist) else {
            continue;
        };
        let mut best = (0, -1.0);
        for k in 1..OTSU_BINS {
            let v = between_class_variance(&hist, k);
            if v > best.1 {
                best = (k, v);
            }
        }
        otsu_ok &= t == best.0 as f64 / OTSU_BINS as f64;
    }
    let g = crate::eval::g_mean(0.81, 0.98);
    vec![
        Check::new("auc matches pairwise count", worst_auc < 1e-12, format!("max deviation {worst_auc:.1e}")),
        Check::new("otsu matches exhaustive search", otsu_ok, format!("{instances} maps")),
        Check::new(
            "g-mean arithmetic",
            format!("{g:.2}") == "0.89",
            format!("sqrt(0.81 * 0.98) = {g:.4}"),
        ),
    ]
}

/// Coverage and exact constant round trips for random image sizes.
pub fn tiling_checks(cases: usize, seed: u64) -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ok = true;
    let mut detail = String::new();
    for _ in 0..cases {
        let (h, w) = (rng.random_range(96..=400), rng.random_range(96..=400));
        let Ok(plan) = tile_plan(h, w, 96, 30) else {
            ok = false;
            continue;
        };
        if coverage(h, w, &plan).contains(&0) {
            ok = false;
            detail = format!("uncovered pixel in {h}x{w}");
        }
        let p: f32 = rng.random();
        let tile = vec![p; 96 * 96];
        let refs: Vec<&[f32]> = plan.anchors.iter().map(|_| tile.as_slice()).collect();
        if stitch(h, w, &plan, &refs).map_or(true, |s| s.iter().any(|&v| v != p)) {
            ok = false;
            detail = format!("constant {p} not reproduced for {h}x{w}");
        }
    }
    if detail.is_empty() {
        detail = format!("{cases} sizes");
    }
    vec![Check::new("tiling coverage and constant stitch", ok, detail)]
}

/// Save, reload and compare a small network bit for bit.
pub fn serialization_check(dir: &std::path::Path) -> Check {
    let run = || -> Result<bool> {
        let mut net = TriNetwork::<f32>::new(NetworkConfig::with_widths(&[2], 4), 8)?;
        let x = Tensor::from_fn([2, 3, 8, 8], |n, c, y, x| ((n + 2 * c + 3 * y + 5 * x) % 7) as f32 / 7.0);
        let y = Tensor::from_fn([2, 1, 8, 8], |_, _, y, x| ((y + x) % 2) as f32);
        net.loss_and_grads(&x, &y, Mode::Train)?;
        let path = dir.join("selftest.ckpt");
        crate::network::save_checkpoint(&path, &net, None, None)?;
        let loaded = crate::network::load_checkpoint::<f32>(&path)?.net;
        let _ = std::fs::remove_file(&path);
        let same_params = loaded
            .store()
            .params()
            .iter()
            .zip(net.store().params())
            .all(|(a, b)| a.name == b.name && a.tensor.data() == b.tensor.data());
        Ok(same_params && loaded.store().norms() == net.store().norms() && loaded.infer(&x)? == net.infer(&x)?)
    };
    match run() {
        Ok(ok) => Check::new("checkpoint round trip", ok, "bit-exact parameters and outputs"),
        Err(e) => Check::new("checkpoint round trip", false, e.to_string()),
    }
}

/// Every check; `fault` corrupts one backward rule as a negative control.
pub fn run_all(fault: Option<OpKind>, scratch: &std::path::Path) -> Vec<Check> {
    let mut checks = gradient_checks(fault);
    checks.extend(metric_checks(100, 1));
    checks.extend(tiling_checks(50, 2));
    checks.push(serialization_check(scratch));
    checks
}
