use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trivessel_tensor::gradcheck::{check_tape_gradients, central_difference, relative_error, GradCheckOptions};
use trivessel_tensor::{BatchNormConfig, BatchNormState, Mode, OpKind, Shape, Tape, Tensor, TensorError};

fn random(shape: impl Into<Shape>, seed: u64, scale: f64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = shape.into();
    Tensor::from_fn(shape, |_, _, _, _| rng.random_range(-1.0..1.0) * scale)
}

fn assert_grad_ok(errors: &[f64]) {
    for (i, e) in errors.iter().enumerate() {
        assert!(*e < 1e-5, "input {i}: relative error {e:e}");
    }
}

// ---------------------------------------------------------------- conv2d

#[test]
fn conv_identity_kernel_returns_input() {
    let x = random([2, 1, 5, 4], 1, 1.0);
    let mut t = Tape::new();
    let xv = t.leaf(x.clone());
    let w = t.leaf(Tensor::ones([1, 1, 1, 1]));
    let b = t.leaf(Tensor::zeros([1, 1, 1, 1]));
    let y = t.conv2d(xv, w, Some(b), 1, 0).unwrap();
    assert_eq!(t.value(y).data(), x.data());
}

#[test]
fn conv_all_ones_3x3() {
    let mut t = Tape::<f32>::new();
    let x = t.leaf(Tensor::ones([1, 1, 3, 3]));
    let w = t.leaf(Tensor::ones([1, 1, 3, 3]));
    let y = t.conv2d(x, w, None, 1, 1).unwrap();
    assert_eq!(t.value(y).data(), &[4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]);
}

#[test]
fn conv_of_zero_input_is_bias() {
    let mut t = Tape::<f32>::new();
    let x = t.leaf(Tensor::zeros([2, 3, 6, 6]));
    let w = t.leaf(random([2, 3, 3, 3], 2, 1.0).cast());
    let b = t.leaf(Tensor::from_vec([2, 1, 1, 1], vec![0.25, -1.5]).unwrap());
    let y = t.conv2d(x, w, Some(b), 2, 1).unwrap();
    let out = t.value(y);
    assert_eq!(out.shape(), Shape::new(2, 2, 3, 3));
    for n in 0..2 {
        for yy in 0..3 {
            for xx in 0..3 {
                assert_eq!(out.at(n, 0, yy, xx), 0.25);
                assert_eq!(out.at(n, 1, yy, xx), -1.5);
            }
        }
    }
}

#[test]
fn conv_output_size_is_ceil_of_stride() {
    for (h, w) in [(7, 5), (8, 9), (1, 1)] {
        let mut t = Tape::<f32>::new();
        let x = t.leaf(Tensor::zeros([1, 2, h, w]));
        let w3 = t.leaf(Tensor::zeros([4, 2, 3, 3]));
        let y = t.conv2d(x, w3, None, 2, 1).unwrap();
        assert_eq!(t.shape(y), Shape::new(1, 4, h.div_ceil(2), w.div_ceil(2)));
    }
}

#[test]
fn conv_errors() {
    let mut t = Tape::<f32>::new();
    let x = t.leaf(Tensor::zeros([1, 2, 4, 4]));
    let bad_c = t.leaf(Tensor::zeros([1, 3, 3, 3]));
    assert!(matches!(t.conv2d(x, bad_c, None, 1, 1), Err(TensorError::Shape { .. })));
    let k5 = t.leaf(Tensor::zeros([1, 2, 5, 5]));
    assert!(matches!(t.conv2d(x, k5, None, 1, 2), Err(TensorError::Config { .. })));
    let k3 = t.leaf(Tensor::zeros([1, 2, 3, 3]));
    assert!(matches!(t.conv2d(x, k3, None, 3, 1), Err(TensorError::Config { .. })));
}

fn conv_once(x: &Tensor<f64>, w: &Tensor<f64>, stride: usize) -> Tensor<f64> {
    let mut t = Tape::new();
    let xv = t.leaf(x.clone());
    let wv = t.leaf(w.clone());
    let k = w.shape().h;
    let y = t.conv2d(xv, wv, None, stride, k / 2).unwrap();
    t.value(y).clone()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn conv_is_linear(seed in 0u64..1000, alpha in -3.0f64..3.0, k in prop::sample::select(vec![1usize, 3]), stride in 1usize..=2) {
        let x = random([2, 2, 5, 6], seed, 1.0);
        let y = random([2, 2, 5, 6], seed + 1, 1.0);
        let w = random([3, 2, k, k], seed + 2, 1.0);
        let cx = conv_once(&x, &w, stride);
        let cy = conv_once(&y, &w, stride);
        let scaled = conv_once(&x.map(|v| alpha * v), &w, stride);
        let summed = conv_once(
            &Tensor::from_vec(x.shape(), x.data().iter().zip(y.data()).map(|(a, b)| a + b).collect()).unwrap(),
            &w,
            stride,
        );
        let want_scaled: Vec<f64> = cx.data().iter().map(|v| alpha * v).collect();
        let want_sum: Vec<f64> = cx.data().iter().zip(cy.data()).map(|(a, b)| a + b).collect();
        prop_assert!(relative_error(scaled.data(), &want_scaled) < 1e-5);
        prop_assert!(relative_error(summed.data(), &want_sum) < 1e-5);
    }
}

#[test]
fn conv_gradients_match_finite_differences() {
    for (k, stride) in [(1, 1), (1, 2), (3, 1), (3, 2)] {
        let inputs = [
            random([2, 3, 6, 6], 10 + k as u64, 1.0),
            random([2, 3, k, k], 20 + stride as u64, 1.0),
            random([2, 1, 1, 1], 30, 1.0),
        ];
        let errs = check_tape_gradients(&inputs, GradCheckOptions::default(), |t, v| {
            let y = t.conv2d(v[0], v[1], Some(v[2]), stride, k / 2)?;
            let s = t.sigmoid(y)?;
            t.sum(s)
        })
        .unwrap();
        assert_grad_ok(&errs);
    }
}

// ---------------------------------------------------------------- maxpool

#[test]
fn maxpool_examples() {
    let mut t = Tape::<f32>::new();
    let c = t.leaf(Tensor::full([1, 2, 4, 6], 3.5));
    let y = t.maxpool2x(c).unwrap();
    assert!(t.value(y).data().iter().all(|&v| v == 3.5));
    assert_eq!(t.shape(y), Shape::new(1, 2, 2, 3));

    let win = t.leaf(Tensor::from_vec([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let y = t.maxpool2x(win).unwrap();
    assert_eq!(t.value(y).data(), &[4.0]);

    let ramp = t.leaf(Tensor::from_vec([1, 1, 4, 4], (0..16).map(|v| v as f32).collect()).unwrap());
    let y = t.maxpool2x(ramp).unwrap();
    assert_eq!(t.value(y).data(), &[5.0, 7.0, 13.0, 15.0]);

    let odd = t.leaf(Tensor::zeros([1, 1, 3, 4]));
    assert!(matches!(t.maxpool2x(odd), Err(TensorError::Shape { .. })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn maxpool_equals_window_max_and_ignores_order(seed in 0u64..1000, perm in Just([3usize, 1, 0, 2])) {
        let x = random([1, 2, 4, 4], seed, 1.0);
        let mut permuted = x.clone();
        for c in 0..2 {
            for wy in 0..2 {
                for wx in 0..2 {
                    let cells: Vec<(usize, usize)> = vec![(0, 0), (0, 1), (1, 0), (1, 1)];
                    let vals: Vec<f64> = cells.iter().map(|&(dy, dx)| x.at(0, c, 2 * wy + dy, 2 * wx + dx)).collect();
                    for (i, &(dy, dx)) in cells.iter().enumerate() {
                        permuted.set(0, c, 2 * wy + dy, 2 * wx + dx, vals[perm[i]]);
                    }
                }
            }
        }
        let mut t = Tape::new();
        let a = t.leaf(x.clone());
        let b = t.leaf(permuted);
        let pa = t.maxpool2x(a).unwrap();
        let pb = t.maxpool2x(b).unwrap();
        prop_assert_eq!(t.value(pa).data(), t.value(pb).data());
        for c in 0..2 {
            for wy in 0..2 {
                for wx in 0..2 {
                    let m = [(0, 0), (0, 1), (1, 0), (1, 1)]
                        .iter()
                        .map(|&(dy, dx)| x.at(0, c, 2 * wy + dy, 2 * wx + dx))
                        .fold(f64::NEG_INFINITY, f64::max);
                    prop_assert_eq!(t.value(pa).at(0, c, wy, wx), m);
                }
            }
        }
    }
}

#[test]
fn maxpool_gradients_match_finite_differences() {
    let inputs = [random([2, 3, 6, 6], 40, 1.0)];
    let errs = check_tape_gradients(&inputs, GradCheckOptions::default(), |t, v| {
        let s = t.sigmoid(v[0])?;
        let y = t.maxpool2x(s)?;
        let z = t.sigmoid(y)?;
        t.sum(z)
    })
    .unwrap();
    assert_grad_ok(&errs);
}

// ---------------------------------------------------------------- upsample

#[test]
fn upsample_examples() {
    let mut t = Tape::<f64>::new();
    let c = t.leaf(Tensor::full([1, 1, 3, 2], -2.0));
    let y = t.upsample2x(c).unwrap();
    assert_eq!(t.shape(y), Shape::new(1, 1, 6, 4));
    assert!(t.value(y).data().iter().all(|&v| v == -2.0));

    let sq = t.leaf(Tensor::from_vec([1, 1, 2, 2], vec![0.0, 1.0, 2.0, 3.0]).unwrap());
    let y = t.upsample2x(sq).unwrap();
    assert_eq!(&t.value(y).data()[..4], &[0.0, 0.25, 0.75, 1.0]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn upsample_stays_within_input_bounds(seed in 0u64..1000, h in 1usize..6, w in 1usize..6) {
        let x = random([1, 2, h, w], seed, 5.0);
        let (lo, hi) = x.min_max().unwrap();
        let mut t = Tape::new();
        let v = t.leaf(x);
        let y = t.upsample2x(v).unwrap();
        for &o in t.value(y).data() {
            prop_assert!(o >= lo - 1e-12 && o <= hi + 1e-12);
        }
    }
}

#[test]
fn upsample_gradients_match_finite_differences() {
    let inputs = [random([2, 3, 3, 5], 50, 1.0)];
    let errs = check_tape_gradients(&inputs, GradCheckOptions::default(), |t, v| {
        let y = t.upsample2x(v[0])?;
        let z = t.sigmoid(y)?;
        t.sum(z)
    })
    .unwrap();
    assert_grad_ok(&errs);
}

// ---------------------------------------------------------------- batchnorm

fn bn_train(x: Tensor<f64>, gamma: f64, beta: f64) -> (Tensor<f64>, BatchNormState<f64>) {
    let c = x.shape().c;
    let mut state = BatchNormState::new(c);
    let mut t = Tape::new();
    let xv = t.leaf(x);
    let g = t.leaf(Tensor::full([c, 1, 1, 1], gamma));
    let b = t.leaf(Tensor::full([c, 1, 1, 1], beta));
    let y = t.batch_norm_train(xv, g, b, &mut state, BatchNormConfig::default()).unwrap();
    (t.value(y).clone(), state)
}

#[test]
fn batchnorm_constant_batch_maps_to_beta() {
    let x = Tensor::from_fn([3, 2, 4, 4], |_, c, _, _| if c == 0 { 7.0 } else { -1.0 });
    let (y, _) = bn_train(x.clone(), 1.0, 0.0);
    assert!(y.data().iter().all(|v| v.abs() <= 1e-5));
    let (y, _) = bn_train(x, 1.0, 5.0);
    assert!(y.data().iter().all(|v| (v - 5.0).abs() <= 1e-5));
}

fn channel_stats(y: &Tensor<f64>, c: usize) -> (f64, f64) {
    let s = y.shape();
    let vals: Vec<f64> = (0..s.n)
        .flat_map(|n| (0..s.h).flat_map(move |yy| (0..s.w).map(move |xx| (n, yy, xx))))
        .map(|(n, yy, xx)| y.at(n, c, yy, xx))
        .collect();
    let m = vals.iter().sum::<f64>() / vals.len() as f64;
    let v = vals.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / vals.len() as f64;
    (m, v)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn batchnorm_train_output_is_standardized(seed in 0u64..1000, shift in -5.0f64..5.0, scale in 1.0f64..4.0) {
        let x = random([4, 3, 5, 5], seed, scale).map(|v| v + shift);
        let (y, _) = bn_train(x, 1.0, 0.0);
        for c in 0..3 {
            let (m, v) = channel_stats(&y, c);
            prop_assert!(m.abs() < 1e-6, "mean {m}");
            prop_assert!((v - 1.0).abs() < 1e-4, "var {v}");
        }
    }
}

#[test]
fn batchnorm_updates_running_statistics() {
    let x = Tensor::from_vec([2, 1, 1, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let (_, state) = bn_train(x, 1.0, 0.0);
    // batch mean 2.5, unbiased variance 5/3
    let m = state.running_mean().unwrap()[0];
    let v = state.running_var().unwrap()[0];
    assert!((m - 0.25).abs() < 1e-12);
    assert!((v - (0.9 + 0.1 * 5.0 / 3.0)).abs() < 1e-12);
}

#[test]
fn batchnorm_infer_requires_running_statistics() {
    let state = BatchNormState::<f32>::uninitialized(2);
    let mut t = Tape::new();
    let x = t.leaf(Tensor::zeros([1, 2, 2, 2]));
    let g = t.leaf(Tensor::ones([2, 1, 1, 1]));
    let b = t.leaf(Tensor::zeros([2, 1, 1, 1]));
    let err = t.batch_norm_infer(x, g, b, &state, BatchNormConfig::default()).unwrap_err();
    assert!(matches!(err, TensorError::State { .. }));
}

#[test]
fn batchnorm_train_needs_two_values() {
    let mut state = BatchNormState::<f32>::new(1);
    let mut t = Tape::new();
    let x = t.leaf(Tensor::zeros([1, 1, 1, 1]));
    let g = t.leaf(Tensor::ones([1, 1, 1, 1]));
    let b = t.leaf(Tensor::zeros([1, 1, 1, 1]));
    assert!(t.batch_norm(x, g, b, &mut state, Mode::Train, BatchNormConfig::default()).is_err());
}

#[test]
fn batchnorm_gradients_match_finite_differences() {
    for mode in [Mode::Train, Mode::Infer] {
        let inputs = [
            random([2, 3, 4, 4], 60, 2.0),
            random([3, 1, 1, 1], 61, 1.0),
            random([3, 1, 1, 1], 62, 1.0),
            random([2, 3, 4, 4], 63, 1.0),
        ];
        let errs = check_tape_gradients(&inputs, GradCheckOptions::default(), |t, v| {
            let mut state = BatchNormState::new(3);
            state.set_running(vec![0.1, -0.2, 0.3], vec![0.5, 1.5, 2.0]);
            let y = t.batch_norm(v[0], v[1], v[2], &mut state, mode, BatchNormConfig::default())?;
            // weight the outputs so the loss is not invariant to normalization
            let w = t.add(y, v[3])?;
            let s = t.sigmoid(w)?;
            t.sum(s)
        })
        .unwrap();
        assert_grad_ok(&errs[..3]);
    }
}

// ---------------------------------------------------------------- activations

#[test]
fn relu_and_sigmoid_examples() {
    let mut t = Tape::<f64>::new();
    let x = t.leaf(Tensor::from_vec([1, 1, 1, 3], vec![-1.0, 0.0, 2.0]).unwrap());
    let r = t.relu(x).unwrap();
    assert_eq!(t.value(r).data(), &[0.0, 0.0, 2.0]);
    let z = t.leaf(Tensor::from_vec([1, 1, 1, 3], vec![0.0, 3.7, -3.7]).unwrap());
    let s = t.sigmoid(z).unwrap();
    let d = t.value(s).data();
    assert_eq!(d[0], 0.5);
    assert!((d[1] + d[2] - 1.0).abs() < 1e-15);
    // relu'(0) = 0
    let sum = t.sum(r).unwrap();
    let g = t.backward(sum).unwrap();
    assert_eq!(g.get(x).unwrap(), &[0.0, 0.0, 1.0]);
}

#[test]
fn sigmoid_is_strictly_inside_unit_interval_in_f32() {
    let mut t = Tape::<f32>::new();
    let x = t.leaf(Tensor::from_vec([1, 1, 1, 4], vec![-200.0, -30.0, 30.0, 200.0]).unwrap());
    let s = t.sigmoid(x).unwrap();
    for &v in t.value(s).data() {
        assert!(v > 0.0 && v < 1.0, "{v}");
    }
}

proptest! {
    #[test]
    fn activation_ranges(v in -50.0f64..50.0) {
        let mut t = Tape::<f64>::new();
        let x = t.leaf(Tensor::scalar(v));
        let r = t.relu(x).unwrap();
        let s = t.sigmoid(x).unwrap();
        prop_assert!(t.value(r).data()[0] >= 0.0);
        let sv = t.value(s).data()[0];
        prop_assert!(sv > 0.0 && sv < 1.0);
    }
}

#[test]
fn activation_gradients_match_finite_differences() {
    // keep relu inputs away from the kink
    let x = random([2, 3, 4, 4], 70, 1.0).map(|v| if v.abs() < 0.05 { v + 0.1 } else { v });
    let errs = check_tape_gradients(&[x], GradCheckOptions::default(), |t, v| {
        let r = t.relu(v[0])?;
        let s = t.sigmoid(r)?;
        t.sum(s)
    })
    .unwrap();
    assert_grad_ok(&errs);
}

// ---------------------------------------------------------------- concat / add

#[test]
fn concat_shapes_and_slice_back() {
    let a = random([2, 8, 3, 3], 80, 1.0);
    let b = random([2, 8, 3, 3], 81, 1.0);
    let mut t = Tape::new();
    let av = t.leaf(a.clone());
    let bv = t.leaf(b.clone());
    let c = t.concat_channels(av, bv).unwrap();
    assert_eq!(t.shape(c), Shape::new(2, 16, 3, 3));
    assert_eq!(t.value(c).slice_channels(0..8).unwrap(), a);
    assert_eq!(t.value(c).slice_channels(8..16).unwrap(), b);

    let s = t.sum(c).unwrap();
    let g = t.backward(s).unwrap();
    assert!(g.get(av).unwrap().iter().all(|&v| v == 1.0));
    assert!(g.get(bv).unwrap().iter().all(|&v| v == 1.0));

    let wrong = t.leaf(Tensor::zeros([2, 1, 4, 3]));
    assert!(matches!(t.concat_channels(av, wrong), Err(TensorError::Shape { .. })));
}

#[test]
fn concat_and_add_gradients_match_finite_differences() {
    let inputs = [random([2, 2, 3, 3], 82, 1.0), random([2, 3, 3, 3], 83, 1.0)];
    let errs = check_tape_gradients(&inputs, GradCheckOptions::default(), |t, v| {
        let c = t.concat_channels(v[0], v[1])?;
        let s = t.sigmoid(c)?;
        t.sum(s)
    })
    .unwrap();
    assert_grad_ok(&errs);

    let inputs = [random([2, 2, 3, 3], 84, 1.0), random([2, 2, 3, 3], 85, 1.0)];
    let errs = check_tape_gradients(&inputs, GradCheckOptions::default(), |t, v| {
        let c = t.add(v[0], v[1])?;
        t.sum(c)
    })
    .unwrap();
    assert_grad_ok(&errs);
}

#[test]
fn residual_add_examples() {
    let a = random([1, 2, 3, 3], 90, 1.0);
    let mut t = Tape::new();
    let av = t.leaf(a.clone());
    let z = t.leaf(Tensor::zeros(a.shape()));
    let s = t.add(av, z).unwrap();
    assert_eq!(t.value(s).data(), a.data());
    let d = t.add(av, av).unwrap();
    let want: Vec<f64> = a.data().iter().map(|v| 2.0 * v).collect();
    assert_eq!(t.value(d).data(), &want[..]);
    let wrong = t.leaf(Tensor::zeros([1, 2, 3, 4]));
    assert!(t.add(av, wrong).is_err());
}

// ---------------------------------------------------------------- loss / backward

#[test]
fn mse_examples() {
    let mut t = Tape::<f64>::new();
    let p = random([1, 1, 4, 4], 100, 1.0);
    let pv = t.leaf(p.clone());
    let l = t.mse_loss(pv, &p).unwrap();
    assert_eq!(t.value(l).item().unwrap(), 0.0);

    let ones = t.leaf(Tensor::ones([2, 1, 3, 3]));
    let l = t.mse_loss(ones, &Tensor::zeros([2, 1, 3, 3])).unwrap();
    assert_eq!(t.value(l).item().unwrap(), 1.0);

    let p = t.leaf(Tensor::from_vec([1, 1, 1, 2], vec![0.5, 0.0]).unwrap());
    let l = t.mse_loss(p, &Tensor::from_vec([1, 1, 1, 2], vec![1.0, 0.0]).unwrap()).unwrap();
    assert_eq!(t.value(l).item().unwrap(), 0.125);

    assert!(t.mse_loss(p, &Tensor::zeros([1, 1, 2, 1])).is_err());
}

#[test]
fn backward_of_sum_is_ones() {
    let mut t = Tape::<f32>::new();
    let x = t.leaf(Tensor::full([2, 3, 4, 5], 0.3));
    let s = t.sum(x).unwrap();
    let g = t.backward(s).unwrap();
    assert!(g.get(x).unwrap().iter().all(|&v| v == 1.0));
}

#[test]
fn single_weight_sigmoid_mse_matches_finite_difference() {
    let x = Tensor::from_vec([1, 1, 1, 3], vec![0.3, -1.2, 2.0]).unwrap();
    let target = Tensor::from_vec([1, 1, 1, 3], vec![1.0, 0.0, 1.0]).unwrap();
    let loss_at = |w: f64| {
        let mut t = Tape::new();
        let xv = t.constant(x.clone());
        let wv = t.leaf(Tensor::scalar(w));
        let y = t.conv2d(xv, wv, None, 1, 0).unwrap();
        let s = t.sigmoid(y).unwrap();
        let l = t.mse_loss(s, &target).unwrap();
        (t.value(l).item().unwrap(), t.backward(l).unwrap().get(wv).unwrap()[0])
    };
    let w0 = 0.7;
    let (_, analytic) = loss_at(w0);
    let numeric = central_difference(&[w0], 1e-6, |w| loss_at(w[0]).0)[0];
    assert!((analytic - numeric).abs() / numeric.abs() < 1e-5);
}

#[test]
fn fan_out_accumulates() {
    let mut t = Tape::<f64>::new();
    let x = t.leaf(Tensor::full([1, 1, 2, 2], 1.5));
    let y = t.sigmoid(x).unwrap();
    let y2 = t.add(y, y).unwrap();
    let s = t.sum(y2).unwrap();
    let g = t.backward(s).unwrap();
    assert!(g.get(y).unwrap().iter().all(|&v| v == 2.0));
}

#[test]
fn backward_requires_scalar() {
    let mut t = Tape::<f32>::new();
    let x = t.leaf(Tensor::zeros([1, 1, 2, 2]));
    assert!(matches!(t.backward(x), Err(TensorError::Usage(_))));
}

#[test]
fn constants_get_no_gradient() {
    let mut t = Tape::<f32>::new();
    let x = t.constant(Tensor::ones([1, 1, 2, 2]));
    let w = t.leaf(Tensor::ones([1, 1, 1, 1]));
    let y = t.conv2d(x, w, None, 1, 0).unwrap();
    let s = t.sum(y).unwrap();
    let g = t.backward(s).unwrap();
    assert!(g.get(x).is_none());
    assert_eq!(g.get(w).unwrap(), &[4.0]);
}

#[test]
fn backward_is_deterministic() {
    let x = random([5, 3, 8, 8], 110, 1.0).cast::<f32>();
    let w = random([4, 3, 3, 3], 111, 1.0).cast::<f32>();
    let mut t = Tape::new();
    let xv = t.leaf(x);
    let wv = t.leaf(w);
    let y = t.conv2d(xv, wv, None, 2, 1).unwrap();
    let p = t.upsample2x(y).unwrap();
    let s = t.sum(p).unwrap();
    let g1 = t.backward(s).unwrap();
    let g2 = t.backward(s).unwrap();
    assert_eq!(g1, g2);
}

#[test]
fn injected_fault_is_detected() {
    let inputs = [random([1, 2, 4, 4], 120, 1.0)];
    let build = |t: &mut Tape<f64>, v: &[trivessel_tensor::Var]| {
        let s = t.sigmoid(v[0])?;
        t.sum(s)
    };
    let clean = check_tape_gradients(&inputs, GradCheckOptions::default(), build).unwrap();
    assert!(clean[0] < 1e-5);
    let broken = check_tape_gradients(
        &inputs,
        GradCheckOptions {
            fault: Some(OpKind::Sigmoid),
            ..Default::default()
        },
        build,
    )
    .unwrap();
    assert!(broken[0] > 0.1);
}
