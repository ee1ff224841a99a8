//! Central finite-difference gradient checking in 64-bit.

use crate::tape::{OpKind, Tape, Var};
use crate::{Result, Tensor};

pub const DEFAULT_STEP: f64 = 1e-6;

/// Central differences `(f(x + h e_i) - f(x - h e_i)) / 2h` for every
/// coordinate of `x`.
pub fn central_difference(x: &[f64], step: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + step;
            let hi = f(&probe);
            probe[i] = orig - step;
            let lo = f(&probe);
            probe[i] = orig;
            (hi - lo) / (2.0 * step)
        })
        .collect()
}

/// `||a - b|| / max(||a||, ||b||)`, or 0 when both are exactly zero.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "relative_error: length mismatch");
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Corrupt this op's backward rule on the analytic tape only.
    pub fault: Option<OpKind>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: DEFAULT_STEP,
            fault: None,
        }
    }
}

/// Compares tape gradients of the scalar built by `build` against central
/// differences, returning one relative error per input tensor.
pub fn check_tape_gradients<F>(inputs: &[Tensor<f64>], opts: GradCheckOptions, build: F) -> Result<Vec<f64>>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    tape.inject_fault(opts.fault);
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = build(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let eval = |which: usize, data: &[f64]| -> f64 {
        let mut t = Tape::new();
        let vars: Vec<Var> = inputs
            .iter()
            .enumerate()
            .map(|(j, x)| {
                if j == which {
                    t.leaf(Tensor::from_vec(x.shape(), data.to_vec()).expect("same shape"))
                } else {
                    t.leaf(x.clone())
                }
            })
            .collect();
        let out = build(&mut t, &vars).expect("build succeeded on unperturbed inputs");
        t.value(out).data()[0]
    };

    let mut errors = Vec::with_capacity(inputs.len());
    for (i, (x, v)) in inputs.iter().zip(&vars).enumerate() {
        let numeric = central_difference(x.data(), opts.step, |d| eval(i, d));
        let analytic = grads
            .get(*v)
            .map(|g| g.to_vec())
            .unwrap_or_else(|| vec![0.0; x.numel()]);
        errors.push(relative_error(&analytic, &numeric));
    }
    Ok(errors)
}
