use crate::{Scalar, Shape};

/// Per-channel mean and biased variance over `(n, h, w)`, accumulated in f64.
pub fn channel_moments<T: Scalar>(shape: Shape, x: &[T]) -> (Vec<f64>, Vec<f64>) {
    let count = (shape.n * shape.plane()) as f64;
    let mut mean = vec![0.0f64; shape.c];
    let mut var = vec![0.0f64; shape.c];
    for (c, m) in mean.iter_mut().enumerate() {
        let mut s = 0.0;
        for n in 0..shape.n {
            let off = (n * shape.c + c) * shape.plane();
            s += x[off..off + shape.plane()].iter().map(|v| v.to_f64_lossy()).sum::<f64>();
        }
        *m = s / count;
    }
    for (c, v) in var.iter_mut().enumerate() {
        let mut s = 0.0;
        for n in 0..shape.n {
            let off = (n * shape.c + c) * shape.plane();
            s += x[off..off + shape.plane()]
                .iter()
                .map(|v| {
                    let d = v.to_f64_lossy() - mean[c];
                    d * d
                })
                .sum::<f64>();
        }
        *v = s / count;
    }
    (mean, var)
}

/// `y = gamma * (x - mean) * inv_std + beta` per channel.
pub fn normalize_forward<T: Scalar>(
    shape: Shape,
    x: &[T],
    mean: &[T],
    inv_std: &[T],
    gamma: &[T],
    beta: &[T],
) -> Vec<T> {
    let mut y = vec![T::zero(); x.len()];
    for n in 0..shape.n {
        for c in 0..shape.c {
            let off = (n * shape.c + c) * shape.plane();
            let scale = gamma[c] * inv_std[c];
            let shift = beta[c] - mean[c] * scale;
            for (o, &v) in y[off..off + shape.plane()].iter_mut().zip(&x[off..off + shape.plane()]) {
                *o = v * scale + shift;
            }
        }
    }
    y
}

pub struct NormGrads<T> {
    pub input: Vec<T>,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
}

/// Backward pass. With `batch_stats` the mean and variance are functions of
/// `x` (training mode); otherwise they are constants (inference mode).
pub fn normalize_backward<T: Scalar>(
    shape: Shape,
    x: &[T],
    mean: &[T],
    inv_std: &[T],
    gamma: &[T],
    dy: &[T],
    batch_stats: bool,
) -> NormGrads<T> {
    let plane = shape.plane();
    let count = (shape.n * plane) as f64;
    let mut dgamma = vec![T::zero(); shape.c];
    let mut dbeta = vec![T::zero(); shape.c];
    let mut dx = vec![T::zero(); x.len()];
    for c in 0..shape.c {
        let (mu, is) = (mean[c].to_f64_lossy(), inv_std[c].to_f64_lossy());
        let mut sum_dy = 0.0f64;
        let mut sum_dy_xhat = 0.0f64;
        for n in 0..shape.n {
            let off = (n * shape.c + c) * plane;
            for (&g, &v) in dy[off..off + plane].iter().zip(&x[off..off + plane]) {
                let g = g.to_f64_lossy();
                sum_dy += g;
                sum_dy_xhat += g * (v.to_f64_lossy() - mu) * is;
            }
        }
        dgamma[c] = T::from_f64_lossy(sum_dy_xhat);
        dbeta[c] = T::from_f64_lossy(sum_dy);
        let gscale = gamma[c].to_f64_lossy() * is;
        for n in 0..shape.n {
            let off = (n * shape.c + c) * plane;
            for ((o, &g), &v) in dx[off..off + plane]
                .iter_mut()
                .zip(&dy[off..off + plane])
                .zip(&x[off..off + plane])
            {
                let g = g.to_f64_lossy();
                let d = if batch_stats {
                    let xhat = (v.to_f64_lossy() - mu) * is;
                    gscale * (g - sum_dy / count - xhat * sum_dy_xhat / count)
                } else {
                    gscale * g
                };
                *o = T::from_f64_lossy(d);
            }
        }
    }
    NormGrads {
        input: dx,
        gamma: dgamma,
        beta: dbeta,
    }
}
