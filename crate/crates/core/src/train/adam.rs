use trivessel_tensor::{Scalar, TensorError};

use crate::network::ParamStore;
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment buffers, one per registered parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T: Scalar = f32> {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    /// Zero moments shaped like `store`.
    pub fn new(store: &ParamStore<T>, config: AdamConfig) -> Self {
        Self::with_sizes(store.params().iter().map(|p| p.tensor.numel()), config)
    }

    pub fn with_sizes(sizes: impl IntoIterator<Item = usize>, config: AdamConfig) -> Self {
        let (m, v) = sizes.into_iter().map(|n| (vec![T::zero(); n], vec![T::zero(); n])).unzip();
        AdamState { config, step: 0, m, v }
    }

    /// One bias-corrected Adam update of every parameter from its `grad`
    /// buffer. Parameters without a gradient are treated as having zero
    /// gradient.
    pub fn step(&mut self, store: &mut ParamStore<T>, lr: f64) -> Result<()> {
        let params = store.params_mut();
        if params.len() != self.m.len() {
            return Err(TensorError::Usage(format!(
                "optimizer tracks {} tensors, model has {}",
                self.m.len(),
                params.len()
            ))
            .into());
        }
        for (i, p) in params.iter().enumerate() {
            if p.tensor.numel() != self.m[i].len() {
                return Err(TensorError::Usage(format!(
                    "optimizer moment for {} has {} values, parameter has {}",
                    p.name,
                    self.m[i].len(),
                    p.tensor.numel()
                ))
                .into());
            }
        }
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        let (b1, b2) = (T::from_f64_lossy(beta1), T::from_f64_lossy(beta2));
        let (one_b1, one_b2) = (T::from_f64_lossy(1.0 - beta1), T::from_f64_lossy(1.0 - beta2));
        let step_size = T::from_f64_lossy(lr / c1);
        let inv_c2 = T::from_f64_lossy(1.0 / c2);
        let eps = T::from_f64_lossy(eps);
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let grad = p.tensor.grad.take();
            let g = grad.as_deref();
            for (j, theta) in p.tensor.data_mut().iter_mut().enumerate() {
                let gj = g.map_or(T::zero(), |g| g[j]);
                m[j] = b1 * m[j] + one_b1 * gj;
                v[j] = b2 * v[j] + one_b2 * gj * gj;
                *theta = *theta - step_size * m[j] / ((v[j] * inv_c2).sqrt() + eps);
            }
            p.tensor.grad = grad;
        }
        Ok(())
    }
}
