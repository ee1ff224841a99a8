use crate::Scalar;

/// Whether batch normalization uses batch or running statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchNormConfig {
    pub eps: f64,
    /// Fraction of the batch statistic blended into the running estimate.
    pub momentum: f64,
}

impl Default for BatchNormConfig {
    fn default() -> Self {
        BatchNormConfig {
            eps: 1e-5,
            momentum: 0.1,
        }
    }
}

/// Running mean/variance of one batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState<T: Scalar = f32> {
    channels: usize,
    running: Option<(Vec<T>, Vec<T>)>,
}

impl<T: Scalar> BatchNormState<T> {
    /// State with no running statistics yet; inference is refused until
    /// [`BatchNormState::reset`] or a training step fills them.
    pub fn uninitialized(channels: usize) -> Self {
        BatchNormState {
            channels,
            running: None,
        }
    }

    /// Running mean 0, running variance 1.
    pub fn new(channels: usize) -> Self {
        let mut s = Self::uninitialized(channels);
        s.reset();
        s
    }

    pub fn reset(&mut self) {
        self.running = Some((vec![T::zero(); self.channels], vec![T::one(); self.channels]));
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn is_initialized(&self) -> bool {
        self.running.is_some()
    }

    pub fn running_mean(&self) -> Option<&[T]> {
        self.running.as_ref().map(|(m, _)| m.as_slice())
    }

    pub fn running_var(&self) -> Option<&[T]> {
        self.running.as_ref().map(|(_, v)| v.as_slice())
    }

    /// Overwrites running statistics, e.g. when loading a checkpoint.
    pub fn set_running(&mut self, mean: Vec<T>, var: Vec<T>) {
        assert_eq!(mean.len(), self.channels);
        assert_eq!(var.len(), self.channels);
        self.running = Some((mean, var));
    }

    /// Blends one batch's statistics into the running estimate.
    pub(crate) fn update(&mut self, batch_mean: &[f64], batch_var_unbiased: &[f64], momentum: f64) {
        let (m, v) = self
            .running
            .get_or_insert_with(|| (vec![T::zero(); batch_mean.len()], vec![T::one(); batch_mean.len()]));
        for c in 0..batch_mean.len() {
            let rm = m[c].to_f64_lossy();
            let rv = v[c].to_f64_lossy();
            m[c] = T::from_f64_lossy((1.0 - momentum) * rm + momentum * batch_mean[c]);
            v[c] = T::from_f64_lossy((1.0 - momentum) * rv + momentum * batch_var_unbiased[c]);
        }
    }

    pub fn cast<U: Scalar>(&self) -> BatchNormState<U> {
        let conv = |xs: &Vec<T>| xs.iter().map(|v| U::from_f64_lossy(v.to_f64_lossy())).collect();
        BatchNormState {
            channels: self.channels,
            running: self.running.as_ref().map(|(m, v)| (conv(m), conv(v))),
        }
    }
}
