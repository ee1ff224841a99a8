use std::collections::HashMap;

use trivessel_tensor::{BatchNormState, Scalar, Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NormId(pub(crate) usize);

/// What a parameter tensor is, which decides how it is initialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamRole {
    /// Convolution kernel with the given fan-in (`in_channels * k * k`).
    Weight { fan_in: usize },
    Bias,
    Gamma,
    Beta,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T: Scalar> {
    pub name: String,
    pub role: ParamRole,
    /// Logical dimensions, e.g. `[out_c, in_c, k, k]` or `[c]`.
    pub dims: Vec<usize>,
    pub tensor: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormEntry<T: Scalar> {
    pub name: String,
    pub state: BatchNormState<T>,
}

/// Name-addressed registry of every trainable tensor and every batch-norm
/// running state in a model.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T: Scalar> {
    pub(crate) params: Vec<Param<T>>,
    pub(crate) norms: Vec<NormEntry<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        ParamStore {
            params: Vec::new(),
            norms: Vec::new(),
            index: HashMap::new(),
        }
    }
}

impl<T: Scalar> ParamStore<T> {
    pub(crate) fn add(&mut self, name: String, role: ParamRole, dims: Vec<usize>) -> ParamId {
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        let shape = match dims.as_slice() {
            [n, c, h, w] => Shape::new(*n, *c, *h, *w),
            [c] => Shape::new(*c, 1, 1, 1),
            other => panic!("unsupported parameter rank {}", other.len()),
        };
        let fill = match role {
            ParamRole::Gamma => T::one(),
            _ => T::zero(),
        };
        self.index.insert(name.clone(), self.params.len());
        self.params.push(Param {
            name,
            role,
            dims,
            tensor: Tensor::full(shape, fill),
        });
        ParamId(self.params.len() - 1)
    }

    pub(crate) fn add_norm(&mut self, name: String, channels: usize) -> NormId {
        self.norms.push(NormEntry {
            name,
            state: BatchNormState::uninitialized(channels),
        });
        NormId(self.norms.len() - 1)
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn norms(&self) -> &[NormEntry<T>] {
        &self.norms
    }

    pub fn norms_mut(&mut self) -> &mut [NormEntry<T>] {
        &mut self.norms
    }

    pub fn get(&self, name: &str) -> Option<&Param<T>> {
        self.index.get(name).map(|&i| &self.params[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param<T>> {
        self.index.get(name).map(|&i| &mut self.params[i])
    }

    pub fn param(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn param_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.params[id.0]
    }

    pub fn norm(&self, id: NormId) -> &NormEntry<T> {
        &self.norms[id.0]
    }

    pub fn norm_mut(&mut self, id: NormId) -> &mut NormEntry<T> {
        &mut self.norms[id.0]
    }

    /// Total trainable element count.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.tensor.zero_grad();
        }
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    role: p.role,
                    dims: p.dims.clone(),
                    tensor: p.tensor.cast(),
                })
                .collect(),
            norms: self
                .norms
                .iter()
                .map(|n| NormEntry {
                    name: n.name.clone(),
                    state: n.state.cast(),
                })
                .collect(),
            index: self.index.clone(),
        }
    }
}
