//! Reverse-mode gradient tape over [`Tensor`] values.
//!
//! Every operation appends a node holding its output value and whatever it
//! needs for its backward rule. Node indices are assigned in execution order,
//! so the node list is already a topological order and [`Tape::backward`] is
//! a single reverse sweep.

use crate::batchnorm::{BatchNormConfig, BatchNormState, Mode};
use crate::error::{shape_err, Result, TensorError};
use crate::kernels::{conv, norm, pool, upsample};
use crate::{Scalar, Shape, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operation kinds, used for diagnostics and fault injection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    Conv2d,
    MaxPool2x,
    Upsample2x,
    BatchNorm,
    Relu,
    Sigmoid,
    Concat,
    Add,
    Mse,
    Sum,
}

enum Op<T: Scalar> {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        geom: conv::ConvGeometry,
    },
    MaxPool2x {
        input: Var,
        argmax: Vec<usize>,
    },
    Upsample2x {
        input: Var,
    },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        mean: Vec<T>,
        inv_std: Vec<T>,
        batch_stats: bool,
    },
    Relu {
        input: Var,
    },
    Sigmoid {
        input: Var,
    },
    Concat {
        a: Var,
        b: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Mse {
        prediction: Var,
        target: Vec<T>,
    },
    Sum {
        input: Var,
    },
}

impl<T: Scalar> Op<T> {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::Conv2d { .. } => OpKind::Conv2d,
            Op::MaxPool2x { .. } => OpKind::MaxPool2x,
            Op::Upsample2x { .. } => OpKind::Upsample2x,
            Op::BatchNorm { .. } => OpKind::BatchNorm,
            Op::Relu { .. } => OpKind::Relu,
            Op::Sigmoid { .. } => OpKind::Sigmoid,
            Op::Concat { .. } => OpKind::Concat,
            Op::Add { .. } => OpKind::Add,
            Op::Mse { .. } => OpKind::Mse,
            Op::Sum { .. } => OpKind::Sum,
        }
    }
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T: Scalar> {
    grads: Vec<Option<Vec<T>>>,
    shapes: Vec<Shape>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn tensor(&self, v: Var) -> Option<Tensor<T>> {
        let g = self.get(v)?;
        Tensor::from_vec(self.shapes[v.0], g.to_vec()).ok()
    }
}

/// Records differentiable operations for one forward pass.
pub struct Tape<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
    fault: Option<OpKind>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            fault: None,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    /// Every recorded node in recording order.
    pub fn vars(&self) -> impl Iterator<Item = Var> {
        (0..self.nodes.len()).map(Var)
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Deliberately breaks the backward rule of `kind` (its input gradients
    /// are doubled). Exists so gradient checks can be shown to catch faults.
    #[doc(hidden)]
    pub fn inject_fault(&mut self, kind: Option<OpKind>) {
        self.fault = kind;
    }

    /// Records a differentiable input.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Records an input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    pub fn kind(&self, v: Var) -> OpKind {
        self.nodes[v.0].op.kind()
    }

    fn push(&mut self, mut value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        value.grad = None;
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn check(&self, v: Var) -> Result<()> {
        if v.0 >= self.nodes.len() {
            return Err(TensorError::Usage(format!("variable {} is not on this tape", v.0)));
        }
        Ok(())
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        self.check(input)?;
        self.check(weight)?;
        let geom = conv::ConvGeometry::new(self.shape(input), self.shape(weight), stride, padding)?;
        if let Some(b) = bias {
            self.check(b)?;
            if self.value(b).numel() != geom.out_channels {
                return Err(shape_err(
                    "conv2d",
                    format!("bias {} for {} output channels", self.shape(b), geom.out_channels),
                ));
            }
        }
        let out = conv::conv2d_forward(
            &geom,
            self.value(input).data(),
            self.value(weight).data(),
            bias.map(|b| self.value(b).data()),
        );
        let value = Tensor::from_vec(geom.output(), out)?;
        let mut deps = vec![input, weight];
        deps.extend(bias);
        let rg = self.needs(&deps);
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            },
            rg,
        ))
    }

    pub fn maxpool2x(&mut self, input: Var) -> Result<Var> {
        self.check(input)?;
        let shape = self.shape(input);
        let (vals, argmax) = pool::maxpool2x_forward(shape, self.value(input).data())?;
        let value = Tensor::from_vec(pool::maxpool2x_shape(shape)?, vals)?;
        let rg = self.needs(&[input]);
        Ok(self.push(value, Op::MaxPool2x { input, argmax }, rg))
    }

    pub fn upsample2x(&mut self, input: Var) -> Result<Var> {
        self.check(input)?;
        let shape = self.shape(input);
        if shape.h == 0 || shape.w == 0 {
            return Err(shape_err("bilinear_upsample2x", format!("empty input {shape}")));
        }
        let out = upsample::bilinear_upsample2x_forward(shape, self.value(input).data());
        let value = Tensor::from_vec(upsample::upsample2x_shape(shape), out)?;
        let rg = self.needs(&[input]);
        Ok(self.push(value, Op::Upsample2x { input }, rg))
    }

    /// Batch normalization with batch statistics; updates `state`'s running
    /// estimates.
    pub fn batch_norm_train(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        state: &mut BatchNormState<T>,
        cfg: BatchNormConfig,
    ) -> Result<Var> {
        self.check_norm_args(input, gamma, beta, state)?;
        let shape = self.shape(input);
        let count = shape.n * shape.plane();
        if count < 2 {
            return Err(shape_err(
                "batchnorm",
                format!("training mode needs at least 2 values per channel, input is {shape}"),
            ));
        }
        let (mean, var) = norm::channel_moments(shape, self.value(input).data());
        let unbiased: Vec<f64> = var.iter().map(|v| v * count as f64 / (count - 1) as f64).collect();
        state.update(&mean, &unbiased, cfg.momentum);
        let inv_std: Vec<T> = var.iter().map(|v| T::from_f64_lossy(1.0 / (v + cfg.eps).sqrt())).collect();
        let mean: Vec<T> = mean.into_iter().map(T::from_f64_lossy).collect();
        self.push_norm(input, gamma, beta, mean, inv_std, true)
    }

    /// Batch normalization with the running statistics in `state`.
    pub fn batch_norm_infer(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        state: &BatchNormState<T>,
        cfg: BatchNormConfig,
    ) -> Result<Var> {
        self.check_norm_args(input, gamma, beta, state)?;
        let (Some(mean), Some(var)) = (state.running_mean(), state.running_var()) else {
            return Err(TensorError::State {
                op: "batchnorm",
                detail: "inference requested before running statistics were initialized".into(),
            });
        };
        let inv_std = var
            .iter()
            .map(|v| T::from_f64_lossy(1.0 / (v.to_f64_lossy() + cfg.eps).sqrt()))
            .collect();
        let mean = mean.to_vec();
        self.push_norm(input, gamma, beta, mean, inv_std, false)
    }

    /// Dispatches on `mode`; training mode needs mutable state.
    pub fn batch_norm(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        state: &mut BatchNormState<T>,
        mode: Mode,
        cfg: BatchNormConfig,
    ) -> Result<Var> {
        match mode {
            Mode::Train => self.batch_norm_train(input, gamma, beta, state, cfg),
            Mode::Infer => self.batch_norm_infer(input, gamma, beta, state, cfg),
        }
    }

    fn check_norm_args(&self, input: Var, gamma: Var, beta: Var, state: &BatchNormState<T>) -> Result<()> {
        self.check(input)?;
        self.check(gamma)?;
        self.check(beta)?;
        let c = self.shape(input).c;
        let (g, b) = (self.value(gamma).numel(), self.value(beta).numel());
        if g != c || b != c || state.channels() != c {
            return Err(shape_err(
                "batchnorm",
                format!(
                    "input has {c} channels but gamma/beta/state have {g}/{b}/{}",
                    state.channels()
                ),
            ));
        }
        Ok(())
    }

    fn push_norm(&mut self, input: Var, gamma: Var, beta: Var, mean: Vec<T>, inv_std: Vec<T>, batch_stats: bool) -> Result<Var> {
        let shape = self.shape(input);
        let out = norm::normalize_forward(
            shape,
            self.value(input).data(),
            &mean,
            &inv_std,
            self.value(gamma).data(),
            self.value(beta).data(),
        );
        let value = Tensor::from_vec(shape, out)?;
        let rg = self.needs(&[input, gamma, beta]);
        Ok(self.push(
            value,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                mean,
                inv_std,
                batch_stats,
            },
            rg,
        ))
    }

    pub fn relu(&mut self, input: Var) -> Result<Var> {
        self.check(input)?;
        let value = self.value(input).map(|v| if v > T::zero() { v } else { T::zero() });
        let rg = self.needs(&[input]);
        Ok(self.push(value, Op::Relu { input }, rg))
    }

    /// Logistic function, clamped so the result stays strictly inside (0, 1)
    /// at the working precision.
    pub fn sigmoid(&mut self, input: Var) -> Result<Var> {
        self.check(input)?;
        let value = self.value(input).map(sigmoid);
        let rg = self.needs(&[input]);
        Ok(self.push(value, Op::Sigmoid { input }, rg))
    }

    /// Channel concatenation, `a`'s channels first.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let (sa, sb) = (self.shape(a), self.shape(b));
        if (sa.n, sa.h, sa.w) != (sb.n, sb.h, sb.w) {
            return Err(shape_err("concat_channels", format!("{sa} vs {sb}")));
        }
        let out_shape = Shape::new(sa.n, sa.c + sb.c, sa.h, sa.w);
        let mut data = Vec::with_capacity(out_shape.numel());
        let (da, db) = (self.value(a).data(), self.value(b).data());
        for n in 0..sa.n {
            data.extend_from_slice(&da[n * sa.item()..(n + 1) * sa.item()]);
            data.extend_from_slice(&db[n * sb.item()..(n + 1) * sb.item()]);
        }
        let value = Tensor::from_vec(out_shape, data)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, Op::Concat { a, b }, rg))
    }

    /// Elementwise sum of two same-shaped tensors.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(
                "residual_add",
                format!("{} vs {}", self.shape(a), self.shape(b)),
            ));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x + y)
            .collect();
        let value = Tensor::from_vec(self.shape(a), data)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, Op::Add { a, b }, rg))
    }

    /// Mean squared error against a constant target; a scalar node.
    pub fn mse_loss(&mut self, prediction: Var, target: &Tensor<T>) -> Result<Var> {
        self.check(prediction)?;
        let p = self.value(prediction);
        if p.shape() != target.shape() {
            return Err(shape_err("mse_loss", format!("{} vs {}", p.shape(), target.shape())));
        }
        let sum: f64 = p
            .data()
            .iter()
            .zip(target.data())
            .map(|(&a, &b)| {
                let d = (a - b).to_f64_lossy();
                d * d
            })
            .sum();
        let loss = sum / p.numel().max(1) as f64;
        let rg = self.needs(&[prediction]);
        Ok(self.push(
            Tensor::scalar(T::from_f64_lossy(loss)),
            Op::Mse {
                prediction,
                target: target.data().to_vec(),
            },
            rg,
        ))
    }

    /// Sum of all elements; a scalar node.
    pub fn sum(&mut self, input: Var) -> Result<Var> {
        self.check(input)?;
        let s: f64 = self.value(input).data().iter().map(|v| v.to_f64_lossy()).sum();
        let rg = self.needs(&[input]);
        Ok(self.push(Tensor::scalar(T::from_f64_lossy(s)), Op::Sum { input }, rg))
    }

    /// Reverse sweep from a scalar node. Gradients accumulate additively
    /// where a value fans out to several consumers.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        self.check(loss)?;
        if self.value(loss).numel() != 1 {
            return Err(TensorError::Usage(format!(
                "backward needs a scalar, node {} has shape {}",
                loss.0,
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if node.requires_grad {
                let scale = if self.fault == Some(node.op.kind()) {
                    T::from_f64_lossy(2.0)
                } else {
                    T::one()
                };
                for (target, mut contribution) in self.local_grads(node, &g) {
                    if !self.nodes[target.0].requires_grad {
                        continue;
                    }
                    if scale != T::one() {
                        contribution.iter_mut().for_each(|v| *v = *v * scale);
                    }
                    accumulate(&mut grads[target.0], contribution);
                }
            }
            grads[i] = Some(g);
        }

        // Only differentiable nodes report gradients.
        for (slot, node) in grads.iter_mut().zip(&self.nodes) {
            if !node.requires_grad {
                *slot = None;
            }
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes[..=loss.0].iter().map(|n| n.value.shape()).collect(),
        })
    }

    fn local_grads(&self, node: &Node<T>, g: &[T]) -> Vec<(Var, Vec<T>)> {
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => Vec::new(),
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            } => {
                let grads = conv::conv2d_backward(
                    geom,
                    self.value(*input).data(),
                    self.value(*weight).data(),
                    g,
                    wants(*input),
                );
                let mut out = vec![(*weight, grads.weight)];
                if let Some(dx) = grads.input {
                    out.push((*input, dx));
                }
                if let Some(b) = bias {
                    out.push((*b, grads.bias));
                }
                out
            }
            Op::MaxPool2x { input, argmax } => {
                vec![(*input, pool::maxpool2x_backward(self.shape(*input), argmax, g))]
            }
            Op::Upsample2x { input } => {
                vec![(*input, upsample::bilinear_upsample2x_backward(self.shape(*input), g))]
            }
            Op::BatchNorm {
                input,
                gamma,
                beta,
                mean,
                inv_std,
                batch_stats,
            } => {
                let grads = norm::normalize_backward(
                    self.shape(*input),
                    self.value(*input).data(),
                    mean,
                    inv_std,
                    self.value(*gamma).data(),
                    g,
                    *batch_stats,
                );
                vec![(*input, grads.input), (*gamma, grads.gamma), (*beta, grads.beta)]
            }
            Op::Relu { input } => {
                let x = self.value(*input).data();
                let d = g
                    .iter()
                    .zip(x)
                    .map(|(&gv, &xv)| if xv > T::zero() { gv } else { T::zero() })
                    .collect();
                vec![(*input, d)]
            }
            Op::Sigmoid { input } => {
                let s = node.value.data();
                let d = g.iter().zip(s).map(|(&gv, &sv)| gv * sv * (T::one() - sv)).collect();
                vec![(*input, d)]
            }
            Op::Concat { a, b } => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let mut ga = Vec::with_capacity(sa.numel());
                let mut gb = Vec::with_capacity(sb.numel());
                for n in 0..sa.n {
                    let off = n * (sa.item() + sb.item());
                    ga.extend_from_slice(&g[off..off + sa.item()]);
                    gb.extend_from_slice(&g[off + sa.item()..off + sa.item() + sb.item()]);
                }
                vec![(*a, ga), (*b, gb)]
            }
            Op::Add { a, b } => vec![(*a, g.to_vec()), (*b, g.to_vec())],
            Op::Mse { prediction, target } => {
                let p = self.value(*prediction).data();
                let k = g[0] * T::from_f64_lossy(2.0 / p.len().max(1) as f64);
                let d = p.iter().zip(target).map(|(&pv, &tv)| (pv - tv) * k).collect();
                vec![(*prediction, d)]
            }
            Op::Sum { input } => vec![(*input, vec![g[0]; self.value(*input).numel()])],
        }
    }
}

fn accumulate<T: Scalar>(slot: &mut Option<Vec<T>>, contribution: Vec<T>) {
    match slot {
        Some(acc) => acc.iter_mut().zip(&contribution).for_each(|(a, &c)| *a = *a + c),
        None => *slot = Some(contribution),
    }
}

/// Numerically stable logistic function, kept strictly inside (0, 1).
pub fn sigmoid<T: Scalar>(x: T) -> T {
    let one = T::one();
    let s = if x >= T::zero() {
        one / (one + (-x).exp())
    } else {
        let e = x.exp();
        e / (one + e)
    };
    let upper = one - T::epsilon() / T::from_f64_lossy(2.0);
    s.max(T::min_positive_value()).min(upper)
}
