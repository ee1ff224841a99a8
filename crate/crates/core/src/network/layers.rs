use std::fmt;

use trivessel_tensor::{BatchNormConfig, Scalar, Tape, Var};

use super::params::{NormEntry, NormId, ParamId, ParamRole, ParamStore};
use crate::{Error, Result};

/// Filter type of a module block, and of the sub-network built from it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FilterKind {
    Conv1x1,
    Conv3x3,
    /// A 5x5 receptive field realized as two chained 3x3 convolutions.
    Factorized5x5,
}

impl FilterKind {
    pub const ALL: [FilterKind; 3] = [FilterKind::Conv1x1, FilterKind::Conv3x3, FilterKind::Factorized5x5];

    pub fn tag(self) -> &'static str {
        match self {
            FilterKind::Conv1x1 => "1x1",
            FilterKind::Conv3x3 => "3x3",
            FilterKind::Factorized5x5 => "5x5",
        }
    }

    /// Kernel sizes of the main filter chain.
    pub fn main_kernels(self) -> &'static [usize] {
        match self {
            FilterKind::Conv1x1 => &[1],
            FilterKind::Conv3x3 => &[3],
            FilterKind::Factorized5x5 => &[3, 3],
        }
    }
}

impl fmt::Display for FilterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl std::str::FromStr for FilterKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "1x1" => Ok(FilterKind::Conv1x1),
            "3x3" => Ok(FilterKind::Conv3x3),
            "5x5" => Ok(FilterKind::Factorized5x5),
            other => Err(Error::Config(format!("unknown filter kind {other:?}"))),
        }
    }
}

/// How a unit's convolution output is activated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
}

/// Mutable access to batch-norm state in training, shared in inference.
pub(crate) enum Norms<'a, T: Scalar> {
    Train(&'a mut [NormEntry<T>]),
    Infer(&'a [NormEntry<T>]),
}

/// Everything a layer needs to record itself on a tape.
pub(crate) struct Ctx<'a, T: Scalar> {
    pub tape: &'a mut Tape<T>,
    pub vars: &'a [Var],
    pub norms: Norms<'a, T>,
    pub bn: BatchNormConfig,
}

impl<T: Scalar> Ctx<'_, T> {
    fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    fn batch_norm(&mut self, x: Var, gamma: ParamId, beta: ParamId, norm: NormId) -> Result<Var> {
        let (g, b) = (self.var(gamma), self.var(beta));
        let out = match &mut self.norms {
            Norms::Train(n) => self.tape.batch_norm_train(x, g, b, &mut n[norm.0].state, self.bn)?,
            Norms::Infer(n) => self.tape.batch_norm_infer(x, g, b, &n[norm.0].state, self.bn)?,
        };
        Ok(out)
    }
}

/// Batch norm, then convolution, then activation.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvUnit {
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub activation: Activation,
    gamma: ParamId,
    beta: ParamId,
    norm: NormId,
    weight: ParamId,
    bias: ParamId,
}

impl ConvUnit {
    pub(crate) fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: String,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        activation: Activation,
    ) -> Self {
        let gamma = store.add(format!("{name}.bn.gamma"), ParamRole::Gamma, vec![in_channels]);
        let beta = store.add(format!("{name}.bn.beta"), ParamRole::Beta, vec![in_channels]);
        let norm = store.add_norm(format!("{name}.bn"), in_channels);
        let weight = store.add(
            format!("{name}.conv.weight"),
            ParamRole::Weight {
                fan_in: in_channels * kernel * kernel,
            },
            vec![out_channels, in_channels, kernel, kernel],
        );
        let bias = store.add(format!("{name}.conv.bias"), ParamRole::Bias, vec![out_channels]);
        ConvUnit {
            name,
            in_channels,
            out_channels,
            kernel,
            stride,
            activation,
            gamma,
            beta,
            norm,
            weight,
            bias,
        }
    }

    /// Parameters owned by this unit: conv weights and bias plus the
    /// batch-norm scale and shift of its input.
    pub fn param_count(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel * self.kernel + self.out_channels + 2 * self.in_channels
    }

    pub(crate) fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let normed = ctx.batch_norm(x, self.gamma, self.beta, self.norm)?;
        let conv = ctx.tape.conv2d(
            normed,
            ctx.var(self.weight),
            Some(ctx.var(self.bias)),
            self.stride,
            self.kernel / 2,
        )?;
        let out = match self.activation {
            Activation::Relu => ctx.tape.relu(conv)?,
            Activation::Sigmoid => ctx.tape.sigmoid(conv)?,
        };
        Ok(out)
    }

    pub fn gamma(&self) -> ParamId {
        self.gamma
    }

    pub fn beta(&self) -> ParamId {
        self.beta
    }

    pub fn weight(&self) -> ParamId {
        self.weight
    }

    pub fn bias(&self) -> ParamId {
        self.bias
    }
}

/// 1x1 projection on a residual shortcut whose input and output widths
/// differ. A bias-free convolution with no normalization or activation;
/// every consumer of a block output normalizes it per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub in_channels: usize,
    pub out_channels: usize,
    weight: ParamId,
}

impl Projection {
    fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, in_channels: usize, out_channels: usize) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            ParamRole::Weight { fan_in: in_channels },
            vec![out_channels, in_channels, 1, 1],
        );
        Projection {
            in_channels,
            out_channels,
            weight,
        }
    }

    pub fn param_count(&self) -> usize {
        self.in_channels * self.out_channels
    }

    fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        Ok(ctx.tape.conv2d(x, ctx.var(self.weight), None, 1, 0)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModuleBlockSpec {
    pub kind: FilterKind,
    pub in_channels: usize,
    pub out_channels: usize,
    /// Width of the leading 1x1 reduction; ignored for 1x1 blocks.
    pub reduce_channels: usize,
    pub stride: usize,
}

impl ModuleBlockSpec {
    /// Reduction width equal to the block's output width.
    pub fn new(kind: FilterKind, in_channels: usize, out_channels: usize) -> Self {
        ModuleBlockSpec {
            kind,
            in_channels,
            out_channels,
            reduce_channels: out_channels,
            stride: 1,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 || self.reduce_channels == 0 {
            return Err(Error::Config(format!("module block with a zero width: {self:?}")));
        }
        if self.stride != 1 {
            return Err(Error::Config(format!("module blocks run at stride 1, got {}", self.stride)));
        }
        Ok(())
    }
}

/// Optional 1x1 reduction, the kind's main filter chain, and a residual
/// shortcut from block input to block output.
#[derive(Debug, Clone, PartialEq)]
pub struct ModuleBlock {
    pub spec: ModuleBlockSpec,
    pub reduce: Option<ConvUnit>,
    pub main: Vec<ConvUnit>,
    pub shortcut: Option<Projection>,
}

impl ModuleBlock {
    pub(crate) fn build<T: Scalar>(store: &mut ParamStore<T>, name: &str, spec: ModuleBlockSpec) -> Result<Self> {
        spec.validate()?;
        let reduce = match spec.kind {
            FilterKind::Conv1x1 => None,
            _ => Some(ConvUnit::new(
                store,
                format!("{name}.reduce"),
                spec.in_channels,
                spec.reduce_channels,
                1,
                1,
                Activation::Relu,
            )),
        };
        let mut width = reduce.as_ref().map_or(spec.in_channels, |r| r.out_channels);
        let mut main = Vec::new();
        for (i, &k) in spec.kind.main_kernels().iter().enumerate() {
            main.push(ConvUnit::new(
                store,
                format!("{name}.main{i}"),
                width,
                spec.out_channels,
                k,
                1,
                Activation::Relu,
            ));
            width = spec.out_channels;
        }
        let shortcut = (spec.in_channels != spec.out_channels)
            .then(|| Projection::new(store, &format!("{name}.shortcut"), spec.in_channels, spec.out_channels));
        Ok(ModuleBlock {
            spec,
            reduce,
            main,
            shortcut,
        })
    }

    pub fn param_count(&self) -> usize {
        self.reduce.as_ref().map_or(0, ConvUnit::param_count)
            + self.main.iter().map(ConvUnit::param_count).sum::<usize>()
            + self.shortcut.as_ref().map_or(0, Projection::param_count)
    }

    /// Number of convolutions, counting the shortcut projection.
    pub fn conv_count(&self) -> usize {
        self.reduce.is_some() as usize + self.main.len() + self.shortcut.is_some() as usize
    }

    pub(crate) fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let mut h = x;
        if let Some(r) = &self.reduce {
            h = r.forward(ctx, h)?;
        }
        for unit in &self.main {
            h = unit.forward(ctx, h)?;
        }
        let skip = match &self.shortcut {
            Some(p) => p.forward(ctx, x)?,
            None => x,
        };
        Ok(ctx.tape.add(h, skip)?)
    }
}
