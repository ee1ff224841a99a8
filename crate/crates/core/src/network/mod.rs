//! The three-branch segmentation network.
//!
//! Each branch is a U-net restricted to one filter kind (1x1, 3x3, or a
//! factorized 5x5). Branch outputs are single-channel post-ReLU maps that a
//! final batch-norm + 1x1 convolution + sigmoid combines into a vessel
//! probability.

mod checkpoint;
mod layers;
mod params;
mod subnet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use trivessel_tensor::{BatchNormConfig, Gradients, Mode, Scalar, Shape, Tape, Tensor, TensorError, Var};

pub use checkpoint::{load_checkpoint, Checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use layers::{Activation, ConvUnit, FilterKind, ModuleBlock, ModuleBlockSpec, Projection};
pub use params::{NormEntry, NormId, Param, ParamId, ParamRole, ParamStore};
pub use subnet::{DecoderStep, Downsample, DownsampleKind, SubNetwork, SubNetworkConfig};

use layers::{Ctx, Norms};
use crate::{Error, Result};

/// Per-branch configurations, in [`FilterKind::ALL`] order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkConfig {
    pub branches: Vec<SubNetworkConfig>,
}

impl NetworkConfig {
    pub fn standard() -> Self {
        NetworkConfig {
            branches: FilterKind::ALL.iter().map(|&k| SubNetworkConfig::standard(k)).collect(),
        }
    }

    pub fn with_widths(encoder: &[usize], bottleneck: usize) -> Self {
        NetworkConfig {
            branches: FilterKind::ALL
                .iter()
                .map(|&k| SubNetworkConfig::with_widths(k, encoder, bottleneck))
                .collect(),
        }
    }

    /// The standard schedule with every width divided by `factor`.
    pub fn scaled(factor: usize) -> Self {
        NetworkConfig {
            branches: Self::standard().branches.iter().map(|b| b.scaled(factor)).collect(),
        }
    }

    /// Input height and width must be multiples of this.
    pub fn spatial_multiple(&self) -> usize {
        1 << self.branches.iter().map(SubNetworkConfig::depth).max().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.branches.len() != 3 {
            return Err(Error::Config(format!("expected 3 branches, got {}", self.branches.len())));
        }
        for (b, kind) in self.branches.iter().zip(FilterKind::ALL) {
            if b.kind != kind {
                return Err(Error::Config(format!("branch order must be 1x1, 3x3, 5x5; found {}", b.kind)));
            }
            if b.input_channels != self.branches[0].input_channels {
                return Err(Error::Config("branches disagree on input channels".into()));
            }
            b.validate()?;
        }
        Ok(())
    }
}

/// Output of one forward pass recorded on a tape.
#[derive(Debug, Clone)]
pub struct ForwardVars {
    pub probability: Var,
    pub branches: [Var; 3],
    /// Tape handles of the parameters, in registry order.
    pub params: Vec<Var>,
}

/// Materialized forward output.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction<T: Scalar> {
    pub probability: Tensor<T>,
    pub branches: [Tensor<T>; 3],
}

/// Parameter accounting.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParameterCount {
    /// Sum of registered tensor sizes.
    pub total: usize,
    /// Closed-form count from the layer structure.
    pub formula: usize,
    /// `(layer, count)` in registration order, e.g. `("sub3x3.l5", 1234)`.
    pub per_layer: Vec<(String, usize)>,
}

impl ParameterCount {
    /// Aligned text table with a total row.
    pub fn table(&self) -> String {
        let width = self.per_layer.iter().map(|(n, _)| n.len()).max().unwrap_or(5).max(5);
        let mut out = format!("{:<width$}  {:>10}\n", "layer", "params");
        for (name, n) in &self.per_layer {
            out.push_str(&format!("{name:<width$}  {n:>10}\n"));
        }
        out.push_str(&format!("{:<width$}  {:>10}\n", "total", self.total));
        out
    }
}

pub const BRANCH_PREFIXES: [&str; 3] = ["sub1x1", "sub3x3", "sub5x5"];

#[derive(Debug, Clone, PartialEq)]
pub struct TriNetwork<T: Scalar = f32> {
    config: NetworkConfig,
    store: ParamStore<T>,
    branches: Vec<SubNetwork>,
    combiner: ConvUnit,
    bn: BatchNormConfig,
}

impl<T: Scalar> TriNetwork<T> {
    /// Builds the network and applies He initialization from `seed`.
    pub fn new(config: NetworkConfig, seed: u64) -> Result<Self> {
        let mut net = Self::build(config)?;
        net.he_init(seed);
        Ok(net)
    }

    /// Builds the network with all weights zero, gammas one, and no
    /// running statistics.
    pub fn build(config: NetworkConfig) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::default();
        let branches = config
            .branches
            .iter()
            .zip(BRANCH_PREFIXES)
            .map(|(c, prefix)| SubNetwork::build(&mut store, prefix, c.clone()))
            .collect::<Result<Vec<_>>>()?;
        let combined: usize = config.branches.iter().map(|b| b.output_channels).sum();
        let combiner = ConvUnit::new(&mut store, "l11".into(), combined, 1, 1, 1, Activation::Sigmoid);
        Ok(TriNetwork {
            config,
            store,
            branches,
            combiner,
            bn: BatchNormConfig::default(),
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn branches(&self) -> &[SubNetwork] {
        &self.branches
    }

    pub fn combiner(&self) -> &ConvUnit {
        &self.combiner
    }

    pub fn batch_norm_config(&self) -> BatchNormConfig {
        self.bn
    }

    /// Zero-mean Gaussian convolution weights with variance `2 / fan_in`,
    /// zero biases, unit gammas, zero betas, and reset running statistics.
    pub fn he_init(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for p in self.store.params_mut() {
            match p.role {
                ParamRole::Weight { fan_in } => he_normal(&mut rng, fan_in, p.tensor.data_mut()),
                ParamRole::Bias | ParamRole::Beta => p.tensor.data_mut().iter_mut().for_each(|v| *v = T::zero()),
                ParamRole::Gamma => p.tensor.data_mut().iter_mut().for_each(|v| *v = T::one()),
            }
            p.tensor.grad = None;
        }
        for n in self.store.norms_mut() {
            n.state.reset();
        }
    }

    pub fn count_parameters(&self) -> ParameterCount {
        let mut per_layer: Vec<(String, usize)> = Vec::new();
        for p in self.store.params() {
            let layer = layer_of(&p.name);
            match per_layer.last_mut() {
                Some((name, n)) if *name == layer => *n += p.tensor.numel(),
                _ => per_layer.push((layer, p.tensor.numel())),
            }
        }
        ParameterCount {
            total: self.store.numel(),
            formula: self.branches.iter().map(SubNetwork::param_count).sum::<usize>() + self.combiner.param_count(),
            per_layer,
        }
    }

    pub fn check_input(&self, shape: Shape) -> Result<()> {
        let c = self.config.branches[0].input_channels;
        let m = self.config.spatial_multiple();
        if shape.c != c {
            return Err(Error::Tensor(TensorError::Shape {
                op: "forward",
                detail: format!("expected {c} input channels, got {shape}"),
            }));
        }
        if shape.h == 0 || shape.w == 0 || shape.h % m != 0 || shape.w % m != 0 {
            return Err(Error::Tensor(TensorError::Shape {
                op: "forward",
                detail: format!("spatial size {}x{} is not a positive multiple of {m}", shape.h, shape.w),
            }));
        }
        Ok(())
    }

    /// Records a forward pass. Training mode uses batch statistics and
    /// updates running estimates; inference mode reads them.
    pub fn forward(&mut self, tape: &mut Tape<T>, input: Var, mode: Mode) -> Result<ForwardVars> {
        let params: Vec<Var> = self.store.params.iter().map(|p| tape.leaf(p.tensor.clone())).collect();
        self.forward_with_params(tape, input, params, mode)
    }

    /// Like [`TriNetwork::forward`] but reads parameters from existing tape
    /// variables, one per registered parameter in registry order.
    pub fn forward_with_params(
        &mut self,
        tape: &mut Tape<T>,
        input: Var,
        params: Vec<Var>,
        mode: Mode,
    ) -> Result<ForwardVars> {
        self.check_input(tape.shape(input))?;
        if params.len() != self.store.params.len() {
            return Err(Error::Tensor(TensorError::Usage(format!(
                "{} parameter variables for {} parameters",
                params.len(),
                self.store.params.len()
            ))));
        }
        for (v, p) in params.iter().zip(&self.store.params) {
            if tape.shape(*v) != p.tensor.shape() {
                return Err(Error::Tensor(TensorError::Shape {
                    op: "forward",
                    detail: format!("variable for {} has shape {}", p.name, tape.shape(*v)),
                }));
            }
        }
        let norms = match mode {
            Mode::Train => Norms::Train(&mut self.store.norms),
            Mode::Infer => Norms::Infer(&self.store.norms),
        };
        let mut ctx = Ctx {
            tape,
            vars: &params,
            norms,
            bn: self.bn,
        };
        let (probability, branches) = run(&self.branches, &self.combiner, &mut ctx, input)?;
        Ok(ForwardVars {
            probability,
            branches,
            params,
        })
    }

    /// Inference without gradient tracking. Takes `&self`, so a trained
    /// network can serve several threads at once.
    pub fn infer(&self, input: &Tensor<T>) -> Result<Prediction<T>> {
        self.check_input(input.shape())?;
        let mut tape = Tape::new();
        let x = tape.constant(input.clone());
        let params: Vec<Var> = self.store.params.iter().map(|p| tape.constant(p.tensor.clone())).collect();
        let mut ctx = Ctx {
            tape: &mut tape,
            vars: &params,
            norms: Norms::Infer(&self.store.norms),
            bn: self.bn,
        };
        let (probability, branches) = run(&self.branches, &self.combiner, &mut ctx, x)?;
        Ok(Prediction {
            probability: tape.value(probability).clone(),
            branches: branches.map(|b| tape.value(b).clone()),
        })
    }

    /// Adds tape gradients of the parameters into their `grad` buffers.
    pub fn accumulate_grads(&mut self, grads: &Gradients<T>, params: &[Var]) -> Result<()> {
        for (p, v) in self.store.params.iter_mut().zip(params) {
            match grads.get(*v) {
                Some(g) => p.tensor.accumulate_grad(g)?,
                None => p.tensor.accumulate_grad(&vec![T::zero(); p.tensor.numel()])?,
            }
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        self.store.zero_grads();
    }

    /// Zeroes gradients, runs forward + MSE + backward, and leaves parameter
    /// gradients in place. Returns the loss.
    pub fn loss_and_grads(&mut self, input: &Tensor<T>, target: &Tensor<T>, mode: Mode) -> Result<f64> {
        self.zero_grads();
        let mut tape = Tape::new();
        let x = tape.constant(input.clone());
        let out = self.forward(&mut tape, x, mode)?;
        let loss = tape.mse_loss(out.probability, target)?;
        let grads = tape.backward(loss)?;
        self.accumulate_grads(&grads, &out.params)?;
        Ok(tape.value(loss).item()?.to_f64_lossy())
    }

    /// Same network in another precision.
    pub fn cast<U: Scalar>(&self) -> TriNetwork<U> {
        TriNetwork {
            config: self.config.clone(),
            store: self.store.cast(),
            branches: self.branches.clone(),
            combiner: self.combiner.clone(),
            bn: self.bn,
        }
    }
}

/// Fills `out` with draws from N(0, 2 / fan_in).
pub fn he_normal<T: Scalar>(rng: &mut impl Rng, fan_in: usize, out: &mut [T]) {
    let normal = Normal::new(0.0, (2.0 / fan_in.max(1) as f64).sqrt()).expect("finite std");
    for v in out {
        *v = T::from_f64_lossy(normal.sample(rng));
    }
}

fn run<T: Scalar>(
    branches: &[SubNetwork],
    combiner: &ConvUnit,
    ctx: &mut Ctx<'_, T>,
    input: Var,
) -> Result<(Var, [Var; 3])> {
    let outs = [
        branches[0].forward(ctx, input)?,
        branches[1].forward(ctx, input)?,
        branches[2].forward(ctx, input)?,
    ];
    let joined = ctx.tape.concat_channels(outs[0], outs[1])?;
    let joined = ctx.tape.concat_channels(joined, outs[2])?;
    let probability = combiner.forward(ctx, joined)?;
    Ok((probability, outs))
}

/// `"sub3x3.l5.main0.conv.weight"` -> `"sub3x3.l5"`, `"l11.bn.gamma"` -> `"l11"`.
fn layer_of(name: &str) -> String {
    let mut parts = name.split('.');
    let first = parts.next().unwrap_or_default();
    if first.starts_with("sub") {
        match parts.next() {
            Some(l) => format!("{first}.{l}"),
            None => first.to_string(),
        }
    } else {
        first.to_string()
    }
}
