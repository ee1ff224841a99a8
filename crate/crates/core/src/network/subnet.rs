use trivessel_tensor::{Scalar, Var};

use super::layers::{Activation, ConvUnit, Ctx, FilterKind, ModuleBlock, ModuleBlockSpec};
use super::params::ParamStore;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DownsampleKind {
    MaxPool,
    StridedConv,
}

/// Channel schedule of one U-net shaped sub-network.
///
/// Encoder widths are listed shallow to deep; decoder and upsampling widths
/// deep to shallow, so `decoder[i]` and `upsample[i]` belong to the decoder
/// step that joins encoder level `encoder.len() - 1 - i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubNetworkConfig {
    pub kind: FilterKind,
    pub input_channels: usize,
    pub encoder: Vec<usize>,
    pub bottleneck: usize,
    pub decoder: Vec<usize>,
    /// Width of the 1x1 reduction applied before each bilinear upsampling.
    pub upsample: Vec<usize>,
    pub output_channels: usize,
    pub downsample: DownsampleKind,
}

impl SubNetworkConfig {
    /// Layers 1-10: 8, 16, 32, 64, 128, 64, 32, 16, 8, 1 with upsampling
    /// reductions 64, 32, 16, 8 after layers 5-8.
    pub fn standard(kind: FilterKind) -> Self {
        Self::with_widths(kind, &[8, 16, 32, 64], 128)
    }

    /// Encoder widths doubling from `encoder`, mirrored decoder, and
    /// upsampling reductions halving the incoming width.
    pub fn with_widths(kind: FilterKind, encoder: &[usize], bottleneck: usize) -> Self {
        let decoder: Vec<usize> = encoder.iter().rev().copied().collect();
        let mut upsample = Vec::with_capacity(decoder.len());
        let mut incoming = bottleneck;
        for &d in &decoder {
            upsample.push((incoming / 2).max(1));
            incoming = d;
        }
        SubNetworkConfig {
            kind,
            input_channels: 3,
            encoder: encoder.to_vec(),
            bottleneck,
            decoder,
            upsample,
            output_channels: 1,
            downsample: match kind {
                FilterKind::Conv1x1 => DownsampleKind::MaxPool,
                _ => DownsampleKind::StridedConv,
            },
        }
    }

    /// Every width divided by `factor` (at least 1).
    pub fn scaled(&self, factor: usize) -> Self {
        let div = |v: &usize| (v / factor).max(1);
        SubNetworkConfig {
            encoder: self.encoder.iter().map(div).collect(),
            bottleneck: div(&self.bottleneck),
            decoder: self.decoder.iter().map(div).collect(),
            upsample: self.upsample.iter().map(div).collect(),
            ..self.clone()
        }
    }

    /// Number of 2x downsampling steps; inputs must be divisible by
    /// `2^depth`.
    pub fn depth(&self) -> usize {
        self.encoder.len()
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.encoder.len();
        if l == 0 {
            return Err(Error::Config("sub-network needs at least one encoder level".into()));
        }
        if self.decoder.len() != l || self.upsample.len() != l {
            return Err(Error::Config(format!(
                "{} encoder levels but {} decoder and {} upsampling widths",
                l,
                self.decoder.len(),
                self.upsample.len()
            )));
        }
        let widths = self
            .encoder
            .iter()
            .chain(&self.decoder)
            .chain(&self.upsample)
            .chain([&self.bottleneck, &self.input_channels, &self.output_channels]);
        if widths.into_iter().any(|&w| w == 0) {
            return Err(Error::Config("sub-network widths must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Downsample {
    MaxPool,
    Conv(Vec<ConvUnit>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderStep {
    pub reduce: ConvUnit,
    pub block: ModuleBlock,
}

/// Encoder blocks with downsampling, a bottleneck block, decoder steps
/// (1x1 reduction, bilinear 2x, concatenation with the same-scale encoder
/// output, block), and a 1x1 output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct SubNetwork {
    pub config: SubNetworkConfig,
    pub prefix: String,
    pub encoder: Vec<(ModuleBlock, Downsample)>,
    pub bottleneck: ModuleBlock,
    pub decoder: Vec<DecoderStep>,
    pub output: ConvUnit,
}

impl SubNetwork {
    pub(crate) fn build<T: Scalar>(store: &mut ParamStore<T>, prefix: &str, config: SubNetworkConfig) -> Result<Self> {
        config.validate()?;
        let kind = config.kind;
        let depth = config.depth();
        let layer = |i: usize| format!("{prefix}.l{i}");

        let mut encoder = Vec::with_capacity(depth);
        let mut width = config.input_channels;
        for (i, &out) in config.encoder.iter().enumerate() {
            let name = layer(i + 1);
            let block = ModuleBlock::build(store, &name, ModuleBlockSpec::new(kind, width, out))?;
            let down = match config.downsample {
                DownsampleKind::MaxPool => Downsample::MaxPool,
                DownsampleKind::StridedConv => {
                    // the first filter of the kind's chain takes the stride
                    let units = kind
                        .main_kernels()
                        .iter()
                        .enumerate()
                        .map(|(j, &k)| {
                            ConvUnit::new(
                                store,
                                format!("{name}.down{j}"),
                                out,
                                out,
                                k,
                                if j == 0 { 2 } else { 1 },
                                Activation::Relu,
                            )
                        })
                        .collect();
                    Downsample::Conv(units)
                }
            };
            encoder.push((block, down));
            width = out;
        }

        let bottleneck = ModuleBlock::build(
            store,
            &layer(depth + 1),
            ModuleBlockSpec::new(kind, width, config.bottleneck),
        )?;
        width = config.bottleneck;

        let mut decoder = Vec::with_capacity(depth);
        for i in 0..depth {
            // the reduction belongs to the layer whose output it upsamples
            let reduce = ConvUnit::new(
                store,
                format!("{}.up", layer(depth + 1 + i)),
                width,
                config.upsample[i],
                1,
                1,
                Activation::Relu,
            );
            let skip = config.encoder[depth - 1 - i];
            let block = ModuleBlock::build(
                store,
                &layer(depth + 2 + i),
                ModuleBlockSpec::new(kind, config.upsample[i] + skip, config.decoder[i]),
            )?;
            decoder.push(DecoderStep { reduce, block });
            width = config.decoder[i];
        }

        let output = ConvUnit::new(
            store,
            format!("{}.out", layer(2 * depth + 2)),
            width,
            config.output_channels,
            1,
            1,
            Activation::Relu,
        );

        Ok(SubNetwork {
            config,
            prefix: prefix.to_string(),
            encoder,
            bottleneck,
            decoder,
            output,
        })
    }

    pub fn param_count(&self) -> usize {
        let down: usize = self
            .encoder
            .iter()
            .map(|(b, d)| {
                b.param_count()
                    + match d {
                        Downsample::MaxPool => 0,
                        Downsample::Conv(units) => units.iter().map(ConvUnit::param_count).sum(),
                    }
            })
            .sum();
        down + self.bottleneck.param_count()
            + self
                .decoder
                .iter()
                .map(|s| s.reduce.param_count() + s.block.param_count())
                .sum::<usize>()
            + self.output.param_count()
    }

    pub(crate) fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let mut skips = Vec::with_capacity(self.encoder.len());
        let mut h = x;
        for (block, down) in &self.encoder {
            h = block.forward(ctx, h)?;
            skips.push(h);
            h = match down {
                Downsample::MaxPool => ctx.tape.maxpool2x(h)?,
                Downsample::Conv(units) => {
                    for u in units {
                        h = u.forward(ctx, h)?;
                    }
                    h
                }
            };
        }
        h = self.bottleneck.forward(ctx, h)?;
        for (step, skip) in self.decoder.iter().zip(skips.into_iter().rev()) {
            let reduced = step.reduce.forward(ctx, h)?;
            let up = ctx.tape.upsample2x(reduced)?;
            let joined = ctx.tape.concat_channels(up, skip)?;
            h = step.block.forward(ctx, joined)?;
        }
        self.output.forward(ctx, h)
    }
}
