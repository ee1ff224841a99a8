//! Binary checkpoint codec.
//!
//! Layout, all little-endian: magic `TRIV`, `u32` version, `u32` tensor
//! count, then per tensor: `u32` name length, UTF-8 name, `u8` rank, `u32`
//! per dimension, `u8` dtype tag (0 = f32, 1 = f64), raw values.
//!
//! Besides parameters the file carries the channel schedule (`arch.*`),
//! batch-norm running statistics (`*.running_mean`, `*.running_var`) and,
//! optionally, Adam moments (`adam.*`) and the input channel means used for
//! normalization (`meta.channel_mean`).

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use trivessel_tensor::{DType, Scalar};

use super::{DownsampleKind, FilterKind, NetworkConfig, SubNetworkConfig, TriNetwork, BRANCH_PREFIXES};
use crate::train::{AdamConfig, AdamState};
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"TRIV";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
enum Values {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl Values {
    fn len(&self) -> usize {
        match self {
            Values::F32(v) => v.len(),
            Values::F64(v) => v.len(),
        }
    }

    fn to<T: Scalar>(&self) -> Vec<T> {
        match self {
            Values::F32(v) => v.iter().map(|&x| T::from_f64_lossy(x as f64)).collect(),
            Values::F64(v) => v.iter().map(|&x| T::from_f64_lossy(x)).collect(),
        }
    }

    fn from_slice<T: Scalar>(v: &[T]) -> Self {
        match T::DTYPE {
            DType::F32 => Values::F32(v.iter().map(|x| x.to_f64_lossy() as f32).collect()),
            DType::F64 => Values::F64(v.iter().map(|x| x.to_f64_lossy()).collect()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    name: String,
    dims: Vec<u32>,
    values: Values,
}

impl Entry {
    fn new<T: Scalar>(name: impl Into<String>, dims: &[usize], values: &[T]) -> Self {
        Entry {
            name: name.into(),
            dims: dims.iter().map(|&d| d as u32).collect(),
            values: Values::from_slice(values),
        }
    }

    fn ints(name: impl Into<String>, values: &[usize]) -> Self {
        let v: Vec<f64> = values.iter().map(|&x| x as f64).collect();
        Entry::new(name, &[v.len()], &v)
    }

    fn as_ints(&self) -> Result<Vec<usize>> {
        self.values
            .to::<f64>()
            .into_iter()
            .map(|x| {
                if x >= 0.0 && x.fract() == 0.0 && x < u32::MAX as f64 {
                    Ok(x as usize)
                } else {
                    Err(Error::Checkpoint(format!("{}: expected non-negative integers", self.name)))
                }
            })
            .collect()
    }
}

fn encode(entries: &[Entry]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for e in entries {
        out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
        out.extend_from_slice(e.name.as_bytes());
        out.push(e.dims.len() as u8);
        for d in &e.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        match &e.values {
            Values::F32(v) => {
                out.push(DType::F32.tag());
                v.iter().for_each(|x| x.write_le(&mut out));
            }
            Values::F64(v) => {
                out.push(DType::F64.tag());
                v.iter().for_each(|x| x.write_le(&mut out));
            }
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Checkpoint(format!("truncated file while reading {what} at byte {}", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn values<T: Scalar>(&mut self, n: usize, what: &str) -> Result<Vec<T>> {
        let size = T::DTYPE.size();
        let len = n
            .checked_mul(size)
            .ok_or_else(|| Error::Checkpoint(format!("{what}: size overflow")))?;
        Ok(self.take(len, what)?.chunks_exact(size).map(T::read_le).collect())
    }
}

fn decode(bytes: &[u8]) -> Result<Vec<Entry>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic, not a checkpoint file".into()));
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    let count = r.u32("tensor count")?;
    let mut entries = Vec::new();
    for _ in 0..count {
        let len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = r.u8("rank")? as usize;
        let dims = (0..rank).map(|_| r.u32("dims")).collect::<Result<Vec<_>>>()?;
        let n = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d as usize));
        let n = n.ok_or_else(|| Error::Checkpoint(format!("{name}: size overflow")))?;
        let values = match DType::from_tag(r.u8("dtype")?) {
            Some(DType::F32) => Values::F32(r.values(n, &name)?),
            Some(DType::F64) => Values::F64(r.values(n, &name)?),
            None => return Err(Error::Checkpoint(format!("{name}: unknown dtype tag"))),
        };
        entries.push(Entry { name, dims, values });
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(entries)
}

fn arch_entries(config: &NetworkConfig) -> Vec<Entry> {
    let mut out = Vec::new();
    for (b, prefix) in config.branches.iter().zip(BRANCH_PREFIXES) {
        let down = match b.downsample {
            DownsampleKind::MaxPool => 0,
            DownsampleKind::StridedConv => 1,
        };
        out.push(Entry::ints(
            format!("arch.{prefix}.channels"),
            &[b.input_channels, b.bottleneck, b.output_channels, down],
        ));
        out.push(Entry::ints(format!("arch.{prefix}.encoder"), &b.encoder));
        out.push(Entry::ints(format!("arch.{prefix}.decoder"), &b.decoder));
        out.push(Entry::ints(format!("arch.{prefix}.upsample"), &b.upsample));
    }
    out
}

fn parse_arch(entries: &HashMap<&str, &Entry>) -> Result<NetworkConfig> {
    let get = |name: String| -> Result<Vec<usize>> {
        entries
            .get(name.as_str())
            .ok_or_else(|| Error::Checkpoint(format!("missing {name}")))?
            .as_ints()
    };
    let mut branches = Vec::new();
    for (kind, prefix) in FilterKind::ALL.into_iter().zip(BRANCH_PREFIXES) {
        let channels = get(format!("arch.{prefix}.channels"))?;
        let [input_channels, bottleneck, output_channels, down] = channels[..] else {
            return Err(Error::Checkpoint(format!("arch.{prefix}.channels must hold 4 values")));
        };
        let downsample = match down {
            0 => DownsampleKind::MaxPool,
            1 => DownsampleKind::StridedConv,
            other => return Err(Error::Checkpoint(format!("unknown downsample code {other}"))),
        };
        branches.push(SubNetworkConfig {
            kind,
            input_channels,
            encoder: get(format!("arch.{prefix}.encoder"))?,
            bottleneck,
            decoder: get(format!("arch.{prefix}.decoder"))?,
            upsample: get(format!("arch.{prefix}.upsample"))?,
            output_channels,
            downsample,
        });
    }
    let config = NetworkConfig { branches };
    config
        .validate()
        .map_err(|e| Error::Checkpoint(format!("invalid architecture: {e}")))?;
    Ok(config)
}

const CHANNEL_MEAN: &str = "meta.channel_mean";

fn to_bytes<T: Scalar>(net: &TriNetwork<T>, adam: Option<&AdamState<T>>, channel_mean: Option<[f64; 3]>) -> Vec<u8> {
    let mut entries = arch_entries(net.config());
    if let Some(mean) = channel_mean {
        entries.push(Entry::new(CHANNEL_MEAN, &[3], &mean));
    }
    for p in net.store().params() {
        entries.push(Entry::new(p.name.clone(), &p.dims, p.tensor.data()));
    }
    for n in net.store().norms() {
        if let (Some(mean), Some(var)) = (n.state.running_mean(), n.state.running_var()) {
            entries.push(Entry::new(format!("{}.running_mean", n.name), &[mean.len()], mean));
            entries.push(Entry::new(format!("{}.running_var", n.name), &[var.len()], var));
        }
    }
    if let Some(adam) = adam {
        let c = adam.config;
        entries.push(Entry::new("adam.config", &[3], &[c.beta1, c.beta2, c.eps]));
        entries.push(Entry::new("adam.step", &[1], &[adam.step as f64]));
        for ((p, m), v) in net.store().params().iter().zip(&adam.m).zip(&adam.v) {
            entries.push(Entry::new(format!("adam.m.{}", p.name), &[m.len()], m));
            entries.push(Entry::new(format!("adam.v.{}", p.name), &[v.len()], v));
        }
    }
    encode(&entries)
}

/// Contents of a checkpoint file.
#[derive(Debug, Clone)]
pub struct Checkpoint<T: Scalar> {
    pub net: TriNetwork<T>,
    pub adam: Option<AdamState<T>>,
    /// Per-channel means subtracted from inputs during training.
    pub channel_mean: Option<[f64; 3]>,
}

fn from_bytes<T: Scalar>(bytes: &[u8]) -> Result<Checkpoint<T>> {
    let entries = decode(bytes)?;
    let mut by_name: HashMap<&str, &Entry> = HashMap::new();
    for e in &entries {
        if by_name.insert(e.name.as_str(), e).is_some() {
            return Err(Error::Checkpoint(format!("duplicate tensor {}", e.name)));
        }
    }
    let config = parse_arch(&by_name)?;
    let mut net = TriNetwork::<T>::build(config)?;
    let mut used = entries.iter().filter(|e| e.name.starts_with("arch.")).count();
    let channel_mean = match by_name.get(CHANNEL_MEAN) {
        Some(e) if e.values.len() == 3 => {
            used += 1;
            let v: Vec<f64> = e.values.to();
            Some([v[0], v[1], v[2]])
        }
        Some(_) => return Err(Error::Checkpoint(format!("{CHANNEL_MEAN} must hold 3 values"))),
        None => None,
    };

    let take = |name: &str, len: usize, used: &mut usize| -> Result<Vec<T>> {
        let e = by_name
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
        if e.values.len() != len {
            return Err(Error::Checkpoint(format!(
                "{name}: expected {len} values, found {}",
                e.values.len()
            )));
        }
        *used += 1;
        Ok(e.values.to())
    };

    for p in net.store_mut().params_mut() {
        let e = by_name
            .get(p.name.as_str())
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {}", p.name)))?;
        let dims: Vec<usize> = e.dims.iter().map(|&d| d as usize).collect();
        if dims != p.dims {
            return Err(Error::Checkpoint(format!(
                "{}: dims {:?} do not match model {:?}",
                p.name, dims, p.dims
            )));
        }
        let values = take(&p.name, p.tensor.numel(), &mut used)?;
        p.tensor.data_mut().copy_from_slice(&values);
    }
    for n in net.store_mut().norms_mut() {
        let mean_name = format!("{}.running_mean", n.name);
        let var_name = format!("{}.running_var", n.name);
        match (by_name.contains_key(mean_name.as_str()), by_name.contains_key(var_name.as_str())) {
            (true, true) => {
                let c = n.state.channels();
                let mean = take(&mean_name, c, &mut used)?;
                let var = take(&var_name, c, &mut used)?;
                n.state.set_running(mean, var);
            }
            (false, false) => {}
            _ => return Err(Error::Checkpoint(format!("{}: incomplete running statistics", n.name))),
        }
    }
    let adam = if by_name.contains_key("adam.step") {
        let config: Vec<f64> = match by_name.get("adam.config") {
            Some(e) if e.values.len() == 3 => e.values.to(),
            _ => return Err(Error::Checkpoint("adam.config must hold 3 values".into())),
        };
        used += 1;
        let config = AdamConfig {
            beta1: config[0],
            beta2: config[1],
            eps: config[2],
        };
        let step = by_name["adam.step"].as_ints()?;
        used += 1;
        let mut state = AdamState::new(net.store(), config);
        state.step = step.first().copied().unwrap_or(0) as u64;
        for (i, p) in net.store().params().iter().enumerate() {
            state.m[i] = take(&format!("adam.m.{}", p.name), p.tensor.numel(), &mut used)?;
            state.v[i] = take(&format!("adam.v.{}", p.name), p.tensor.numel(), &mut used)?;
        }
        Some(state)
    } else {
        None
    };
    if used != entries.len() {
        let known: std::collections::HashSet<String> = net
            .store()
            .params()
            .iter()
            .map(|p| p.name.clone())
            .chain(net.store().norms().iter().flat_map(|n| {
                [format!("{}.running_mean", n.name), format!("{}.running_var", n.name)]
            }))
            .collect();
        let unknown = entries
            .iter()
            .map(|e| e.name.as_str())
            .find(|n| !n.starts_with("arch.") && !n.starts_with("adam.") && *n != CHANNEL_MEAN && !known.contains(*n))
            .unwrap_or("adam.*");
        return Err(Error::Checkpoint(format!("unknown tensor {unknown}")));
    }
    Ok(Checkpoint { net, adam, channel_mean })
}

/// Writes `net`, and optionally optimizer state and input channel means, to
/// `path`.
pub fn save_checkpoint<T: Scalar>(
    path: &Path,
    net: &TriNetwork<T>,
    adam: Option<&AdamState<T>>,
    channel_mean: Option<[f64; 3]>,
) -> Result<()> {
    let bytes = to_bytes(net, adam, channel_mean);
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    file.sync_all().map_err(|e| Error::io(path, e))
}

/// Reads a checkpoint. Values stored in another precision are converted.
pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<Checkpoint<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes).map_err(|e| match e {
        Error::Checkpoint(msg) => Error::Checkpoint(format!("{}: {msg}", path.display())),
        other => other,
    })
}
