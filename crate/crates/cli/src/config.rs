//! Flat `key = value` run configuration.

use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use trivessel_core::data::synth::SynthConfig;
use trivessel_core::data::{ColorJitter, Layout, PatchSampling};
use trivessel_core::eval::{ThresholdMode, TileOptions};
use trivessel_core::train::TrainPlan;
use trivessel_core::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            _ => Err(Error::Config(format!("unknown precision {s:?}; expected f32 or f64"))),
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        })
    }
}

/// Where samples come from: generated in memory or read from disk.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DatasetSource {
    Synthetic,
    Path(PathBuf),
}

impl fmt::Display for DatasetSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DatasetSource::Synthetic => f.write_str("synthetic"),
            DatasetSource::Path(p) => write!(f, "{}", p.display()),
        }
    }
}

fn parse_threshold(s: &str) -> Result<ThresholdMode> {
    match s {
        "otsu" | "pooled-otsu" => Ok(ThresholdMode::PooledOtsu),
        "per-image-otsu" => Ok(ThresholdMode::PerImageOtsu),
        v => {
            let t: f64 = v
                .parse()
                .map_err(|_| Error::Config(format!("threshold must be otsu, per-image-otsu or a number, got {v:?}")))?;
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::Config(format!("fixed threshold {t} is outside [0, 1]")));
            }
            Ok(ThresholdMode::Fixed(t))
        }
    }
}

fn threshold_text(mode: ThresholdMode) -> String {
    match mode {
        ThresholdMode::PooledOtsu => "otsu".into(),
        ThresholdMode::PerImageOtsu => "per-image-otsu".into(),
        ThresholdMode::Fixed(t) => t.to_string(),
    }
}

/// Every setting a command may read. Defaults follow the published
/// training setup.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dataset: Option<DatasetSource>,
    pub layout: Layout,
    pub out: PathBuf,
    pub seed: u64,
    pub checkpoint: Option<PathBuf>,
    pub threads: usize,
    pub precision: Precision,
    pub plan: TrainPlan,
    pub sampling: PatchSampling,
    pub jitter: ColorJitter,
    pub tiles: TileOptions,
    pub threshold: ThresholdMode,
    /// Divides every channel width of the network (1 = full size).
    pub width_divisor: usize,
    pub synth: SynthConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: None,
            layout: Layout::Drive,
            out: PathBuf::from("out"),
            seed: 0,
            checkpoint: None,
            threads: 1,
            precision: Precision::F32,
            plan: TrainPlan::default(),
            sampling: PatchSampling::default(),
            jitter: ColorJitter::default(),
            tiles: TileOptions::default(),
            threshold: ThresholdMode::PooledOtsu,
            width_divisor: 1,
            synth: SynthConfig::default(),
        }
    }
}

fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

pub const KEYS: [&str; 27] = [
    "dataset",
    "layout",
    "out",
    "seed",
    "checkpoint",
    "threads",
    "precision",
    "lr",
    "lr_decay",
    "epochs",
    "batch_size",
    "checkpoint_every",
    "patch_size",
    "patches_per_image",
    "val_patches_per_image",
    "jitter_brightness",
    "jitter_contrast",
    "jitter_saturation",
    "jitter_hue",
    "tile_stride",
    "tile_batch",
    "threshold",
    "width_divisor",
    "synth_train",
    "synth_test",
    "synth_height",
    "synth_width",
];

impl RunConfig {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "dataset" => {
                self.dataset = Some(match value {
                    "synthetic" => DatasetSource::Synthetic,
                    p => DatasetSource::Path(PathBuf::from(p)),
                })
            }
            "layout" => self.layout = value.parse()?,
            "out" => self.out = PathBuf::from(value),
            "seed" => self.seed = num(key, value)?,
            "checkpoint" => self.checkpoint = Some(PathBuf::from(value)),
            "threads" => self.threads = num(key, value)?,
            "precision" => self.precision = value.parse()?,
            "lr" => self.plan.base_lr = num(key, value)?,
            "lr_decay" => self.plan.decay = num(key, value)?,
            "epochs" => self.plan.epochs = num(key, value)?,
            "batch_size" => self.plan.batch_size = num(key, value)?,
            "checkpoint_every" => self.plan.checkpoint_every = num(key, value)?,
            "patch_size" => {
                self.sampling.patch = num(key, value)?;
                self.tiles.patch = self.sampling.patch;
            }
            "patches_per_image" => self.sampling.per_image = num(key, value)?,
            "val_patches_per_image" => self.sampling.val_per_image = num(key, value)?,
            "jitter_brightness" => self.jitter.brightness = num(key, value)?,
            "jitter_contrast" => self.jitter.contrast = num(key, value)?,
            "jitter_saturation" => self.jitter.saturation = num(key, value)?,
            "jitter_hue" => self.jitter.hue = num(key, value)?,
            "tile_stride" => self.tiles.stride = num(key, value)?,
            "tile_batch" => self.tiles.batch = num(key, value)?,
            "threshold" => self.threshold = parse_threshold(value)?,
            "width_divisor" => self.width_divisor = num(key, value)?,
            "synth_train" => self.synth.train = num(key, value)?,
            "synth_test" => self.synth.test = num(key, value)?,
            "synth_height" => self.synth.height = num(key, value)?,
            "synth_width" => self.synth.width = num(key, value)?,
            other => {
                return Err(Error::Config(format!(
                    "unknown config key {other:?}; known keys: {}",
                    KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    /// Applies every line of a config file. Duplicate keys are rejected.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("{origin}:{}: expected `key = value`", n + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("{origin}:{}: duplicate key {key:?}", n + 1)));
            }
            self.set(key, value)
                .map_err(|e| Error::Config(format!("{origin}:{}: {}", n + 1, strip_prefix(&e))))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        self.apply_text(&text, &path.display().to_string())
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, pair: &str) -> Result<()> {
        let (key, value) = pair
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {pair:?} is not key=value")))?;
        self.set(key.trim(), value.trim())
    }

    pub fn validate(&self) -> Result<()> {
        self.plan.validate()?;
        self.jitter.validate()?;
        if self.width_divisor == 0 {
            return Err(Error::Config("width_divisor must be at least 1".into()));
        }
        if self.tiles.stride == 0 || self.tiles.stride > self.tiles.patch || self.tiles.batch == 0 {
            return Err(Error::Config(format!(
                "tile stride must lie in [1, {}] and tile batch must be positive",
                self.tiles.patch
            )));
        }
        if self.sampling.val_per_image > self.sampling.per_image {
            return Err(Error::Config(
                "val_patches_per_image cannot exceed patches_per_image".into(),
            ));
        }
        Ok(())
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            seed: self.seed,
            ..self.synth
        }
    }

    /// The effective configuration in the file format it was read from.
    pub fn to_text(&self) -> String {
        let mut s = String::from("# effective configuration\n");
        let mut put = |k: &str, v: String| {
            writeln!(s, "{k} = {v}").expect("string write");
        };
        if let Some(d) = &self.dataset {
            put("dataset", d.to_string());
        }
        put("layout", self.layout.to_string());
        put("out", self.out.display().to_string());
        put("seed", self.seed.to_string());
        if let Some(c) = &self.checkpoint {
            put("checkpoint", c.display().to_string());
        }
        put("threads", self.threads.to_string());
        put("precision", self.precision.to_string());
        put("lr", self.plan.base_lr.to_string());
        put("lr_decay", self.plan.decay.to_string());
        put("epochs", self.plan.epochs.to_string());
        put("batch_size", self.plan.batch_size.to_string());
        put("checkpoint_every", self.plan.checkpoint_every.to_string());
        put("patch_size", self.sampling.patch.to_string());
        put("patches_per_image", self.sampling.per_image.to_string());
        put("val_patches_per_image", self.sampling.val_per_image.to_string());
        put("jitter_brightness", self.jitter.brightness.to_string());
        put("jitter_contrast", self.jitter.contrast.to_string());
        put("jitter_saturation", self.jitter.saturation.to_string());
        put("jitter_hue", self.jitter.hue.to_string());
        put("tile_stride", self.tiles.stride.to_string());
        put("tile_batch", self.tiles.batch.to_string());
        put("threshold", threshold_text(self.threshold));
        put("width_divisor", self.width_divisor.to_string());
        put("synth_train", self.synth.train.to_string());
        put("synth_test", self.synth.test.to_string());
        put("synth_height", self.synth.height.to_string());
        put("synth_width", self.synth.width.to_string());
        s
    }
}

fn strip_prefix(e: &Error) -> String {
    match e {
        Error::Config(m) => m.clone(),
        other => other.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_published_setup() {
        let c = RunConfig::default();
        assert_eq!(c.plan.base_lr, 0.0008);
        assert_eq!(c.plan.decay, 0.94);
        assert_eq!(c.plan.epochs, 60);
        assert_eq!(c.plan.batch_size, 64);
        assert_eq!(c.sampling.patch, 96);
        assert_eq!(c.sampling.per_image, 4000);
        assert_eq!(c.sampling.val_per_image, 400);
        assert_eq!(c.tiles.stride, 30);
    }

    #[test]
    fn text_round_trip_reproduces_config() {
        let mut c = RunConfig::default();
        c.apply_text(
            "dataset = synthetic # in memory\nepochs = 3\nlr=0.001\nthreshold = 0.5\ncheckpoint = a/b.ckpt\n",
            "t",
        )
        .unwrap();
        let mut back = RunConfig::default();
        back.apply_text(&c.to_text(), "echo").unwrap();
        assert_eq!(back, c);
        assert_eq!(c.threshold, ThresholdMode::Fixed(0.5));
    }

    #[test]
    fn echo_lists_every_key() {
        let c = RunConfig {
            dataset: Some(DatasetSource::Synthetic),
            checkpoint: Some("x".into()),
            ..RunConfig::default()
        };
        let text = c.to_text();
        for key in KEYS {
            assert!(text.contains(&format!("\n{key} = ")), "{key}");
        }
    }

    #[test]
    fn unknown_duplicate_and_malformed_lines_are_rejected() {
        let mut c = RunConfig::default();
        let err = c.apply_text("epochz = 3\n", "f").unwrap_err().to_string();
        assert!(err.contains("epochz"), "{err}");
        assert!(c.apply_text("epochs = 3\nepochs = 4\n", "f").is_err());
        assert!(c.apply_text("epochs 3\n", "f").is_err());
        assert!(c.apply_text("epochs = three\n", "f").is_err());
        assert!(c.apply_override("layout=nope").is_err());
    }
}
