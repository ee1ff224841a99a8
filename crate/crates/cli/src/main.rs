mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use trivessel_core::Error;

use config::{Precision, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "trivessel", version, about = "Retinal vessel segmentation with a three-branch U-net")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct Shared {
    /// Flat `key = value` config file.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Dataset root, or `synthetic` to generate one in memory.
    #[arg(long)]
    dataset: Option<String>,
    /// drive, iostar or synthetic.
    #[arg(long)]
    layout: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Worker threads; 0 uses every core.
    #[arg(long)]
    threads: Option<usize>,
    /// f32 or f64.
    #[arg(long)]
    precision: Option<String>,
    /// Override any config key.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train on a dataset's training split.
    Train {
        #[command(flatten)]
        shared: Shared,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
    },
    /// Segment one image.
    Predict {
        #[command(flatten)]
        shared: Shared,
        #[arg(long)]
        image: PathBuf,
        /// Field-of-view mask; every pixel counts when absent.
        #[arg(long)]
        fov: Option<PathBuf>,
        /// Fixed threshold instead of Otsu.
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Score a checkpoint on a dataset's test split.
    Evaluate {
        #[command(flatten)]
        shared: Shared,
        /// Score the ground truth against itself.
        #[arg(long)]
        oracle_self_test: bool,
        /// otsu, per-image-otsu or a number in [0, 1].
        #[arg(long)]
        threshold: Option<String>,
    },
    /// Write per-branch activation maps, or print the parameter table.
    Inspect {
        #[command(flatten)]
        shared: Shared,
        #[arg(long)]
        image: Option<PathBuf>,
        #[arg(long)]
        params: bool,
    },
    /// Write a synthetic dataset in the DRIVE layout.
    Synth {
        #[command(flatten)]
        shared: Shared,
    },
    /// Run gradient, metric, tiling and serialization checks.
    Selftest {
        #[command(flatten)]
        shared: Shared,
        #[arg(long, hide = true)]
        inject_fault: Option<String>,
    },
}

fn build_config(shared: &Shared, extra: &[(&str, Option<String>)]) -> Result<RunConfig, Error> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &shared.config {
        cfg.apply_file(path)?;
    }
    for pair in &shared.set {
        cfg.apply_override(pair)?;
    }
    let flags = [
        ("dataset", shared.dataset.clone()),
        ("layout", shared.layout.clone()),
        ("out", shared.out.as_ref().map(|p| p.display().to_string())),
        ("seed", shared.seed.map(|v| v.to_string())),
        ("checkpoint", shared.checkpoint.as_ref().map(|p| p.display().to_string())),
        ("threads", shared.threads.map(|v| v.to_string())),
        ("precision", shared.precision.clone()),
    ];
    for (key, value) in flags.iter().chain(extra) {
        if let Some(v) = value {
            cfg.set(key, v)?;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 1,
        Error::Tensor(trivessel_tensor::TensorError::Shape { .. }) => 2,
        Error::Tensor(_) => 1,
        Error::Numerical(_) => 3,
        _ => 2,
    }
}

fn run(cli: Cli) -> Result<bool, Error> {
    let (shared, extra) = match &cli.command {
        Command::Train {
            shared,
            epochs,
            batch_size,
            lr,
        } => (
            shared,
            vec![
                ("epochs", epochs.map(|v| v.to_string())),
                ("batch_size", batch_size.map(|v| v.to_string())),
                ("lr", lr.map(|v| v.to_string())),
            ],
        ),
        Command::Predict { shared, threshold, .. } => (shared, vec![("threshold", threshold.map(|v| v.to_string()))]),
        Command::Evaluate { shared, threshold, .. } => (shared, vec![("threshold", threshold.clone())]),
        Command::Inspect { shared, .. } | Command::Synth { shared } | Command::Selftest { shared, .. } => {
            (shared, vec![])
        }
    };
    let cfg = build_config(shared, &extra)?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build_global()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;

    macro_rules! dispatch {
        ($f:ident ( $($arg:expr),* )) => {
            match cfg.precision {
                Precision::F32 => commands::$f::<f32>($($arg),*),
                Precision::F64 => commands::$f::<f64>($($arg),*),
            }
        };
    }
    match &cli.command {
        Command::Train { .. } => dispatch!(cmd_train(&cfg))?,
        Command::Predict { image, fov, .. } => dispatch!(cmd_predict(&cfg, image, fov.as_deref()))?,
        Command::Evaluate { oracle_self_test, .. } => dispatch!(cmd_evaluate(&cfg, *oracle_self_test))?,
        Command::Inspect { image, params, .. } => dispatch!(cmd_inspect(&cfg, image.as_deref(), *params))?,
        Command::Synth { .. } => commands::cmd_synth(&cfg)?,
        Command::Selftest { inject_fault, .. } => {
            let fault = inject_fault.as_deref().map(commands::parse_fault).transpose()?;
            return commands::cmd_selftest(&cfg, fault);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
