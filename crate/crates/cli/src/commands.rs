use std::fs;
use std::path::Path;

use trivessel_core::data::synth::{generate, write_synthetic};
use trivessel_core::data::{
    load_dataset, read_mask, read_rgb, sample_training_patches, BatchSource, ChannelStats,
    DatasetSplit, PatchSet,
};
use trivessel_core::eval::{
    evaluate_dataset, metrics_csv, metrics_table, oracle_self_test, otsu_threshold, predict_image, write_binary_mask,
    write_branch_maps, write_probability_png, ImagePrediction, ThresholdMode,
};
use trivessel_core::network::{load_checkpoint, Checkpoint, NetworkConfig, TriNetwork};
use trivessel_core::selfcheck;
use trivessel_core::train::{history_csv, train, TrainOptions, TrainPlan, Trainer};
use trivessel_core::{Error, Result};
use trivessel_tensor::{OpKind, Scalar};

use crate::config::{DatasetSource, RunConfig};

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn prepare_out(cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
    write_text(&cfg.out.join("config.txt"), &cfg.to_text())
}

/// Checks every input path before any compute starts.
pub fn check_paths(cfg: &RunConfig, need_checkpoint: bool, images: &[&Path]) -> Result<()> {
    if let Some(DatasetSource::Path(p)) = &cfg.dataset {
        if !p.is_dir() {
            return Err(Error::Dataset(format!("dataset root {} does not exist", p.display())));
        }
    }
    match &cfg.checkpoint {
        Some(p) if !p.is_file() => {
            return Err(Error::Checkpoint(format!("checkpoint {} does not exist", p.display())))
        }
        None if need_checkpoint => return Err(Error::Config("this command needs --checkpoint".into())),
        _ => {}
    }
    for p in images {
        if !p.is_file() {
            return Err(Error::Dataset(format!("input {} does not exist", p.display())));
        }
    }
    Ok(())
}

fn load_split(cfg: &RunConfig) -> Result<DatasetSplit> {
    match &cfg.dataset {
        Some(DatasetSource::Synthetic) => Ok(generate(&cfg.synth_config())),
        Some(DatasetSource::Path(p)) => load_dataset(p, cfg.layout),
        None => Err(Error::Config("this command needs --dataset".into())),
    }
}

fn load_model<T: Scalar>(cfg: &RunConfig) -> Result<Checkpoint<T>> {
    let path = cfg.checkpoint.as_ref().ok_or_else(|| Error::Config("this command needs --checkpoint".into()))?;
    load_checkpoint(path)
}

fn channel_stats(ckpt_mean: Option<[f64; 3]>, path: &Path) -> Result<ChannelStats> {
    ckpt_mean.map(|mean| ChannelStats { mean }).ok_or_else(|| {
        Error::Checkpoint(format!("{} does not record input channel means", path.display()))
    })
}

pub fn network_config(cfg: &RunConfig) -> NetworkConfig {
    match cfg.width_divisor {
        1 => NetworkConfig::standard(),
        f => NetworkConfig::scaled(f),
    }
}

pub fn cmd_train<T: Scalar>(cfg: &RunConfig) -> Result<()> {
    check_paths(cfg, false, &[])?;
    prepare_out(cfg)?;
    let split = load_split(cfg)?;
    let stats = ChannelStats::compute(&split.train)?;
    log::info!("{} training images, channel means {:?}", split.train.len(), stats.mean);
    let (train_plan, val_plan) = sample_training_patches(&split.train, cfg.sampling, cfg.seed)?;
    let train_set = PatchSet::new(&split.train, train_plan, stats)?.with_jitter(cfg.jitter, cfg.seed ^ 0x5eed);
    let val_set = PatchSet::new(&split.train, val_plan, stats)?;

    let mut trainer = match &cfg.checkpoint {
        Some(path) => {
            let ckpt = load_checkpoint::<T>(path)?;
            log::info!("resuming from {}", path.display());
            let mut t = Trainer::new(ckpt.net);
            if let Some(adam) = ckpt.adam {
                t.adam = adam;
            }
            t
        }
        None => Trainer::new(TriNetwork::<T>::new(network_config(cfg), cfg.seed)?),
    };
    let plan = TrainPlan {
        seed: cfg.seed,
        ..cfg.plan.clone()
    };
    let val: Option<&dyn BatchSource<T>> = if BatchSource::<T>::is_empty(&val_set) {
        None
    } else {
        Some(&val_set)
    };
    let opts = TrainOptions {
        checkpoint_dir: Some(cfg.out.clone()),
        channel_mean: Some(stats.mean),
    };
    let outcome = train(&mut trainer, &train_set, val, &plan, &opts)?;
    write_text(&cfg.out.join("history.csv"), &history_csv(&outcome.history))?;
    println!(
        "trained {} epochs; best epoch {}; checkpoints in {}",
        outcome.history.len(),
        outcome.best_epoch,
        cfg.out.display()
    );
    Ok(())
}

fn stem(path: &Path) -> String {
    path.file_stem().map_or_else(|| "image".into(), |s| s.to_string_lossy().into_owned())
}

fn predict_file<T: Scalar>(cfg: &RunConfig, image: &Path, fov: Option<&Path>) -> Result<(String, ImagePrediction)> {
    let path = cfg.checkpoint.clone().unwrap_or_default();
    let ckpt = load_model::<T>(cfg)?;
    let stats = channel_stats(ckpt.channel_mean, &path)?;
    let mut rgb = read_rgb(image)?;
    let (h, w) = (rgb.shape().h, rgb.shape().w);
    let fov = match fov {
        Some(p) => {
            let m = read_mask(p)?;
            if (m.shape().h, m.shape().w) != (h, w) {
                return Err(Error::Dataset(format!("{}: FOV mask size differs from the image", p.display())));
            }
            m.data().iter().map(|&v| v > 0.5).collect()
        }
        None => vec![true; h * w],
    };
    stats.apply(rgb.data_mut());
    let id = stem(image);
    let pred = predict_image(&ckpt.net, &id, &rgb, fov, cfg.tiles)?;
    Ok((id, pred))
}

pub fn cmd_predict<T: Scalar>(cfg: &RunConfig, image: &Path, fov: Option<&Path>) -> Result<()> {
    let mut inputs = vec![image];
    inputs.extend(fov);
    check_paths(cfg, true, &inputs)?;
    prepare_out(cfg)?;
    let (id, pred) = predict_file::<T>(cfg, image, fov)?;
    let threshold = match cfg.threshold {
        ThresholdMode::Fixed(t) => t,
        _ => otsu_threshold(&pred.map)?,
    };
    let prob_path = cfg.out.join(format!("{id}_prob.png"));
    let mask_path = cfg.out.join(format!("{id}_mask.png"));
    write_probability_png(&prob_path, &pred.map)?;
    let mask: Vec<bool> = pred.map.binarize(threshold);
    write_binary_mask(&mask_path, pred.map.width, pred.map.height, &mask)?;
    println!("threshold {threshold:.6}");
    println!("{}", prob_path.display());
    println!("{}", mask_path.display());
    Ok(())
}

pub fn cmd_evaluate<T: Scalar>(cfg: &RunConfig, oracle: bool) -> Result<()> {
    check_paths(cfg, !oracle, &[])?;
    prepare_out(cfg)?;
    let split = load_split(cfg)?;
    if split.test.is_empty() {
        return Err(Error::Dataset("test split is empty".into()));
    }
    let (evaluation, label) = if oracle {
        (oracle_self_test(&split.test, cfg.threshold)?, "ground truth")
    } else {
        let path = cfg.checkpoint.clone().unwrap_or_default();
        let ckpt = load_model::<T>(cfg)?;
        let stats = channel_stats(ckpt.channel_mean, &path)?;
        let (evaluation, preds) = evaluate_dataset(&ckpt.net, &split.test, &stats, cfg.tiles, cfg.threshold)?;
        let maps = cfg.out.join("maps");
        fs::create_dir_all(&maps).map_err(|e| Error::io(&maps, e))?;
        for p in &preds {
            write_probability_png(&maps.join(format!("{}_prob.png", p.map.id)), &p.map)?;
        }
        (evaluation, "trivessel")
    };
    write_text(&cfg.out.join("metrics.csv"), &metrics_csv(&evaluation))?;
    if let Some(t) = evaluation.threshold {
        println!("threshold {t:.6}");
    }
    print!("{}", metrics_table(label, &evaluation.pooled));
    Ok(())
}

pub fn cmd_inspect<T: Scalar>(cfg: &RunConfig, image: Option<&Path>, params: bool) -> Result<()> {
    if params {
        let net = match &cfg.checkpoint {
            Some(_) => {
                check_paths(cfg, true, &[])?;
                load_model::<T>(cfg)?.net
            }
            None => TriNetwork::<T>::build(network_config(cfg))?,
        };
        let count = net.count_parameters();
        print!("{}", count.table());
        println!("closed form {}", count.formula);
    }
    let Some(image) = image else {
        if !params {
            return Err(Error::Config("inspect needs --image or --params".into()));
        }
        return Ok(());
    };
    check_paths(cfg, true, &[image])?;
    prepare_out(cfg)?;
    let (id, pred) = predict_file::<T>(cfg, image, None)?;
    let prob = cfg.out.join(format!("{id}_prob.png"));
    write_probability_png(&prob, &pred.map)?;
    let written = write_branch_maps(&cfg.out, &id, pred.map.width, pred.map.height, &pred.branches)?;
    println!("{}", prob.display());
    for p in written {
        println!("{}", p.display());
    }
    Ok(())
}

pub fn cmd_synth(cfg: &RunConfig) -> Result<()> {
    prepare_out(cfg)?;
    let synth = cfg.synth_config();
    write_synthetic(&cfg.out, &synth)?;
    println!(
        "wrote {} training and {} test images to {}",
        synth.train,
        synth.test,
        cfg.out.display()
    );
    Ok(())
}

/// Runs the self-checks and returns whether all passed.
pub fn cmd_selftest(cfg: &RunConfig, fault: Option<OpKind>) -> Result<bool> {
    fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
    let checks = selfcheck::run_all(fault, &cfg.out);
    let mut ok = true;
    for c in &checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        ok &= c.passed;
    }
    println!(
        "{} of {} checks passed",
        checks.iter().filter(|c| c.passed).count(),
        checks.len()
    );
    Ok(ok)
}

pub fn parse_fault(name: &str) -> Result<OpKind> {
    Ok(match name {
        "conv2d" => OpKind::Conv2d,
        "maxpool" => OpKind::MaxPool2x,
        "upsample" => OpKind::Upsample2x,
        "batchnorm" => OpKind::BatchNorm,
        "relu" => OpKind::Relu,
        "sigmoid" => OpKind::Sigmoid,
        "concat" => OpKind::Concat,
        "add" => OpKind::Add,
        "mse" => OpKind::Mse,
        other => return Err(Error::Config(format!("unknown op {other:?}"))),
    })
}

