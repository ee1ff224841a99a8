//! Adam optimization, the learning-rate schedule and the epoch loop.

mod adam;

use std::path::PathBuf;

use trivessel_tensor::{Mode, Scalar, Tensor};

pub use adam::{AdamConfig, AdamState};

use crate::data::{epoch_order, BatchSource};
use crate::network::{save_checkpoint, TriNetwork};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainPlan {
    pub base_lr: f64,
    /// Multiplicative learning-rate decay per epoch.
    pub decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Save `epoch_{e}.ckpt` every this many epochs (0 disables).
    pub checkpoint_every: usize,
}

impl Default for TrainPlan {
    fn default() -> Self {
        TrainPlan {
            base_lr: 0.0008,
            decay: 0.94,
            epochs: 60,
            batch_size: 64,
            seed: 0,
            checkpoint_every: 0,
        }
    }
}

impl TrainPlan {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr.is_finite() && self.base_lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.base_lr)));
        }
        if !(self.decay.is_finite() && self.decay > 0.0) {
            return Err(Error::Config(format!("decay must be positive, got {}", self.decay)));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch size must be positive".into()));
        }
        Ok(())
    }

    /// `base_lr * decay^epoch` for `0 <= epoch < epochs`.
    pub fn lr_at(&self, epoch: usize) -> Result<f64> {
        if epoch >= self.epochs {
            return Err(Error::Config(format!(
                "epoch {epoch} is outside the {}-epoch schedule",
                self.epochs
            )));
        }
        Ok(self.base_lr * self.decay.powi(epoch as i32))
    }
}

/// A network with its optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct Trainer<T: Scalar = f32> {
    pub net: TriNetwork<T>,
    pub adam: AdamState<T>,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(net: TriNetwork<T>) -> Self {
        let adam = AdamState::new(net.store(), AdamConfig::default());
        Trainer { net, adam }
    }

    /// Forward, MSE, backward and one Adam update. Returns the batch loss.
    /// Non-finite inputs, losses or gradients abort before the update.
    pub fn step(&mut self, x: &Tensor<T>, y: &Tensor<T>, lr: f64) -> Result<f64> {
        let finite = |t: &Tensor<T>| t.data().iter().all(|v| v.to_f64_lossy().is_finite());
        if !finite(x) || !finite(y) {
            return Err(Error::Numerical("non-finite value in a training batch".into()));
        }
        let loss = self.net.loss_and_grads(x, y, Mode::Train)?;
        if !loss.is_finite() {
            return Err(Error::Numerical(format!("training loss became {loss}")));
        }
        for p in self.net.store().params() {
            if p.tensor.grad.as_ref().is_some_and(|g| g.iter().any(|v| !v.to_f64_lossy().is_finite())) {
                return Err(Error::Numerical(format!("non-finite gradient for {}", p.name)));
            }
        }
        self.adam.step(self.net.store_mut(), lr)?;
        Ok(loss)
    }

    /// Mean per-pixel MSE over a source in inference mode.
    pub fn evaluate_loss(&self, source: &dyn BatchSource<T>, batch_size: usize) -> Result<f64> {
        mean_loss(&self.net, source, batch_size)
    }
}

/// Mean per-pixel squared error over every example of `source`, computed
/// in inference mode so running statistics are not touched.
pub fn mean_loss<T: Scalar>(net: &TriNetwork<T>, source: &dyn BatchSource<T>, batch_size: usize) -> Result<f64> {
    let n = source.len();
    if n == 0 {
        return Err(Error::Dataset("cannot compute a loss over an empty set".into()));
    }
    let indices: Vec<usize> = (0..n).collect();
    let (mut sum, mut count) = (0.0f64, 0usize);
    for chunk in indices.chunks(batch_size.max(1)) {
        let (x, y) = source.batch(chunk, 0)?;
        let p = net.infer(&x)?.probability;
        sum += p
            .data()
            .iter()
            .zip(y.data())
            .map(|(a, b)| (a.to_f64_lossy() - b.to_f64_lossy()).powi(2))
            .sum::<f64>();
        count += y.numel();
    }
    Ok(sum / count as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

pub const HISTORY_HEADER: &str = "epoch,lr,train_loss,val_loss";

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = format!("{HISTORY_HEADER}\n");
    for r in history {
        let val = r.val_loss.map_or_else(|| "NA".to_string(), |v| v.to_string());
        out.push_str(&format!("{},{},{},{}\n", r.epoch, r.lr, r.train_loss, val));
    }
    out
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Directory for `best.ckpt`, `last.ckpt` and periodic checkpoints.
    pub checkpoint_dir: Option<PathBuf>,
    /// Input channel means stored alongside the weights.
    pub channel_mean: Option<[f64; 3]>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T: Scalar> {
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    /// Network at the epoch with the lowest validation loss (training loss
    /// when there is no validation set).
    pub best: TriNetwork<T>,
}

/// Runs the epoch loop: seeded shuffle, mini-batches (the last one may be
/// short), Adam at `lr_at(epoch)`, then validation in inference mode.
pub fn train<T: Scalar>(
    trainer: &mut Trainer<T>,
    train_set: &dyn BatchSource<T>,
    val_set: Option<&dyn BatchSource<T>>,
    plan: &TrainPlan,
    opts: &TrainOptions,
) -> Result<TrainOutcome<T>> {
    plan.validate()?;
    if train_set.is_empty() {
        return Err(Error::Dataset("training set is empty".into()));
    }
    if let Some(dir) = &opts.checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut history = Vec::with_capacity(plan.epochs);
    let mut best: Option<(f64, usize, TriNetwork<T>)> = None;
    for epoch in 0..plan.epochs {
        let lr = plan.lr_at(epoch)?;
        let order = epoch_order(train_set.len(), plan.seed, epoch);
        let (mut sum, mut seen) = (0.0f64, 0usize);
        for (b, chunk) in order.chunks(plan.batch_size).enumerate() {
            let (x, y) = train_set.batch(chunk, epoch)?;
            let loss = trainer.step(&x, &y, lr).map_err(|e| match e {
                Error::Numerical(m) => Error::Numerical(format!("epoch {epoch}, batch {b}: {m}")),
                other => other,
            })?;
            sum += loss * chunk.len() as f64;
            seen += chunk.len();
        }
        let train_loss = sum / seen as f64;
        let val_loss = match val_set {
            Some(v) if !v.is_empty() => Some(trainer.evaluate_loss(v, plan.batch_size)?),
            _ => None,
        };
        if val_loss.is_some_and(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("epoch {epoch}: validation loss is not finite")));
        }
        log::info!(
            "epoch {epoch}: lr {lr:.6} train {train_loss:.5} val {}",
            val_loss.map_or_else(|| "-".into(), |v| format!("{v:.5}"))
        );
        history.push(EpochRecord {
            epoch,
            lr,
            train_loss,
            val_loss,
        });
        let score = val_loss.unwrap_or(train_loss);
        if best.as_ref().is_none_or(|(s, _, _)| score < *s) {
            best = Some((score, epoch, trainer.net.clone()));
            if let Some(dir) = &opts.checkpoint_dir {
                save_checkpoint(&dir.join("best.ckpt"), &trainer.net, None, opts.channel_mean)?;
            }
        }
        if let Some(dir) = &opts.checkpoint_dir {
            if plan.checkpoint_every > 0 && (epoch + 1) % plan.checkpoint_every == 0 {
                save_checkpoint(&dir.join(format!("epoch_{epoch}.ckpt")), &trainer.net, Some(&trainer.adam), opts.channel_mean)?;
            }
        }
    }
    if let Some(dir) = &opts.checkpoint_dir {
        save_checkpoint(&dir.join("last.ckpt"), &trainer.net, Some(&trainer.adam), opts.channel_mean)?;
    }
    let (_, best_epoch, best) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        history,
        best_epoch,
        best,
    })
}
