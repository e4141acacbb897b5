//! Dice + BCE training with Adam, plateau scheduling and best-validation
//! checkpointing.

mod checkpoint;
mod loss;
mod optim;

use std::fmt;
use std::path::PathBuf;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::SamplePair;
use crate::error::{Error, Result};
use crate::ops::Mode;
use crate::tensor::Tensor;
use crate::unet::UNetModel;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, MAGIC, VERSION};
pub use loss::{dice_bce_loss, DICE_SMOOTH};
pub use optim::{adam_step, AdamConfig, AdamState, PlateauScheduler};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam: AdamConfig,
    pub scheduler_factor: f64,
    pub scheduler_patience: usize,
    /// Best-validation checkpoint target; `None` keeps everything in memory.
    pub checkpoint_path: Option<PathBuf>,
    /// Seeds the per-epoch shuffle of the training set.
    pub seed: u64,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 2,
            learning_rate: 1e-4,
            adam: AdamConfig::default(),
            scheduler_factor: 0.5,
            scheduler_patience: 5,
            checkpoint_path: None,
            seed: 0,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.epochs == 0 {
            return bad("epochs must be >= 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be > 0");
        }
        let AdamConfig { beta1, beta2, eps } = self.adam;
        if !(0.0 < beta1 && beta1 < 1.0 && 0.0 < beta2 && beta2 < 1.0) {
            return bad("adam betas must lie in (0, 1)");
        }
        if eps <= 0.0 {
            return bad("adam eps must be > 0");
        }
        if !(self.scheduler_factor > 0.0 && self.scheduler_factor < 1.0) {
            return bad("scheduler factor must lie in (0, 1)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Learning rate used during the epoch.
    pub lr: f64,
    pub secs: f64,
    pub improved: bool,
}

impl fmt::Display for EpochRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "epoch={} train_loss={:.6} val_loss={:.6} lr={:e} secs={:.3}",
            self.epoch, self.train_loss, self.val_loss, self.lr, self.secs
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSummary {
    pub records: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub adam_steps: u64,
    pub total_secs: f64,
}

impl fmt::Display for TrainingSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "trained {} epochs in {:.1}s ({} optimizer steps)",
            self.records.len(),
            self.total_secs,
            self.adam_steps
        )?;
        write!(f, "best epoch {} with val_loss={:.6}", self.best_epoch, self.best_val_loss)
    }
}

/// Tracks the lowest validation loss seen; strict improvement only.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BestTracker {
    pub epoch: usize,
    pub loss: f64,
}

impl Default for BestTracker {
    fn default() -> Self {
        BestTracker {
            epoch: 0,
            loss: f64::INFINITY,
        }
    }
}

impl BestTracker {
    /// True when `loss` beats the best so far.
    pub fn observe(&mut self, epoch: usize, loss: f64) -> bool {
        if loss < self.loss {
            *self = BestTracker { epoch, loss };
            true
        } else {
            false
        }
    }
}

fn batch_tensors(samples: &[&SamplePair]) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let images: Vec<_> = samples.iter().map(|s| &s.image).collect();
    let masks: Vec<_> = samples.iter().map(|s| &s.mask).collect();
    Ok((Tensor::stack(&images)?, Tensor::stack(&masks)?))
}

/// Mean loss over `samples` in inference mode, batch by batch. Leaves the
/// model untouched.
pub fn evaluate_loss(model: &UNetModel<f32>, samples: &[SamplePair], batch_size: usize) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::invalid("evaluate_loss", "no samples"));
    }
    let mut total = 0.0;
    for chunk in samples.chunks(batch_size.max(1)) {
        let refs: Vec<&SamplePair> = chunk.iter().collect();
        let (x, y) = batch_tensors(&refs)?;
        let (loss, _) = dice_bce_loss(&model.forward(&x)?, &y)?;
        total += loss * chunk.len() as f64;
    }
    Ok(total / samples.len() as f64)
}

/// Epoch-at-a-time training driver.
pub struct Trainer<'m> {
    model: &'m mut UNetModel<f32>,
    cfg: TrainConfig,
    adam: AdamState,
    scheduler: PlateauScheduler,
    rng: ChaCha8Rng,
    best: BestTracker,
    epoch: usize,
    records: Vec<EpochRecord>,
    started: Instant,
}

impl<'m> Trainer<'m> {
    pub fn new(model: &'m mut UNetModel<f32>, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Trainer {
            model,
            adam: AdamState::new(),
            scheduler: PlateauScheduler::new(cfg.learning_rate, cfg.scheduler_factor, cfg.scheduler_patience),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            best: BestTracker::default(),
            epoch: 0,
            records: Vec::new(),
            started: Instant::now(),
            cfg,
        })
    }

    pub fn model(&self) -> &UNetModel<f32> {
        self.model
    }

    pub fn adam_state(&self) -> &AdamState {
        &self.adam
    }

    pub fn lr(&self) -> f64 {
        self.scheduler.lr()
    }

    /// One pass over `train` with parameter updates, then a validation pass.
    /// Writes the checkpoint when validation loss strictly improves.
    pub fn run_epoch(&mut self, train: &[SamplePair], val: &[SamplePair]) -> Result<EpochRecord> {
        if train.is_empty() || val.is_empty() {
            return Err(Error::Config("training and validation sets must be non-empty".into()));
        }
        self.epoch += 1;
        let t0 = Instant::now();
        let lr = self.scheduler.lr();
        let mut order: Vec<usize> = (0..train.len()).collect();
        if self.cfg.shuffle {
            order.shuffle(&mut self.rng);
        }
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for (b, idx) in order.chunks(self.cfg.batch_size).enumerate() {
            let refs: Vec<&SamplePair> = idx.iter().map(|&i| &train[i]).collect();
            let (x, y) = batch_tensors(&refs)?;
            self.model.zero_grad();
            let (logits, cache) = self.model.forward_train(&x)?;
            let (loss, grad) = dice_bce_loss(&logits, &y)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch: self.epoch,
                    batch: b + 1,
                });
            }
            self.model.backward(&cache, &grad)?;
            let mut params = self.model.parameters_mut();
            adam_step(&mut params, &mut self.adam, &self.cfg.adam, lr)?;
            loss_sum += loss;
            batches += 1;
        }
        self.model.set_mode(Mode::Inference);
        let val_loss = evaluate_loss(self.model, val, self.cfg.batch_size)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch: self.epoch,
                batch: 0,
            });
        }
        self.scheduler.step(val_loss);
        let improved = self.best.observe(self.epoch, val_loss);
        if improved {
            if let Some(path) = &self.cfg.checkpoint_path {
                let ck = Checkpoint::from_model(self.model, self.epoch as u32, val_loss);
                save_checkpoint(&ck, path)?;
            }
        }
        let record = EpochRecord {
            epoch: self.epoch,
            train_loss: loss_sum / batches as f64,
            val_loss,
            lr,
            secs: t0.elapsed().as_secs_f64(),
            improved,
        };
        self.records.push(record.clone());
        Ok(record)
    }

    pub fn summary(&self) -> TrainingSummary {
        TrainingSummary {
            records: self.records.clone(),
            best_epoch: self.best.epoch,
            best_val_loss: self.best.loss,
            adam_steps: self.adam.steps(),
            total_secs: self.started.elapsed().as_secs_f64(),
        }
    }
}

/// Runs `cfg.epochs` epochs, calling `on_epoch` after each.
pub fn train(
    model: &mut UNetModel<f32>,
    train_set: &[SamplePair],
    val_set: &[SamplePair],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainingSummary> {
    let mut trainer = Trainer::new(model, cfg.clone())?;
    for _ in 0..cfg.epochs {
        let rec = trainer.run_epoch(train_set, val_set)?;
        on_epoch(&rec);
    }
    Ok(trainer.summary())
}
