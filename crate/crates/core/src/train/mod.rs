//! Adam training of the denoiser under the SURE or MSE objective.

mod adam;
mod checkpoint;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{AdamBlob, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

use std::fmt;
use std::fs::OpenOptions;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::{batches, Batch, NoiseSource, PatchSet};
use crate::error::{Error, Result};
use crate::loss::{mc_divergence, mse_loss, sure_loss, NoiseModel, SureConfig};
use crate::model::Denoiser;
use crate::numerics::Tape;
use crate::rng::{RngStream, StreamKind};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Sure,
    Mse,
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sure" => Ok(LossKind::Sure),
            "mse" => Ok(LossKind::Mse),
            _ => Err(Error::invalid(format!("unknown loss {s:?} (expected sure or mse)"))),
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::Sure => "sure",
            LossKind::Mse => "mse",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub noise: NoiseModel,
    pub epochs: u32,
    pub batch_size: usize,
    pub lr_initial: f64,
    pub lr_after_drop: f64,
    /// Last epoch (1-based) that uses `lr_initial`.
    pub drop_epoch: u32,
    pub seed: u64,
    pub sure: SureConfig,
    pub adam: AdamConfig,
    /// Keep one noisy copy per patch instead of redrawing noise every epoch.
    pub fixed_noise: bool,
    /// Save `epoch-NNN.ckpt` into `checkpoint_dir` every this many epochs.
    pub checkpoint_every: Option<u32>,
    pub checkpoint_dir: Option<PathBuf>,
    pub log_path: Option<PathBuf>,
}

impl TrainConfig {
    /// 50 epochs, batches of 64, learning rate 1e-4 dropping to 1e-5 after
    /// epoch 25.
    pub fn new(loss: LossKind, noise: NoiseModel) -> Self {
        Self {
            loss,
            noise,
            epochs: 50,
            batch_size: 64,
            lr_initial: 1e-4,
            lr_after_drop: 1e-5,
            drop_epoch: 25,
            seed: 0,
            sure: SureConfig::default(),
            adam: AdamConfig::default(),
            fixed_noise: false,
            checkpoint_every: None,
            checkpoint_dir: None,
            log_path: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("epochs and batch size must be ≥ 1"));
        }
        if self.drop_epoch >= self.epochs {
            return Err(Error::invalid(format!(
                "drop epoch {} must precede the last epoch {}",
                self.drop_epoch, self.epochs
            )));
        }
        if !(self.lr_initial > 0.0 && self.lr_after_drop > 0.0) {
            return Err(Error::invalid("learning rates must be positive"));
        }
        if self.checkpoint_every == Some(0) {
            return Err(Error::invalid("checkpoint interval must be ≥ 1"));
        }
        self.sure.validate()
    }

    /// Learning rate for a 1-based epoch: `lr_initial` through
    /// `drop_epoch`, `lr_after_drop` afterwards.
    pub fn lr_at_epoch(&self, epoch: u32) -> Result<f64> {
        if epoch == 0 || epoch > self.epochs {
            return Err(Error::invalid(format!("epoch {epoch} outside 1..={}", self.epochs)));
        }
        Ok(if epoch <= self.drop_epoch {
            self.lr_initial
        } else {
            self.lr_after_drop
        })
    }
}

/// One row of the loss log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub step: u64,
    pub epoch: u32,
    pub loss: f64,
    pub lr: f64,
}

pub const LOG_HEADER: &str = "step,epoch,loss,lr";

impl fmt::Display for LogRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{},{}", self.step, self.epoch, self.loss, self.lr)
    }
}

/// Model, optimizer and RNG positions of a training run.
#[derive(Debug)]
pub struct Trainer<T> {
    config: TrainConfig,
    model: Denoiser<T>,
    adam: AdamState<T>,
    epoch: u32,
    step: u64,
    shuffle_rng: RngStream,
    noise_rng: RngStream,
    probe_rng: RngStream,
    log: Vec<LogRow>,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(model: Denoiser<T>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let adam = AdamState::new(model.parameters(), config.adam);
        let seed = config.seed;
        Ok(Self {
            model,
            adam,
            epoch: 0,
            step: 0,
            shuffle_rng: RngStream::named(seed, StreamKind::Shuffle, 0),
            noise_rng: RngStream::named(seed, StreamKind::Noise, u32::MAX),
            probe_rng: RngStream::named(seed, StreamKind::Probe, 0),
            log: Vec::new(),
            config,
        })
    }

    /// Continues a run saved by [`Trainer::checkpoint`].
    pub fn resume(ck: &Checkpoint, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let model = ck.to_model()?;
        let adam = ck
            .to_adam()
            .unwrap_or_else(|| AdamState::new(model.parameters(), config.adam));
        let [shuffle, noise, probe] = ck.rng[..] else {
            return Err(Error::invalid(format!(
                "checkpoint holds {} RNG states; resuming needs 3",
                ck.rng.len()
            )));
        };
        Ok(Self {
            model,
            adam,
            epoch: ck.epoch,
            step: ck.step,
            shuffle_rng: RngStream::from_state(shuffle),
            noise_rng: RngStream::from_state(noise),
            probe_rng: RngStream::from_state(probe),
            log: Vec::new(),
            config,
        })
    }

    pub fn model(&self) -> &Denoiser<T> {
        &self.model
    }

    pub fn into_model(self) -> Denoiser<T> {
        self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn epoch(&self) -> u32 {
        self.epoch
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// Rows logged by this trainer (not including rows before a resume).
    pub fn log(&self) -> &[LogRow] {
        &self.log
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::from_model(&self.model).with_adam(&self.adam);
        ck.epoch = self.epoch;
        ck.step = self.step;
        ck.rng = vec![self.shuffle_rng.state(), self.noise_rng.state(), self.probe_rng.state()];
        ck
    }

    /// Runs the remaining epochs.
    pub fn run(&mut self, patches: &PatchSet) -> Result<()> {
        if patches.is_empty() {
            return Err(Error::invalid("no training patches"));
        }
        if self.epoch == 0 {
            if let Some(p) = &self.config.log_path {
                write_log(p, &[], true)?;
            }
        }
        while self.epoch < self.config.epochs {
            self.run_epoch(patches)?;
        }
        Ok(())
    }

    pub fn run_epoch(&mut self, patches: &PatchSet) -> Result<()> {
        let epoch = self.epoch + 1;
        let lr = self.config.lr_at_epoch(epoch)?;
        let noise = self.config.noise;
        let source = if self.config.fixed_noise {
            NoiseSource::Fixed { seed: self.config.seed }
        } else {
            NoiseSource::Fresh(&mut self.noise_rng)
        };
        let epoch_batches: Vec<Batch<T>> =
            batches(patches, self.config.batch_size, &mut self.shuffle_rng, noise, source)?.collect();
        let first_row = self.log.len();
        for batch in epoch_batches {
            let loss = self.train_step(&batch, lr)?;
            self.log.push(LogRow {
                step: self.step,
                epoch,
                loss,
                lr,
            });
        }
        self.epoch = epoch;
        log::info!(
            "epoch {epoch}/{}: mean loss {:.6e}",
            self.config.epochs,
            mean_loss(&self.log[first_row..])
        );
        if let Some(p) = &self.config.log_path {
            write_log(p, &self.log[first_row..], false)?;
        }
        if let (Some(every), Some(dir)) = (self.config.checkpoint_every, &self.config.checkpoint_dir) {
            if epoch.is_multiple_of(every) {
                self.checkpoint().save(dir.join(format!("epoch-{epoch:03}.ckpt")))?;
            }
        }
        Ok(())
    }

    /// Forward, loss, backward and one Adam update. Returns the loss value.
    pub fn train_step(&mut self, batch: &Batch<T>, lr: f64) -> Result<f64> {
        let mut tape = Tape::new();
        let bound = self.model.bind(&mut tape, true);
        let y = tape.constant(batch.noisy.clone());
        let fy = bound.forward(&mut tape, y)?;
        let loss = match self.config.loss {
            LossKind::Mse => {
                let clean = batch
                    .clean
                    .clone()
                    .ok_or_else(|| Error::invalid("MSE training needs clean patches"))?;
                let x = tape.constant(clean);
                mse_loss(&mut tape, x, fy)?
            }
            LossKind::Sure => {
                let div = mc_divergence(
                    &mut tape,
                    y,
                    fy,
                    |t, v| bound.forward(t, v),
                    &self.config.sure,
                    &mut self.probe_rng,
                )?;
                sure_loss(&mut tape, y, fy, div, &self.config.noise)?
            }
        };
        let value = tape.value(loss).item()?.as_f64();
        if !value.is_finite() {
            if let Some(dir) = &self.config.checkpoint_dir {
                let path = dir.join("diverged.ckpt");
                self.checkpoint().save(&path)?;
                log::error!("non-finite loss; state saved to {}", path.display());
            }
            return Err(Error::NonFiniteLoss {
                step: self.step + 1,
                value,
            });
        }
        tape.backward(loss)?;
        let grads = bound.grads(&tape);
        self.adam.step(self.model.parameters_mut(), &grads, lr)?;
        self.step += 1;
        Ok(value)
    }
}

/// Trains `model` from scratch for `config.epochs` epochs.
pub fn train<T: Scalar>(model: Denoiser<T>, patches: &PatchSet, config: TrainConfig) -> Result<Trainer<T>> {
    let mut t = Trainer::new(model, config)?;
    t.run(patches)?;
    Ok(t)
}

fn mean_loss(rows: &[LogRow]) -> f64 {
    rows.iter().map(|r| r.loss).sum::<f64>() / rows.len().max(1) as f64
}

fn write_log(path: &Path, rows: &[LogRow], truncate: bool) -> Result<()> {
    let file = OpenOptions::new()
        .create(true)
        .write(true)
        .truncate(truncate)
        .append(!truncate)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    if truncate {
        writeln!(w, "{LOG_HEADER}").map_err(io)?;
    }
    for r in rows {
        writeln!(w, "{r}").map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Parses a loss log written by [`Trainer::run`].
pub fn read_log(path: impl AsRef<Path>) -> Result<Vec<LogRow>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(LOG_HEADER) {
        return Err(Error::invalid(format!("{}: missing log header", path.display())));
    }
    lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            let bad = || Error::invalid(format!("bad log row {l:?}"));
            if f.len() != 4 {
                return Err(bad());
            }
            Ok(LogRow {
                step: f[0].parse().map_err(|_| bad())?,
                epoch: f[1].parse().map_err(|_| bad())?,
                loss: f[2].parse().map_err(|_| bad())?,
                lr: f[3].parse().map_err(|_| bad())?,
            })
        })
        .collect()
}
