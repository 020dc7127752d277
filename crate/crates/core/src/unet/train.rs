//! Training loop: seeded init, per-epoch shuffle, piecewise learning rate,
//! Adam and per-epoch validation on Dice loss.

use std::fmt::Write as _;

use rand::seq::SliceRandom;

use super::checkpoint::Checkpoint;
use super::model::{unet_forward, unet_forward_on, UNetConfig, UNetParams};
use super::optim::Adam;
use super::tape::Tape;
use super::tensor::{self, Tensor};
use crate::dataset::{DatasetSplit, Frame};
use crate::error::{Error, Result};
use crate::rng::stream;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub batch_size: usize,
    pub initial_lr: f64,
    pub drop_period: usize,
    pub drop_factor: f64,
    pub shuffle: bool,
    pub smooth: f64,
    /// Stops after this many optimizer steps even mid-epoch.
    pub max_steps: Option<usize>,
    pub seed: u64,
    pub model: UNetConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 20,
            batch_size: 1,
            initial_lr: 1e-4,
            drop_period: 10,
            drop_factor: 0.3,
            shuffle: true,
            smooth: 1e-5,
            max_steps: None,
            seed: 0,
            model: UNetConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_epochs == 0 {
            return Err(Error::config("train.max_epochs", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size", "must be positive"));
        }
        if !(self.initial_lr > 0.0) {
            return Err(Error::config("train.initial_lr", "must be positive"));
        }
        if self.drop_period == 0 {
            return Err(Error::config("train.drop_period", "must be positive"));
        }
        if !(self.drop_factor > 0.0) {
            return Err(Error::config("train.drop_factor", "must be positive"));
        }
        self.model.validate()
    }
}

/// `initial_lr * factor^floor((epoch - 1) / period)` for 1-based epochs.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    let drops = (epoch.max(1) - 1) / cfg.drop_period;
    cfg.initial_lr * cfg.drop_factor.powi(drops as i32)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    /// NaN when there is no validation set.
    pub val_loss: f64,
    pub lr: f64,
}

pub const LOG_HEADER: &str = "epoch,train_loss,val_loss,lr";

pub fn log_to_csv(rows: &[EpochLog]) -> String {
    let mut s = String::from(LOG_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(s, "{},{:.6},{:.6},{:e}", r.epoch, r.train_loss, r.val_loss, r.lr);
    }
    s
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochLog>,
    pub steps: usize,
}

impl TrainOutput {
    /// Lowest validation loss over all epochs, NaN without a validation set.
    pub fn best_val_loss(&self) -> f64 {
        self.log
            .iter()
            .map(|r| r.val_loss)
            .filter(|v| !v.is_nan())
            .fold(f64::NAN, f64::min)
    }
}

/// Network input for a batch of frames, each scaled by its own peak.
pub fn frames_to_input(frames: &[&Frame]) -> Result<Tensor> {
    let first = frames.first().ok_or(Error::Empty("frames_to_input"))?;
    let (h, d, w) = first.intensity.grid.dims;
    let vol = h * d * w;
    let mut data = Vec::with_capacity(frames.len() * vol);
    for f in frames {
        if f.intensity.grid != first.intensity.grid {
            return Err(Error::GridMismatch { op: "frames_to_input" });
        }
        let peak = f.intensity.values.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
        let scale = if peak > 0.0 { 1.0 / peak } else { 0.0 };
        data.extend(f.intensity.values.iter().map(|v| v * scale));
    }
    Tensor::from_vec([frames.len(), 1, h, d, w], data)
}

pub fn frames_to_target(frames: &[&Frame], classes: usize) -> Result<Tensor> {
    let first = frames.first().ok_or(Error::Empty("frames_to_target"))?;
    let (h, d, w) = first.mask.grid.dims;
    let labels: Vec<u8> = frames.iter().flat_map(|f| f.mask.labels.iter().copied()).collect();
    tensor::one_hot(&labels, frames.len(), [h, d, w], classes)
}

/// Mean Dice loss of `params` over `frames`, one frame at a time.
pub fn mean_dice_loss(params: &UNetParams, frames: &[Frame], smooth: f64) -> Result<f64> {
    if frames.is_empty() {
        return Ok(f64::NAN);
    }
    let mut total = 0.0;
    for f in frames {
        let x = frames_to_input(&[f])?;
        let t = frames_to_target(&[f], params.config.classes)?;
        let p = unet_forward(params, &x)?;
        total += tensor::dice_loss(&p, &t, smooth)?;
    }
    Ok(total / frames.len() as f64)
}

/// Per-voxel argmax labels for one frame.
pub fn predict_labels(params: &UNetParams, frame: &Frame) -> Result<Vec<u8>> {
    let x = frames_to_input(&[frame])?;
    let p = unet_forward(params, &x)?;
    Ok(tensor::argmax_channels(&p))
}

/// One forward/backward pass and Adam update; returns the batch loss.
pub fn train_step(
    params: &mut UNetParams,
    opt: &mut Adam,
    batch: &[&Frame],
    lr: f64,
    smooth: f64,
) -> Result<f64> {
    let x = frames_to_input(batch)?;
    let target = frames_to_target(batch, params.config.classes)?;
    let mut tape = Tape::new();
    let f = unet_forward_on(&mut tape, params, &x, true)?;
    let loss = tape.dice_loss(f.probs, target, smooth)?;
    let value = tape.value(loss).data[0];
    let grads = tape.backward(loss)?;
    let zero: Vec<Tensor> = params.tensors.iter().map(|t| Tensor::zeros(t.tensor.shape)).collect();
    let g: Vec<&Tensor> = f
        .params
        .iter()
        .zip(&zero)
        .map(|(v, z)| grads.get(*v).unwrap_or(z))
        .collect();
    let mut p: Vec<&mut Tensor> = params.tensors.iter_mut().map(|t| &mut t.tensor).collect();
    opt.update(&mut p, &g, lr)?;
    Ok(value)
}

pub fn train(split: &DatasetSplit<Frame>, cfg: &TrainConfig) -> Result<TrainOutput> {
    cfg.validate()?;
    if split.train.is_empty() {
        return Err(Error::Empty("train: training set"));
    }
    let mut params = UNetParams::init(cfg.model, cfg.seed)?;
    let mut opt = Adam::new(params.tensors.iter().map(|t| &t.tensor));
    let mut log = Vec::with_capacity(cfg.max_epochs);
    let mut steps = 0;
    let mut epoch = 0;
    let mut order: Vec<usize> = (0..split.train.len()).collect();
    'epochs: for e in 1..=cfg.max_epochs {
        if cfg.max_steps.is_some_and(|m| steps >= m) {
            break;
        }
        epoch = e;
        let lr = lr_at(e, cfg);
        if cfg.shuffle {
            order.sort_unstable();
            order.shuffle(&mut stream(cfg.seed, &format!("epoch-{e}")));
        }
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Frame> = chunk.iter().map(|&i| &split.train[i]).collect();
            loss_sum += train_step(&mut params, &mut opt, &batch, lr, cfg.smooth)?;
            batches += 1;
            steps += 1;
            if cfg.max_steps.is_some_and(|m| steps >= m) {
                log.push(EpochLog {
                    epoch: e,
                    train_loss: loss_sum / batches as f64,
                    val_loss: mean_dice_loss(&params, &split.val, cfg.smooth)?,
                    lr,
                });
                break 'epochs;
            }
        }
        log.push(EpochLog {
            epoch: e,
            train_loss: loss_sum / batches as f64,
            val_loss: mean_dice_loss(&params, &split.val, cfg.smooth)?,
            lr,
        });
    }
    Ok(TrainOutput {
        checkpoint: Checkpoint {
            params,
            optimizer: opt,
            epoch: epoch as u64,
        },
        log,
        steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule() {
        let cfg = TrainConfig::default();
        for e in 1..=10 {
            assert_eq!(lr_at(e, &cfg), 1e-4);
        }
        for e in 11..=20 {
            assert!((lr_at(e, &cfg) - 3e-5).abs() < 1e-20);
        }
        assert!((lr_at(21, &cfg) - 9e-6).abs() < 1e-20);
    }
}
