//! Head-only adaptation to one device from captures with known bits.
//!
//! The convolutional trunk is frozen and runs in evaluation mode, so its
//! pooled descriptors are computed once per frame. Each step predicts `θ̂`
//! with the head, evaluates the demodulation loss of every frame at its
//! `θ̂`, and backpropagates `dL/dθ̂` through the head.

use cfo_core::{BitStream, Complex64, OfdmConfig};
use cfo_nn::train::EVAL_BATCH;
use cfo_nn::{clip_grad_norm, Act, AdamW, AdamWConfig, CfoNet, Checkpoint, Mode, ParamGroup};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::capture::Capture;
use crate::demod_loss::differentiable_demod_loss;
use crate::error::{Result, Sim2RealError};
use crate::infer::{ensure_same_config, DnnEstimator};

/// Parameters that never change during fine-tuning.
pub const FROZEN_GROUP: ParamGroup = ParamGroup::Conv;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FineTuneConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for FineTuneConfig {
    fn default() -> Self {
        Self { epochs: 20, learning_rate: 1e-4, batch_size: 32, clip_norm: 1.0, seed: 0 }
    }
}

impl FineTuneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Sim2RealError::Config("epochs and batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.clip_norm > 0.0) {
            return Err(Sim2RealError::Config("learning_rate and clip_norm must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FineTuneEpoch {
    pub epoch: usize,
    /// Mean demodulation loss over the epoch's batches, dropout active.
    pub train_loss: f64,
}

#[derive(Debug, Clone)]
pub struct FineTuneOutcome {
    pub checkpoint: Checkpoint,
    pub history: Vec<FineTuneEpoch>,
    /// Evaluation-mode mean demodulation loss before and after adaptation.
    pub loss_before: f64,
    pub loss_after: f64,
}

struct Frame<'a> {
    samples: &'a [Complex64],
    bits: BitStream,
}

/// Pooled trunk descriptors, one row of `width` values per frame.
fn trunk_rows(est: &mut DnnEstimator, frames: &[Frame<'_>]) -> Result<(Vec<f32>, usize)> {
    let dim = est.cfg.feature_len();
    let mut rows = Vec::new();
    let mut width = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for chunk in frames.chunks(EVAL_BATCH) {
        let samples: Vec<&[Complex64]> = chunk.iter().map(|f| f.samples).collect();
        let x = Act::new(1, chunk.len(), dim, est.inputs(&samples)?)?;
        let f = est.net.forward_trunk(x, Mode::Eval, &mut rng, false)?;
        width = f.channels;
        for b in 0..f.batch {
            rows.extend((0..f.channels).map(|c| f.at(c, b, 0)));
        }
    }
    Ok((rows, width))
}

/// Channel-major head input for the selected frames.
fn gather(rows: &[f32], width: usize, idx: &[usize]) -> Result<Act<f32>> {
    let mut data = vec![0.0f32; width * idx.len()];
    for (b, &i) in idx.iter().enumerate() {
        for c in 0..width {
            data[c * idx.len() + b] = rows[i * width + c];
        }
    }
    Ok(Act::new(width, idx.len(), 1, data)?)
}

fn batch_losses(frames: &[Frame<'_>], idx: &[usize], pred: &[f32], cfg: &OfdmConfig) -> Result<Vec<(f64, f64)>> {
    idx.par_iter()
        .zip(pred)
        .map(|(&i, &p)| {
            let l = differentiable_demod_loss(frames[i].samples, f64::from(p), &frames[i].bits, cfg)?;
            Ok((l.loss, l.dloss_dtheta))
        })
        .collect()
}

fn eval_loss(net: &mut CfoNet<f32>, rows: &[f32], width: usize, frames: &[Frame<'_>], cfg: &OfdmConfig) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut total = 0.0;
    let all: Vec<usize> = (0..frames.len()).collect();
    for idx in all.chunks(EVAL_BATCH) {
        let pred = net.forward_head(gather(rows, width, idx)?, Mode::Eval, &mut rng, false)?.data;
        total += batch_losses(frames, idx, &pred, cfg)?.iter().map(|l| l.0).sum::<f64>();
    }
    Ok(total / frames.len() as f64)
}

/// Adapts the head of `ckpt` to the device that recorded `captures`.
///
/// No CFO labels are read; the loss only uses the transmitted bits. The
/// returned checkpoint keeps the input statistics and attributes of `ckpt`
/// and has no optimizer state. Its `best_val_loss` holds the final
/// evaluation-mode demodulation loss.
pub fn finetune(
    ckpt: &Checkpoint,
    captures: &[Capture],
    ft: &FineTuneConfig,
    mut on_epoch: impl FnMut(&FineTuneEpoch),
) -> Result<FineTuneOutcome> {
    ft.validate()?;
    let mut est = DnnEstimator::from_checkpoint(ckpt)?;
    let cfg = est.cfg;
    let mut frames = Vec::new();
    for cap in captures {
        ensure_same_config(&cfg, &cap.meta.frame_config()?, &cap.meta.device_id)?;
        frames.extend(cap.frames()?.into_iter().map(|(samples, bits)| Frame { samples, bits }));
    }
    if frames.is_empty() {
        return Err(Sim2RealError::EmptyCaptures);
    }

    let (rows, width) = trunk_rows(&mut est, &frames)?;
    let net = &mut est.net;
    let frozen_before = net.group_bytes(FROZEN_GROUP);
    let loss_before = eval_loss(net, &rows, width, &frames, &cfg)?;

    let mut opt = AdamW::new(ft.learning_rate, AdamWConfig::default());
    let mut rng = ChaCha8Rng::seed_from_u64(ft.seed);
    let mut history = Vec::with_capacity(ft.epochs);
    for epoch in 0..ft.epochs {
        let mut order: Vec<usize> = (0..frames.len()).collect();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut n_batches = 0;
        for idx in order.chunks(ft.batch_size) {
            let pred = net.forward_head(gather(&rows, width, idx)?, Mode::Train, &mut rng, true)?.data;
            let losses = batch_losses(&frames, idx, &pred, &cfg)?;
            let b = idx.len() as f64;
            let loss = losses.iter().map(|l| l.0).sum::<f64>() / b;
            if !loss.is_finite() {
                return Err(cfo_nn::NnError::NonFiniteLoss { epoch, batch: n_batches }.into());
            }
            let dpred: Vec<f32> = losses.iter().map(|l| (l.1 / b) as f32).collect();
            net.zero_grad();
            net.backward_head(&dpred)?;
            let mut head = net.group_params_mut(ParamGroup::Fc);
            clip_grad_norm(&mut head, ft.clip_norm);
            opt.step(&mut head)?;
            loss_sum += loss;
            n_batches += 1;
        }
        let record = FineTuneEpoch { epoch, train_loss: loss_sum / n_batches as f64 };
        on_epoch(&record);
        history.push(record);
    }
    net.clear_caches();
    let loss_after = eval_loss(net, &rows, width, &frames, &cfg)?;
    assert!(net.group_bytes(FROZEN_GROUP) == frozen_before, "frozen parameters changed during fine-tuning");

    let mut checkpoint = Checkpoint::from_model(net, est.stats.clone(), None, loss_after);
    checkpoint.attributes = ckpt.attributes.clone();
    let devices: Vec<&str> = captures.iter().map(|c| c.meta.device_id.as_str()).collect();
    checkpoint.attributes.insert("finetune.devices".into(), devices.join(","));
    checkpoint.attributes.insert("finetune.frames".into(), frames.len().to_string());
    Ok(FineTuneOutcome { checkpoint, history, loss_before, loss_after })
}
