//! Supervised training loop with validation-based checkpoint retention.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, OptimizerState};
use crate::data::{Dataset, FeatureStats};
use crate::error::{NnError, Result};
use crate::model::{CfoNet, NamedArray, DEFAULT_DROPOUT};
use crate::ops::Mode;
use crate::optim::{add_l2_grad, clip_grad_norm, mse, AdamW, AdamWConfig, PlateauScheduler};
use crate::tensor::Act;

/// Inference batch size; has no effect on results.
pub const EVAL_BATCH: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub l2_lambda: f64,
    pub clip_norm: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub scheduler_factor: f64,
    pub scheduler_patience: usize,
    pub dropout: [f64; 2],
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            l2_lambda: 1e-4,
            clip_norm: 1.0,
            batch_size: 128,
            epochs: 30,
            scheduler_factor: 0.5,
            scheduler_patience: 5,
            dropout: DEFAULT_DROPOUT,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("learning_rate", self.learning_rate),
            ("l2_lambda", self.l2_lambda),
            ("clip_norm", self.clip_norm),
            ("scheduler_factor", self.scheduler_factor),
        ];
        if let Some((name, v)) = positive.iter().find(|(_, v)| !(v.is_finite() && *v > 0.0)) {
            return Err(NnError::Config(format!("{name} must be positive, got {v}")));
        }
        if self.batch_size < 2 || self.epochs == 0 || self.scheduler_patience == 0 {
            return Err(NnError::Config("batch_size >= 2, epochs and patience > 0 required".into()));
        }
        if self.scheduler_factor >= 1.0 {
            return Err(NnError::Config("scheduler_factor must be below 1".into()));
        }
        if self.dropout.iter().any(|p| !(0.25..=0.4).contains(p)) {
            return Err(NnError::Config(format!("dropout rates {:?} outside [0.25, 0.4]", self.dropout)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean over batches of MSE + L2 penalty, dropout active.
    pub train_loss: f64,
    /// Evaluation-mode MSE on the validation set.
    pub val_loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochRecord>,
    /// Feature positions whose deviation was clamped during standardization.
    pub degenerate_positions: Vec<usize>,
}

/// Mini-batch index lists for one epoch. A trailing batch of one sample is
/// dropped because batch statistics need at least two.
pub fn epoch_batches(n: usize, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order
        .chunks(batch_size)
        .filter(|c| c.len() >= 2)
        .map(<[usize]>::to_vec)
        .collect()
}

/// Evaluation-mode predictions for already standardized rows.
pub fn predict_all(net: &mut CfoNet<f32>, data: &Dataset) -> Result<Vec<f32>> {
    let mut out = Vec::with_capacity(data.len());
    for chunk in data.features.chunks(EVAL_BATCH * data.dim) {
        let x = Act::new(1, chunk.len() / data.dim, data.dim, chunk.to_vec())?;
        out.extend(net.predict(x)?);
    }
    Ok(out)
}

/// Trains the standard network from scratch.
///
/// Inputs are standardized with statistics fitted on `train` only. After
/// every epoch the validation MSE is computed in evaluation mode; the
/// parameters with the lowest validation loss are returned. `on_epoch` sees
/// each epoch's record as it completes.
pub fn train(train: &Dataset, val: &Dataset, cfg: &TrainConfig, mut on_epoch: impl FnMut(&EpochRecord)) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.len() < 2 || val.is_empty() {
        return Err(NnError::EmptyDataset);
    }
    if train.dim != val.dim {
        return Err(NnError::Shape(format!("train rows have {} features, validation rows {}", train.dim, val.dim)));
    }
    let (stats, degenerate_positions) = FeatureStats::fit(train)?;
    let train_std = stats.apply(train)?;
    let val_std = stats.apply(val)?;

    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut net = CfoNet::<f32>::new(cfg.dropout, &mut init_rng)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut opt = AdamW::new(cfg.learning_rate, AdamWConfig::default());
    let mut sched = PlateauScheduler::new(cfg.scheduler_factor, cfg.scheduler_patience);

    let mut best: Option<(f64, Vec<NamedArray<f32>>, OptimizerState)> = None;
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let batches = epoch_batches(train_std.len(), cfg.batch_size, &mut rng);
        let mut loss_sum = 0.0;
        for (bi, idx) in batches.iter().enumerate() {
            let (x, y) = train_std.gather(idx);
            let pred = net.forward(Act::new(1, idx.len(), train_std.dim, x)?, Mode::Train, &mut rng)?;
            let (data_loss, dpred) = mse(&pred, &y)?;
            let loss = data_loss + cfg.l2_lambda * net.weight_sq_norm();
            if !loss.is_finite() {
                return Err(NnError::NonFiniteLoss { epoch, batch: bi });
            }
            loss_sum += loss;
            net.zero_grad();
            net.backward(&dpred)?;
            let mut params = net.params_mut();
            add_l2_grad(&mut params, cfg.l2_lambda);
            clip_grad_norm(&mut params, cfg.clip_norm);
            opt.step(&mut params)?;
        }
        net.clear_caches();
        let pred = predict_all(&mut net, &val_std)?;
        let (val_loss, _) = mse(&pred, &val_std.labels)?;
        if !val_loss.is_finite() {
            return Err(NnError::NonFiniteLoss { epoch, batch: batches.len() });
        }
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / batches.len().max(1) as f64,
            val_loss,
            lr: opt.lr,
        };
        on_epoch(&record);
        history.push(record);
        if best.as_ref().is_none_or(|(b, _, _)| val_loss < *b) {
            best = Some((val_loss, net.state(), OptimizerState::from_adamw(&opt)));
        }
        opt.lr = sched.step(val_loss, opt.lr);
    }
    let (best_val_loss, state, opt_state) = best.expect("at least one epoch");
    net.load_state(&state)?;
    Ok(TrainOutcome {
        checkpoint: Checkpoint::from_model(&net, stats, Some(opt_state), best_val_loss),
        history,
        degenerate_positions,
    })
}
