use cfo_core::OfdmConfig;
use cfo_nn::{train, Checkpoint, EpochRecord, TrainConfig};

use crate::dataset::{dataset_digest, generate_pretrain_dataset, SimDatasetSpec};
use crate::error::Result;
use crate::infer::store_frame_config;

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochRecord>,
    pub degenerate_positions: Vec<usize>,
    /// [`dataset_digest`] of the training split.
    pub train_digest: [u8; 32],
}

/// Generates the synthetic splits and trains the network from scratch. The
/// checkpoint carries the input statistics, the frame geometry and the data
/// seed.
pub fn pretrain(
    spec: &SimDatasetSpec,
    cfg: &OfdmConfig,
    train_cfg: &TrainConfig,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<PretrainOutcome> {
    train_cfg.validate()?;
    let data = generate_pretrain_dataset(spec, cfg)?;
    let out = train(&data.train, &data.val, train_cfg, on_epoch)?;
    let mut checkpoint = out.checkpoint;
    store_frame_config(&mut checkpoint, cfg);
    checkpoint.attributes.insert("dataset.seed".into(), spec.seed.to_string());
    checkpoint.attributes.insert("dataset.n_train".into(), spec.n_train.to_string());
    Ok(PretrainOutcome {
        checkpoint,
        history: out.history,
        degenerate_positions: out.degenerate_positions,
        train_digest: dataset_digest(&data.train),
    })
}
