//! From simulation to a specific receiver.
//!
//! Pre-training draws frames through randomized impairments
//! ([`dataset`]), reduces them to CP phase features and fits the network.
//! Adaptation ([`finetune`]) then retrains only the regression head on
//! captures from one device, scoring each CFO estimate by how well the
//! compensated frame demodulates to the known bits ([`demod_loss`]).
//! [`capture`] reads and writes recordings and [`emulate`] produces them
//! from a device profile.

pub mod capture;
pub mod dataset;
pub mod demod_loss;
pub mod emulate;
pub mod error;
pub mod finetune;
pub mod infer;
pub mod pretrain;

pub use capture::{ingest_capture, write_capture, Capture, CaptureMeta};
pub use cfo_nn::FeatureStats;
pub use dataset::{
    dataset_digest, generate_features, generate_frames, generate_pretrain_dataset, PretrainData, SimDatasetSpec, SimFrame,
    Span, Split,
};
pub use demod_loss::{compensate, differentiable_demod_loss, DemodLoss};
pub use emulate::{emulate_device, emulate_device_captures};
pub use error::{Result, Sim2RealError};
pub use finetune::{finetune, FineTuneConfig, FineTuneEpoch, FineTuneOutcome, FROZEN_GROUP};
pub use infer::{store_frame_config, stored_frame_config, DnnEstimator};
pub use pretrain::{pretrain, PretrainOutcome};
