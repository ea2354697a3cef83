//! A small 1-D convolutional regression network with hand-written backward
//! passes.
//!
//! Layers are generic over [`Real`] so gradients can be verified in `f64`
//! while training and checkpoints use `f32`. Activations are laid out
//! channel-major (see [`Act`]), which reduces convolution and the fully
//! connected layers to GEMM calls.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod model;
pub mod ops;
pub mod optim;
pub mod real;
pub mod tensor;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, OptimizerState};
pub use data::{Dataset, FeatureStats};
pub use error::{NnError, Result};
pub use model::{standard_architecture_hash, CfoNet, LayerDesc, Param, ParamGroup, ParamKind, DEFAULT_DROPOUT};
pub use ops::{Activation, ConvSpec, Mode};
pub use optim::{clip_grad_norm, loss_mse_l2, AdamW, AdamWConfig, PlateauScheduler};
pub use real::Real;
pub use tensor::{Act, Tensor};
pub use train::{predict_all, train, EpochRecord, TrainConfig, TrainOutcome};
