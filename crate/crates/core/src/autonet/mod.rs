//! Miniature fully-convolutional networks trained from scratch.
//!
//! Parameters are generic over [`Real`]: training runs in `f32`, gradient
//! checks in `f64`.

pub mod adam;
pub mod checkpoint;
pub mod loss;
pub mod network;
pub(crate) mod ops;
pub mod params;
pub mod predict;
pub mod real;
pub mod spec;
pub mod tensor;
pub mod train;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, Checkpoint};
pub use loss::{weighted_mse, weighted_mse_grad, Targets};
pub use network::{backward, forward, update_running_stats, Cache, Mode};
pub use ops::BnBatchStats;
pub use params::{bilinear_kernel, init_params, ModelParams};
pub use predict::predict_full;
pub use real::Real;
pub use spec::{FuseMode, LayerSpec, ModelSpec, ParamSlot, Plan, Preset, SpecBuilder};
pub use tensor::Tensor4;
pub use train::{train, train_with, EpochRecord, History, TrainConfig, Trainer};
