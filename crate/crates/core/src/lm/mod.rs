//! Decoder-only transformer trained on walk corpora.
//!
//! Parameters live in one flat vector (see [`params::Layout`]); the forward
//! and backward passes in [`model`] are written by hand and are generic over
//! `f32` and `f64`.

pub mod checkpoint;
pub mod infer;
pub mod model;
pub mod optim;
pub mod params;
pub mod scalar;
pub mod train;

pub use checkpoint::{Checkpoint, CheckpointHeader};
pub use infer::{lm_entity_distribution, predict};
pub use optim::{AdamState, AdamW};
pub use params::{LmConfig, LmParams};
pub use scalar::Scalar;
pub use train::{train, write_train_log, LrSchedule, StepLog, TrainConfig, Trainer};
