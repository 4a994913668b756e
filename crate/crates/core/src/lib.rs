//! Reasoning-path aggregation toolkit.
//!
//! The crate covers the whole desk-scale pipeline:
//!
//! - [`kg`]: interned knowledge graphs, train/test splits and the outgoing-edge
//!   index `C(e)` that random walks and rule probabilities share.
//! - [`walk`]: uniform random walks, verbalisation into `<h> <r> <t> .`
//!   sentences and packing into fixed-length next-token chunks.
//! - [`lm`]: a small pre-norm decoder-only transformer with hand-written
//!   reverse-mode gradients, AdamW training and the entity-restricted output
//!   distribution.
//! - [`rules`]: rule mining, rule-following walk probabilities, logistic rule
//!   weights and the weighted / unweighted aggregation distributions.
//! - [`analysis`]: KL divergences, accuracy, KL grids, rule-length statistics
//!   and the log-sum-inequality check.
//! - [`cot`]: latent reasoning graphs over chain-of-thought data and the
//!   segment-stitching random walk used to build augmentation corpora.

pub mod analysis;
pub mod cot;
pub mod dist;
pub mod error;
pub mod kg;
pub mod lm;
pub mod rules;
pub mod walk;

pub use dist::{DistKind, EntityDistribution};
pub use error::{Error, ErrorKind, Result};
pub use kg::{DatasetSplit, EntityId, KnowledgeGraph, RelationId, Triple};
