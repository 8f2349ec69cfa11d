//! Memory-reinforced identification feature learning for person search.
//!
//! The crate is `no_std` (it needs `alloc`) and holds every algorithmic piece:
//!
//! - [`memory`]: labeled/unlabeled FIFO feature queues and the per-identity
//!   look-up table used by the baseline.
//! - [`ema`]: online parameters and their slow-moving average.
//! - [`loss`]: the pairwise log-sum-exp loss with closed-form gradients, and
//!   the look-up-table softmax loss.
//! - [`model`]: box crops, bilinear resampling and a small convolutional
//!   encoder with hand-written backpropagation.
//! - [`data`]: a seeded synthetic person-search dataset generator and a
//!   detector-noise simulator.
//! - [`eval`]: IoU-gated retrieval evaluation (AP, mAP, CMC, gallery sweeps).
//! - [`harness`]: the training loop, learning-rate schedule, ablation grid
//!   and summary tables.
//!
//! File formats and the command-line interface live in the `persearch` crate.
#![no_std]

extern crate alloc;

pub mod data;
pub mod ema;
pub mod error;
pub mod eval;
pub mod harness;
pub mod linalg;
pub mod loss;
pub mod memory;
pub mod model;
pub mod rng;

use serde::{Deserialize, Serialize};

pub use error::{Error, Result};
pub use linalg::Embedding;

/// Identifier of an annotated person identity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct IdentityId(pub u32);

/// Identifier of a scene image within a dataset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SceneId(pub u32);
