//! Source-free adaptation of small feed-forward classifiers with historical
//! contrastive learning.
//!
//! The current model is contrasted against frozen snapshots of itself
//! (instance level, [`hcid`]) and self-trained on pseudo labels weighted by
//! how consistently current and historical models predict them (category
//! level, [`hccd`]). [`pipeline`] ties both into a training loop with
//! baselines and diagnostics.

// `!(x > 0.0)` is used on purpose so NaN fails range checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod exec;
pub mod hccd;
pub mod hcid;
pub mod model;
pub mod numcore;
pub mod pipeline;

pub use error::{HclError, Result};
pub use exec::Execution;
