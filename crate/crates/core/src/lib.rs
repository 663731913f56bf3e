//! Counter-condition diagnosis on functional-connectivity matrices.
//!
//! The pipeline: an adaptive Gumbel-sigmoid mask reweights each subject's
//! connections, a transformer-style encoder relates seed-based networks,
//! cosine prototypes classify the summary token, and a decoder rebuilds FC
//! from `z̄ + summary` — or from `z̄ + prototype` of the opposite class to
//! simulate the counter-condition.

pub mod autograd;
pub mod cli;
pub mod data;
pub mod error;
pub mod kv;
pub mod analysis;
pub mod model;
pub mod train;

pub use error::{Error, Result};
