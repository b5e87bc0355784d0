//! Beat-aware contrastive pretraining for 12-lead ECG.

pub mod beats;
pub mod data;
pub mod error;
pub mod exec;
pub mod loss;
pub mod nn;
pub mod pipeline;
pub mod seeds;
pub mod selftest;
pub mod stats;
pub mod targets;
pub mod vcg;

pub use error::{Error, Result};
pub use exec::Exec;
