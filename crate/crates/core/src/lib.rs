//! Prompt compression as sequential token deletion, trained with a clipped
//! actor-critic objective under a tightening compression-rate curriculum.

pub mod baselines;
pub mod config;
pub mod corpus;
pub mod env;
pub mod error;
pub mod eval;
pub mod metrics;
pub mod nn;
pub mod policy;
pub mod reward;
pub mod scoring;
pub mod tokenizer;
pub mod trainer;

pub use error::{Error, Result};
