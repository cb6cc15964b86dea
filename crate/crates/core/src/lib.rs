//! Graph-guided diffusion imputation for parametric assembly designs.
//!
//! A partial design is encoded twice: per component through a message-passing
//! network over the assembly graph, and per feature through a tokenizer with
//! positional encodings. Cross-attention fuses the two into a conditioning
//! tensor that drives a denoising diffusion model over the missing features.

pub mod baselines;
pub mod checkpoint;
pub mod config;
pub mod diffusion;
pub mod encode;
pub mod error;
pub mod evaluate;
pub mod fusion;
pub mod graph_encoder;
pub mod ingest;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod schema;

pub use error::{Error, Result};
