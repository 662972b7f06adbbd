//! Acoustic-to-articulatory inversion with a conditioned autoregressive
//! dilated-causal-convolution network.
//!
//! The crate is organised by pipeline stage:
//!
//! - [`frontend`]: audio loading, STFT and log-mel features.
//! - [`trajectory`]: the ten vocal-tract channels, resampling and per-speaker
//!   range normalization.
//! - [`wavenet`]: network configuration, parameters, the forward pass and the
//!   discretized mixture-of-logistics output distribution.
//! - [`train`]: loss, exact gradients, ADAM and the teacher-forcing loop.
//! - [`generate`]: naive and cached autoregressive decoders.
//! - [`metrics`]: RMSE, correlation and grouped reports.
//! - [`corpus`]: tensor files, manifests, splits and a synthetic corpus.
//! - [`pipeline`]: glue that turns a corpus into model-ready sequences and
//!   runs inversion end to end.

pub mod corpus;
pub mod error;
pub mod frontend;
pub mod generate;
pub mod matrix;
pub mod metrics;
pub mod pipeline;
pub mod train;
pub mod trajectory;
pub mod wavenet;

pub use error::{Error, Result};
pub use matrix::Matrix;
