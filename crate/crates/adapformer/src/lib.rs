//! Multivariate time-series forecaster built around channel-wise tokens.
//!
//! Each variate's lookback history becomes one token; tokens are enriched by a
//! low-rank residual enhancer, mixed by a Transformer encoder with per-token
//! instance normalization, and decoded per channel using only the top-k most
//! relevant covariates as scored by a correlation-predicting similarity block.
//! Everything runs on a small f64 tape engine with reverse-mode gradients, so
//! the whole pipeline is deterministic given a seed.

pub mod acf;
pub mod dataio;
pub mod encoder;
pub mod error;
pub mod metrics;
pub mod model;
pub mod numkit;
pub mod revin;
pub mod simblock;
pub mod synthetic;
pub mod training;

pub use error::Error;
pub use numkit::tensor::Tensor;

pub type Result<T> = std::result::Result<T, Error>;
