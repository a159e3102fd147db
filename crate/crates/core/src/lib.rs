//! Masked-autoencoder pretraining and encoder-decoder forecasting for
//! multivariate time series.
//!
//! The crate is organized bottom-up: [`numeric`] supplies differentiable
//! arrays, [`embedding`] and [`masking`] build and hide patch tokens,
//! [`model`] holds the transformer, [`training`] runs both phases,
//! [`evaluation`] scores forecasts and [`run`] ties everything to a config file.

pub mod data;
pub mod embedding;
pub mod error;
pub mod evaluation;
pub mod masking;
pub mod model;
pub mod numeric;
pub mod run;
pub mod training;

pub use error::{Error, ErrorKind, Result};
