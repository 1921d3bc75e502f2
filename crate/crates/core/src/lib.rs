//! Remove-and-retrain feature selection for multivariate time series.
//!
//! The crate trains a baseline model, scores input feature groups (bands or
//! time steps) with an attribution estimator, physically deletes the most
//! or least important groups, retrains from scratch on the shrunken data and
//! repeats. The resulting deletion curves expose which features are
//! necessary for, and which are sufficient to reach, the baseline
//! performance.
//!
//! Modules, bottom-up:
//!
//! - [`data`]: dataset container, schema with stable feature ids, year
//!   splits, band/time-step deletion and the `MMTS` directory format
//! - [`engine`]: tensors and reverse-mode differentiation with a guided
//!   backward rule at ReLU nodes
//! - [`models`]: MLP, RNN, LSTM, GRU and TempCNN builders
//! - [`training`]: Adam, early stopping, metrics and grid selection
//! - [`attribution`]: Shapley value sampling, guided backpropagation and
//!   their SmoothGrad² / VarGrad ensembles
//! - [`roar`]: the deletion loop and sufficient/necessary set extraction
//! - [`synthetic`]: planted-signal generators with known relevant features
//! - [`cli`]: run configs, command implementations and SVG plots

pub mod attribution;
pub mod cli;
pub mod data;
pub mod engine;
pub mod models;
pub mod roar;
pub mod synthetic;
pub mod training;
mod error;

pub use error::{Error, Result};
