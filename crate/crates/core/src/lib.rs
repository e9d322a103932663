//! Edge/cloud collaborative inference with a two-head small network.
//!
//! A small "approximator" network shares its feature extractor with a scalar
//! "predictor" head `q(x) ∈ (0, 1)`. Both are trained jointly against a big
//! network (or a ground-truth oracle) so that `q` estimates whether the small
//! network can be trusted on `x`. At inference time inputs with `q(x) ≥ δ`
//! stay on the edge; the rest are appealed to the cloud.
//!
//! Modules:
//! - [`autodiff`]: tape-based reverse-mode differentiation
//! - [`models`]: architectures, the two-head network, FLOPs accounting, checkpoints
//! - [`losses`]: joint objectives, baseline confidence scores, diagnostics
//! - [`trainer`]: pretraining, joint training, dynamic multiplier schedule
//! - [`sim`]: routing, metrics, sweeps, histograms, AUROC
//! - [`data`]: synthetic generators and CSV ingestion
//! - [`cli`]: the command-line pipeline

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::type_complexity)]

pub mod autodiff;
pub mod cli;
pub mod data;
mod error;
pub mod losses;
pub mod models;
pub mod sim;
pub mod trainer;

pub use error::{Error, Result};
