//! Multi-band neural dynamic fusion: trajectory estimation from asynchronous
//! Wi-Fi CSI and mmWave beam-SNR streams via latent ODEs.

// `!(x > 0.0)` style checks are meant to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod baselines;
pub mod checkpoint;
pub mod config;
pub mod csi;
pub mod data;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod model;
pub mod nn;
pub mod ode;
pub mod optim;
pub mod params;
pub mod plot;
pub mod tensor;
pub mod testbed;
pub mod train;

pub use error::{Error, Result};
