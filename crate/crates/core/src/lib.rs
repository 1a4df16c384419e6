//! Conditional diffusion over truncated DCT spectra for ECG denoising.

pub mod autograd;
pub mod diffusion;
pub mod error;
pub mod metrics;
pub mod predictor;
pub mod schedule;
pub mod spectral;
pub mod synth;

pub use error::{Error, Result};
