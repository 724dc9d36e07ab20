//! Numerical library for mean-square optimal and minimax-robust linear
//! prediction of integral functionals of continuous-time processes whose
//! d-th increments are periodically correlated and whose observations are
//! contaminated by periodically stationary noise.
//!
//! The computation reduces the continuous-time problem to truncated vector
//! stationary increment sequences: period-length segments are expanded on a
//! Fourier basis ("lifting"), the resulting K-dimensional sequences carry
//! matrix spectral densities on a frequency grid, and the optimal predictor
//! is obtained by solving block-Toeplitz operator equations. A canonical
//! spectral factorization route provides an independent second computation
//! path, and a robust layer searches for least favorable densities over
//! structured uncertainty classes.

pub mod error;
pub mod increments;
pub mod harmonic;
pub mod spectral;
pub mod operators;
pub mod predictor;
pub mod factorization;
pub mod oracle;
pub mod minimax;
pub mod fixtures;

pub use error::{Error, Result};

/// Complex scalar used throughout.
pub type C64 = num_complex::Complex<f64>;
