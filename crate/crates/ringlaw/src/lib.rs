//! Random-matrix spectral analytics for streaming measurements.
//!
//! The pipeline turns an N×T window of raw per-bus samples into the spectrum
//! of a normalized product of singular-value equivalents, whose eigenvalues
//! concentrate on an annulus when the window is uncorrelated noise and
//! collapse toward the origin when rows become correlated. The mean spectral
//! radius (MSR) of that spectrum is the detection statistic; a sliding-window
//! engine tracks it over time, a linear grid simulator provides scripted
//! event scenarios, and an IDW interpolator renders per-bus values as 2D
//! frames for animation.

extern crate blas_src;

pub mod error;
pub mod powermap;
pub mod rmt;
pub mod sim;
pub mod window;

pub mod cli;

pub use error::RingLawError;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, RingLawError>;
