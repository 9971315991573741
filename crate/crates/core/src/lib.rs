//! Simulation and recovery of signals imaged through multiple scattering media.
//!
//! The forward model is `b = |A^* x|^2`, where `A` is an `n x m` complex
//! transmission matrix whose columns are the per-sensor-pixel sensitivity
//! vectors. This crate provides:
//!
//! - [`medium`]: synthetic Gaussian media, SLM encoding, intensity measurement and noise.
//! - [`retrieval`]: Gerchberg-Saxton and Wirtinger Flow solvers plus phase-invariant metrics.
//! - [`calibration`]: column-wise transmission-matrix estimation and recovery through the estimate.
//! - [`io`]: the `SPKLTM01` and `SPKLSET1` binary formats.

pub mod calibration;
pub mod error;
pub mod image;
pub mod io;
pub mod linalg;
pub mod medium;
pub mod retrieval;
pub mod rng;

pub use error::{CoreError, Result};
pub use image::ImageGrid;
pub use medium::{IntensityVector, NoiseModel, SignalMode, SignalVector, SlmMode, TransmissionMatrix};
pub use num_complex::Complex64;
