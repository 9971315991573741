//! Experiment plumbing: synthetic datasets, the injectivity checker,
//! calibration and training stages, and per-image recovery benchmarks.

pub mod bench;
pub mod dataset;
pub mod error;
pub mod images;
pub mod injectivity;
pub mod metrics;
pub mod pipeline;
pub mod report;

pub use error::{HarnessError, Result};
