//! Kernel estimators of causal dose-response curves under sample selection,
//! with debiased inference.

pub mod data;
pub mod distributions;
pub mod dml;
pub mod dynamic_est;
pub mod embeddings;
pub mod error;
pub mod kernels;
pub mod linalg;
pub mod penalty;
pub mod ridge;
pub mod riesz;
pub mod simulation;
pub mod static_est;

pub use data::{Dataset, ShiftedSample};
pub use error::{Error, Result};
