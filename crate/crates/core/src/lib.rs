//! Learning homogenized coefficients (G-limits) of multiscale elliptic
//! equations from multiscale solution data with physics-informed networks,
//! together with the finite element and classical homogenization machinery
//! used to synthesize data and reference solutions.

pub mod autodiff;
pub mod bench;
pub mod data;
pub mod error;
pub mod fem;
pub mod homogenize;
pub mod metrics;
pub mod network;
pub mod training;

pub use error::{Error, Result};
