//! Bloch spectra of self-adjoint differential operators of order `2ν` with
//! 1-periodic `m×m` matrix coefficients.

pub mod asymptotics;
pub mod bands;
pub mod bloch;
pub mod error;
pub mod floquet;
pub mod galerkin;
pub mod linalg;
pub mod operator;
pub mod report;

pub use error::{Error, Result};
