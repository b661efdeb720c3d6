//! Numerical realization of spectral smoothing estimates.
//!
//! The crate computes spectral densities `A(λ) = d/dλ E(λ)P_ac(H)` for a few
//! concrete self-adjoint models, evaluates the time and spectral sides of the
//! smoothing identities, certifies best constants from both sides, transfers
//! estimates through comparison principles and handles short-range
//! perturbations through Lippmann–Schwinger inversion.

pub mod best_constant;
pub mod comparison;
pub mod density;
pub mod error;
pub mod evolution;
pub mod expr;
pub mod models;
pub mod perturbation;
pub mod quad;
pub mod spaces;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;
