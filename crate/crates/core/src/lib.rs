//! A numerical laboratory for KAM stability of Kolmogorov non-degenerate
//! invariant tori with arbitrary non-resonant frequency.
//!
//! The pipeline runs bottom-up:
//!
//! * [`freq_arith`]: small divisors `Psi`, `Delta`, the small parameters
//!   `mu(eps)`, `nu(eps)`, Diophantine certification, test frequencies.
//! * [`fourier_taylor`]: Hamiltonians as truncated Fourier-Taylor series,
//!   Poisson brackets, averaging, the two scalings, norms and a symplectic
//!   integrator.
//! * [`normal_form`]: one Lie-series normal-form step with truncation order
//!   `Delta(c/eps)`.
//! * [`torus_solver`]: spectral Newton continuation of Lagrangian tori.
//! * [`measure_scan`]: sampled estimates of the complement of the
//!   Kolmogorov set and their scaling in `mu`.
//! * [`families`]: the model Hamiltonians used by the CLI configs and tests.
//! * [`cli`]: the batch driver behind the `kamlab` binary.

pub mod cli;
pub mod error;
pub mod families;
pub mod fourier_taylor;
pub mod freq_arith;
pub mod measure_scan;
pub mod normal_form;
pub mod torus_solver;

pub use error::{KamError, Result};
