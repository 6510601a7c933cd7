//! Model Hamiltonians shared by the acceptance runs, the CLI and the tests.
//!
//! The base family is `omega.I + A(theta) I.I` with golden `omega`,
//! `A(theta) = A0 + b cos(2 pi theta_1) diag(1, 1/2)` and
//! `A0 = [[1, 1/4], [1/4, 1/2]]`.

use nalgebra::DMatrix;

use crate::error::Result;
use crate::fourier_taylor::{FourierTaylorSeries, HamiltonianSpec, MatrixSeries};
use crate::freq_arith::{make_test_frequency, FrequencyVector, TestFrequencyKind};
use crate::torus_solver::{TargetFrequency, CERT_FACTOR, DEFAULT_GRID};

pub fn a0() -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[1.0, 0.25, 0.25, 0.5])
}

pub fn golden() -> FrequencyVector {
    make_test_frequency(TestFrequencyKind::Golden, 2).expect("golden frequency")
}

fn harmonic_matrix(b: f64, radius: f64) -> Result<HamiltonianSpec> {
    let mut a = MatrixSeries::constant(&a0());
    if b != 0.0 {
        a.add_cos(
            &[1, 0],
            &DMatrix::from_row_slice(2, 2, &[b, 0.0, 0.0, 0.5 * b]),
        );
    }
    HamiltonianSpec::new(golden(), a, FourierTaylorSeries::new(2, 1, 3)?, radius)
}

/// The single-harmonic family in physical coordinates on `|I| <= 1`.
pub fn single_harmonic(b: f64) -> Result<HamiltonianSpec> {
    harmonic_matrix(b, 1.0)
}

/// Action where `2 A0 I0 = (c - 1) omega`, so the torus frequency is `c omega`.
pub fn scaled_golden_action(c: f64) -> Vec<f64> {
    let w = golden().to_f64();
    let rhs = nalgebra::DVector::from_vec(w.iter().map(|x| 0.5 * (c - 1.0) * x).collect());
    a0().lu()
        .solve(&rhs)
        .expect("A0 invertible")
        .iter()
        .copied()
        .collect()
}

/// Perturbation size `mu` of the harmonic term, unscaled frequencies,
/// domain radius 2, and a certified target with frequency `3 omega`.
pub fn direct_case(mu: f64) -> Result<(HamiltonianSpec, TargetFrequency)> {
    let h = harmonic_matrix(mu, 2.0)?;
    let mut t = TargetFrequency::from_spec(&h, &scaled_golden_action(3.0))?;
    t.certify(1.0, 1.0, CERT_FACTOR * DEFAULT_GRID as u64)?;
    Ok((h, t))
}
