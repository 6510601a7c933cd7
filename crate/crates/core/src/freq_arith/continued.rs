//! `Psi` read off the convergents of `omega = (1, alpha)`, with
//! `alpha = [0; a_1, .., a_J, 1, 1, ..]` known exactly.
//!
//! The convergent `p_j / q_j` has divisor
//! `|q_j alpha - p_j| = 1 / (q_j x_{j+1} + q_{j-1})` where
//! `x_j = [a_j; a_{j+1}, ..]` is the complete quotient. No cancellation is
//! involved, so divisors far below double-double resolution come out with
//! full relative accuracy.

use super::{canonical_k, DivisorRecord};
use crate::error::{KamError, Result};

/// Convergents are only formed while `p + q` is an exact integer in `f64`.
pub const MAX_EXACT: f64 = 9_007_199_254_740_992.0;

const GOLDEN: f64 = 1.618_033_988_749_895;

/// `x_1, .., x_J` for the quotients `a_1, .., a_J`; beyond them `x = GOLDEN`.
fn complete_quotients(a: &[f64]) -> Vec<f64> {
    let mut x = vec![0.0; a.len()];
    let mut next = GOLDEN;
    for j in (0..a.len()).rev() {
        x[j] = a[j] + 1.0 / next;
        next = x[j];
    }
    x
}

pub fn validate(a: &[f64]) -> Result<()> {
    if a.is_empty()
        || a.iter()
            .any(|&v| !(v >= 1.0) || !v.is_finite() || v.fract() != 0.0)
    {
        return Err(KamError::InvalidParameter(format!(
            "partial quotients must be integers >= 1, got {a:?}"
        )));
    }
    Ok(())
}

/// `Psi(Q)`: the best approximation of the second kind with `p + q <= Q`
/// is the last convergent that fits.
pub fn psi(a: &[f64], q: u64) -> Result<DivisorRecord> {
    if q == 0 {
        return Err(KamError::InvalidParameter("Q must be >= 1".into()));
    }
    let x = complete_quotients(a);
    let quotient = |j: usize| if j <= a.len() { a[j - 1] } else { 1.0 };
    let complete = |j: usize| if j <= a.len() { x[j - 1] } else { GOLDEN };
    // j = 0: p_0 / q_0 = 0 / 1, divisor alpha = 1 / x_1.
    let (mut p_prev, mut q_prev) = (1.0f64, 0.0f64);
    let (mut p, mut qq) = (0.0f64, 1.0f64);
    let mut best = (1.0 / complete(1), 0.0, 1.0);
    let mut j = 1;
    loop {
        let aj = quotient(j);
        let (pn, qn) = (aj * p + p_prev, aj * qq + q_prev);
        if !(pn + qn <= q as f64) || pn + qn > MAX_EXACT {
            break;
        }
        (p_prev, q_prev, p, qq) = (p, qq, pn, qn);
        best = (1.0 / (qq * complete(j + 1) + q_prev), p, qq);
        j += 1;
    }
    let (d, p, qq) = best;
    Ok(DivisorRecord {
        q,
        min_divisor: d,
        psi: 1.0 / d,
        argmin_k: canonical_k(&[-(p as i64), qq as i64]),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::freq_arith::extended::dd_recip;
    use crate::freq_arith::{psi_table, FrequencyKind, FrequencyVector};
    use twofloat::TwoFloat;

    fn pair(a: &[f64]) -> (FrequencyVector, FrequencyVector) {
        let mut x = TwoFloat::from(*a.last().unwrap())
            + (TwoFloat::from(5.0).sqrt() - TwoFloat::from(1.0)) * 0.5;
        for &v in a.iter().rev().skip(1) {
            x = TwoFloat::from(v) + dd_recip(x);
        }
        let plain = FrequencyVector::from_components(
            &[TwoFloat::from(1.0), dd_recip(x)],
            FrequencyKind::Explicit,
        )
        .unwrap();
        let exact = plain.clone().with_continued_fraction(a.to_vec()).unwrap();
        (plain, exact)
    }

    #[test]
    fn convergents_agree_with_the_lattice_walk() {
        for a in [
            vec![1.0],
            vec![2.0, 5.0, 1.0, 30.0],
            vec![1.0, 1.0, 7.0, 2.0, 3.0],
        ] {
            let (plain, exact) = pair(&a);
            let (t1, t2) = (
                psi_table(&plain, 300).unwrap(),
                psi_table(&exact, 300).unwrap(),
            );
            for (r1, r2) in t1.iter().zip(&t2) {
                assert_eq!(r1.argmin_k, r2.argmin_k, "{a:?} Q = {}", r1.q);
                assert!(
                    (r1.min_divisor / r2.min_divisor - 1.0).abs() < 1e-12,
                    "{a:?} Q = {}: {} vs {}",
                    r1.q,
                    r1.min_divisor,
                    r2.min_divisor
                );
            }
        }
    }

    #[test]
    fn divisors_below_double_double_resolution() {
        let (_, w) = pair(&[2.0, 1e40]);
        // p/q = 1/2 is followed by a quotient of 1e40.
        let r = psi(&[2.0, 1e40], 3).unwrap();
        assert_eq!(r.argmin_k, canonical_k(&[-1, 2]));
        assert!((r.psi / 2e40 - 1.0).abs() < 1e-12);
        assert_eq!(crate::freq_arith::psi(&w, 3).unwrap(), r);
    }

    #[test]
    fn bad_quotients_are_rejected() {
        assert!(validate(&[]).is_err());
        assert!(validate(&[0.0]).is_err());
        assert!(validate(&[1.5]).is_err());
    }
}
