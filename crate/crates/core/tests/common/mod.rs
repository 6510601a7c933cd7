//! Shared oracles for the integration tests.
#![allow(dead_code)]

use kam_core::freq_arith::{canonical_k, psi_table, FrequencyKind, FrequencyVector};
use proptest::prelude::Rng;
use proptest::test_runner::{RngAlgorithm, TestRng};
use twofloat::TwoFloat;

/// `Psi(Q)` for `Q = 1..=q_max` by visiting every nonzero `k` with
/// `|k|_1 <= q_max` (both signs), each divisor summed in double-double.
/// Returns `(min divisor, canonical argmin)` per `Q`.
pub fn brute_force_psi(w: &FrequencyVector, q_max: u64) -> Vec<(f64, Vec<i64>)> {
    let n = w.n();
    let c = w.components();
    let q = q_max as i64;
    let mut shell: Vec<(f64, Vec<i64>)> = vec![(f64::INFINITY, vec![]); q_max as usize + 1];
    let mut k = vec![-q; n];
    loop {
        let l1: i64 = k.iter().map(|x| x.abs()).sum();
        if l1 > 0 && l1 <= q {
            let mut acc = TwoFloat::from(0.0);
            for j in 0..n {
                acc += c[j] * TwoFloat::from(k[j] as f64);
            }
            let d = acc.hi().abs();
            let s = &mut shell[l1 as usize];
            let ck = canonical_k(&k);
            if d < s.0 || (d == s.0 && ck < s.1) {
                *s = (d, ck);
            }
        }
        let mut j = 0;
        loop {
            if j == n {
                return prefix_min(shell);
            }
            k[j] += 1;
            if k[j] <= q {
                break;
            }
            k[j] = -q;
            j += 1;
        }
    }
}

fn prefix_min(shell: Vec<(f64, Vec<i64>)>) -> Vec<(f64, Vec<i64>)> {
    let mut out = Vec::with_capacity(shell.len() - 1);
    let mut best = (f64::INFINITY, vec![]);
    for s in shell.into_iter().skip(1) {
        if s.0 < best.0 {
            best = s;
        }
        out.push(best.clone());
    }
    out
}

pub fn assert_psi_matches_oracle(w: &FrequencyVector, q_max: u64) {
    let table = psi_table(w, q_max).unwrap();
    let oracle = brute_force_psi(w, q_max);
    assert_eq!(table.len(), oracle.len());
    for (r, (d, k)) in table.iter().zip(&oracle) {
        assert_eq!(r.min_divisor, *d, "Q = {}: divisor", r.q);
        assert_eq!(r.psi, 1.0 / d, "Q = {}: psi", r.q);
        // Ties between distinct vectors are not expected for these inputs.
        assert_eq!(&r.argmin_k, k, "Q = {}: argmin", r.q);
    }
}

/// A seeded random frequency `(1, r_2, .., r_n)` with `r_j` in `(0.1, 0.9)`.
pub fn random_frequency(n: usize, seed: u8) -> FrequencyVector {
    let mut rng = TestRng::from_seed(RngAlgorithm::ChaCha, &[seed; 32]);
    let mut v = vec![1.0];
    for _ in 1..n {
        let u = (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
        v.push(0.1 + 0.8 * u);
    }
    FrequencyVector::from_f64(&v, FrequencyKind::Explicit).unwrap()
}

pub fn sup(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().fold(0.0, |a, x| a.max(x.abs()))
}

/// Classical RK4 for the flow of `G`: `theta' = d_I G`, `I' = -d_theta G`.
pub fn rk4_flow(
    g: &kam_core::fourier_taylor::CompiledSeries,
    theta: &[f64],
    action: &[f64],
    t: f64,
    steps: usize,
) -> (Vec<f64>, Vec<f64>) {
    let n = theta.len();
    let field = |x: &[f64]| -> Vec<f64> {
        let (gt, gi) = g.gradient(&x[..n], &x[n..]);
        gi.into_iter().chain(gt.into_iter().map(|v| -v)).collect()
    };
    let mut x: Vec<f64> = theta.iter().chain(action).copied().collect();
    let h = t / steps as f64;
    for _ in 0..steps {
        let k1 = field(&x);
        let x2: Vec<f64> = x.iter().zip(&k1).map(|(a, b)| a + 0.5 * h * b).collect();
        let k2 = field(&x2);
        let x3: Vec<f64> = x.iter().zip(&k2).map(|(a, b)| a + 0.5 * h * b).collect();
        let k3 = field(&x3);
        let x4: Vec<f64> = x.iter().zip(&k3).map(|(a, b)| a + h * b).collect();
        let k4 = field(&x4);
        for i in 0..2 * n {
            x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    (x[..n].to_vec(), x[n..].to_vec())
}
