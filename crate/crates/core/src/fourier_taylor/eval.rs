use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;

use super::{FourierTaylorSeries, Index, MAX_DIM};

/// Real-valued function on `T^n x R^n` with a gradient.
pub trait PhaseFunction: Sync {
    fn dim(&self) -> usize;
    fn value(&self, theta: &[f64], action: &[f64]) -> f64;
    /// `(d_theta F, d_I F)`.
    fn gradient(&self, theta: &[f64], action: &[f64]) -> (Vec<f64>, Vec<f64>);
}

#[derive(Debug, Clone, Copy)]
struct Term {
    k: [i32; MAX_DIM],
    m: [u16; MAX_DIM],
    c: Complex64,
}

/// Value, gradient and Hessian in the variables `(theta, I)`.
#[derive(Debug, Clone)]
pub struct Jet2 {
    pub value: f64,
    pub grad: Vec<f64>,
    pub hess: DMatrix<f64>,
}

/// A series folded onto the half-space `k >= 0` for fast pointwise work.
///
/// Each pair `(k, -k)` becomes one term with coefficient
/// `c_k + conj(c_{-k})` and the evaluation takes the real part, so the
/// result is the real part of the series even if the input is not exactly
/// real.
#[derive(Debug, Clone)]
pub struct CompiledSeries {
    n: usize,
    terms: Vec<Term>,
    k_abs_max: [usize; MAX_DIM],
    d_max: [usize; MAX_DIM],
}

impl CompiledSeries {
    pub fn new(s: &FourierTaylorSeries) -> Self {
        let mut folded: BTreeMap<Index, Complex64> = BTreeMap::new();
        for (idx, &c) in s.iter() {
            if idx.is_k_zero() {
                *folded.entry(*idx).or_default() += Complex64::new(c.re, 0.0);
            } else if idx.in_half_space() {
                *folded.entry(*idx).or_default() += c;
            } else {
                *folded.entry(idx.conjugate_index()).or_default() += c.conj();
            }
        }
        let mut k_abs_max = [0usize; MAX_DIM];
        let mut d_max = [0usize; MAX_DIM];
        let mut terms = Vec::with_capacity(folded.len());
        for (idx, c) in folded {
            if c == Complex64::new(0.0, 0.0) {
                continue;
            }
            for j in 0..MAX_DIM {
                k_abs_max[j] = k_abs_max[j].max(idx.k[j].unsigned_abs() as usize);
                d_max[j] = d_max[j].max(idx.m[j] as usize);
            }
            terms.push(Term {
                k: idx.k,
                m: idx.m,
                c,
            });
        }
        Self {
            n: s.n(),
            terms,
            k_abs_max,
            d_max,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn term_count(&self) -> usize {
        self.terms.len()
    }

    fn tables(&self, theta: &[f64], action: &[f64]) -> Tables {
        let mut exps: [Vec<Complex64>; MAX_DIM] = Default::default();
        let mut pows: [Vec<f64>; MAX_DIM] = Default::default();
        for j in 0..self.n {
            let kk = self.k_abs_max[j] as i64;
            exps[j] = (-kk..=kk)
                .map(|l| {
                    // Reduce l * theta before the trig call to keep the phase accurate.
                    let ph = 2.0 * PI * super::wrap_angle(l as f64 * theta[j]);
                    Complex64::new(ph.cos(), ph.sin())
                })
                .collect();
            let mut p = Vec::with_capacity(self.d_max[j] + 1);
            let mut acc = 1.0;
            for _ in 0..=self.d_max[j] {
                p.push(acc);
                acc *= action[j];
            }
            pows[j] = p;
        }
        Tables {
            exps,
            pows,
            offset: self.k_abs_max,
        }
    }

    pub fn value(&self, theta: &[f64], action: &[f64]) -> f64 {
        let t = self.tables(theta, action);
        let mut acc = 0.0;
        for term in &self.terms {
            let (b, p) = t.phase_and_monomial(term, self.n);
            acc += b.re * p;
        }
        acc
    }

    pub fn gradient(&self, theta: &[f64], action: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = self.n;
        let t = self.tables(theta, action);
        let mut gt = vec![0.0; n];
        let mut gi = vec![0.0; n];
        for term in &self.terms {
            let b = t.phase(term, n);
            let mono = t.monomial_partials(term, n);
            for j in 0..n {
                if term.k[j] != 0 {
                    gt[j] -= 2.0 * PI * term.k[j] as f64 * b.im * mono.p;
                }
                gi[j] += b.re * mono.dp[j];
            }
        }
        (gt, gi)
    }

    /// Value, gradient and Hessian with respect to `(theta_1..n, I_1..n)`.
    pub fn jet2(&self, theta: &[f64], action: &[f64]) -> Jet2 {
        let n = self.n;
        let t = self.tables(theta, action);
        let mut value = 0.0;
        let mut grad = vec![0.0; 2 * n];
        let mut hess = DMatrix::zeros(2 * n, 2 * n);
        let tp = 2.0 * PI;
        for term in &self.terms {
            let b = t.phase(term, n);
            let mono = t.monomial_partials(term, n);
            value += b.re * mono.p;
            for i in 0..n {
                let ki = term.k[i] as f64;
                grad[i] -= tp * ki * b.im * mono.p;
                grad[n + i] += b.re * mono.dp[i];
                for j in 0..n {
                    let kj = term.k[j] as f64;
                    if ki != 0.0 && kj != 0.0 {
                        hess[(i, j)] -= tp * tp * ki * kj * b.re * mono.p;
                    }
                    if ki != 0.0 {
                        let v = -tp * ki * b.im * mono.dp[j];
                        hess[(i, n + j)] += v;
                        hess[(n + j, i)] += v;
                    }
                    hess[(n + i, n + j)] += b.re * mono.d2p[i][j];
                }
            }
        }
        Jet2 { value, grad, hess }
    }
}

impl PhaseFunction for CompiledSeries {
    fn dim(&self) -> usize {
        self.n
    }

    fn value(&self, theta: &[f64], action: &[f64]) -> f64 {
        CompiledSeries::value(self, theta, action)
    }

    fn gradient(&self, theta: &[f64], action: &[f64]) -> (Vec<f64>, Vec<f64>) {
        CompiledSeries::gradient(self, theta, action)
    }
}

struct Tables {
    exps: [Vec<Complex64>; MAX_DIM],
    pows: [Vec<f64>; MAX_DIM],
    offset: [usize; MAX_DIM],
}

struct Monomial {
    p: f64,
    dp: [f64; MAX_DIM],
    d2p: [[f64; MAX_DIM]; MAX_DIM],
}

impl Tables {
    fn phase(&self, term: &Term, n: usize) -> Complex64 {
        let mut e = term.c;
        for j in 0..n {
            if term.k[j] != 0 {
                e *= self.exps[j][(term.k[j] as i64 + self.offset[j] as i64) as usize];
            }
        }
        e
    }

    fn phase_and_monomial(&self, term: &Term, n: usize) -> (Complex64, f64) {
        let mut p = 1.0;
        for j in 0..n {
            p *= self.pows[j][term.m[j] as usize];
        }
        (self.phase(term, n), p)
    }

    fn pow(&self, j: usize, e: i32) -> f64 {
        if e < 0 {
            0.0
        } else {
            self.pows[j][e as usize]
        }
    }

    fn monomial_partials(&self, term: &Term, n: usize) -> Monomial {
        let m = |j: usize| term.m[j] as i32;
        let mut out = Monomial {
            p: 1.0,
            dp: [0.0; MAX_DIM],
            d2p: [[0.0; MAX_DIM]; MAX_DIM],
        };
        for j in 0..n {
            out.p *= self.pow(j, m(j));
        }
        for i in 0..n {
            if m(i) == 0 {
                continue;
            }
            let mut d = m(i) as f64;
            for j in 0..n {
                d *= self.pow(j, if j == i { m(j) - 1 } else { m(j) });
            }
            out.dp[i] = d;
            for l in i..n {
                let mut e = [0i32; MAX_DIM];
                for j in 0..n {
                    e[j] = m(j);
                }
                let coef = if l == i {
                    (m(i) * (m(i) - 1)) as f64
                } else {
                    (m(i) * m(l)) as f64
                };
                if coef == 0.0 {
                    continue;
                }
                e[i] -= 1;
                e[l] -= 1;
                let mut v = coef;
                for j in 0..n {
                    v *= self.pow(j, e[j]);
                }
                out.d2p[i][l] = v;
                out.d2p[l][i] = v;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> FourierTaylorSeries {
        let mut f = FourierTaylorSeries::new(2, 4, 4).unwrap();
        f.add_cos(&[1, -1], &[2, 0], 0.3);
        f.add_sin(&[0, 2], &[1, 1], -0.7);
        f.add_cos(&[3, 1], &[0, 3], 0.11);
        f.add(&[0, 0], &[0, 2], Complex64::new(1.5, 0.0));
        f
    }

    #[test]
    fn jet_matches_central_differences() {
        let c = CompiledSeries::new(&sample());
        let th = [0.21, 0.64];
        let ia = [0.35, -0.42];
        let jet = c.jet2(&th, &ia);
        assert!((jet.value - c.value(&th, &ia)).abs() < 1e-14);
        let h = 1e-5;
        let shift = |v: usize, d: f64| {
            let mut t = th;
            let mut a = ia;
            if v < 2 {
                t[v] += d
            } else {
                a[v - 2] += d
            }
            (t, a)
        };
        for v in 0..4 {
            let (tp, ap) = shift(v, h);
            let (tm, am) = shift(v, -h);
            let fd = (c.value(&tp, &ap) - c.value(&tm, &am)) / (2.0 * h);
            assert!(
                (fd - jet.grad[v]).abs() < 1e-7 * (1.0 + fd.abs()),
                "grad {v}: {fd} vs {}",
                jet.grad[v]
            );
            let gp = c.jet2(&tp, &ap).grad;
            let gm = c.jet2(&tm, &am).grad;
            for w in 0..4 {
                let fd2 = (gp[w] - gm[w]) / (2.0 * h);
                assert!(
                    (fd2 - jet.hess[(w, v)]).abs() < 1e-6 * (1.0 + fd2.abs()),
                    "hess {w},{v}"
                );
            }
        }
    }

    #[test]
    fn folding_keeps_real_part() {
        let f = sample();
        let c = CompiledSeries::new(&f);
        // Direct full sum.
        let th = [0.4, 0.05];
        let ia = [0.7f64, 0.2];
        let mut direct = Complex64::new(0.0, 0.0);
        for (idx, &co) in f.iter() {
            let ph = 2.0 * PI * (idx.k[0] as f64 * th[0] + idx.k[1] as f64 * th[1]);
            direct += co
                * Complex64::new(ph.cos(), ph.sin())
                * ia[0].powi(idx.m[0] as i32)
                * ia[1].powi(idx.m[1] as i32);
        }
        assert!(direct.im.abs() < 1e-14);
        assert!((direct.re - c.value(&th, &ia)).abs() < 1e-14);
    }
}
