use std::collections::BTreeMap;
use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{Index, MAX_DIM};
use crate::error::{KamError, Result};

/// Coefficient mass dropped by an operation because it fell outside the
/// configured truncation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TruncationReport {
    pub discarded_mass: f64,
    pub discarded_terms: usize,
}

impl TruncationReport {
    pub fn merge(&mut self, other: TruncationReport) {
        self.discarded_mass += other.discarded_mass;
        self.discarded_terms += other.discarded_terms;
    }

    pub fn overflowed(&self) -> bool {
        self.discarded_terms > 0
    }
}

/// `sum_{k,m} c_{k,m} exp(2 pi i k.theta) I^m`, angles of period 1.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierTaylorSeries {
    n: usize,
    k_max: u32,
    d_max: u32,
    coeffs: BTreeMap<Index, Complex64>,
}

impl FourierTaylorSeries {
    pub fn new(n: usize, k_max: u32, d_max: u32) -> Result<Self> {
        if !(1..=MAX_DIM).contains(&n) {
            return Err(KamError::InvalidParameter(format!(
                "dimension {n} outside 1..={MAX_DIM}"
            )));
        }
        Ok(Self {
            n,
            k_max,
            d_max,
            coeffs: BTreeMap::new(),
        })
    }

    /// `omega . I`.
    pub fn linear(omega: &[f64], k_max: u32, d_max: u32) -> Result<Self> {
        let mut s = Self::new(omega.len(), k_max, d_max.max(1))?;
        for (j, &w) in omega.iter().enumerate() {
            let mut m = [0u32; MAX_DIM];
            m[j] = 1;
            s.add(
                &[0; MAX_DIM][..omega.len()],
                &m[..omega.len()],
                Complex64::new(w, 0.0),
            );
        }
        Ok(s)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k_max(&self) -> u32 {
        self.k_max
    }

    pub fn d_max(&self) -> u32 {
        self.d_max
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Index, &Complex64)> {
        self.coeffs.iter()
    }

    pub fn index(&self, k: &[i64], m: &[u32]) -> Index {
        Index::new(k, m)
    }

    pub fn get(&self, k: &[i64], m: &[u32]) -> Complex64 {
        self.coeffs
            .get(&Index::new(k, m))
            .copied()
            .unwrap_or_default()
    }

    pub fn get_index(&self, idx: &Index) -> Complex64 {
        self.coeffs.get(idx).copied().unwrap_or_default()
    }

    fn fits(&self, idx: &Index) -> bool {
        idx.k_l1() <= self.k_max as u64 && idx.degree() <= self.d_max
    }

    /// Adds `c` at `(k, m)`; returns `false` (and stores nothing) if the
    /// index lies outside the truncation.
    pub fn add(&mut self, k: &[i64], m: &[u32], c: Complex64) -> bool {
        self.add_index(Index::new(k, m), c)
    }

    pub fn add_index(&mut self, idx: Index, c: Complex64) -> bool {
        if !self.fits(&idx) {
            return false;
        }
        if c != Complex64::new(0.0, 0.0) {
            *self.coeffs.entry(idx).or_default() += c;
        }
        true
    }

    fn add_reporting(&mut self, idx: Index, c: Complex64, report: &mut TruncationReport) {
        if !self.add_index(idx, c) {
            report.discarded_mass += c.norm();
            report.discarded_terms += 1;
        }
    }

    /// Adds `amp cos(2 pi k.theta) I^m`.
    pub fn add_cos(&mut self, k: &[i64], m: &[u32], amp: f64) {
        if k.iter().all(|&x| x == 0) {
            self.add(k, m, Complex64::new(amp, 0.0));
            return;
        }
        let neg: Vec<i64> = k.iter().map(|x| -x).collect();
        self.add(k, m, Complex64::new(amp / 2.0, 0.0));
        self.add(&neg, m, Complex64::new(amp / 2.0, 0.0));
    }

    /// Adds `amp sin(2 pi k.theta) I^m`.
    pub fn add_sin(&mut self, k: &[i64], m: &[u32], amp: f64) {
        if k.iter().all(|&x| x == 0) {
            return;
        }
        let neg: Vec<i64> = k.iter().map(|x| -x).collect();
        self.add(k, m, Complex64::new(0.0, -amp / 2.0));
        self.add(&neg, m, Complex64::new(0.0, amp / 2.0));
    }

    /// Same coefficients under new truncation bounds.
    pub fn retruncate(&self, k_max: u32, d_max: u32) -> (Self, TruncationReport) {
        let mut out = Self {
            n: self.n,
            k_max,
            d_max,
            coeffs: BTreeMap::new(),
        };
        let mut report = TruncationReport::default();
        for (&idx, &c) in &self.coeffs {
            out.add_reporting(idx, c, &mut report);
        }
        (out, report)
    }

    /// Keeps the entries for which `keep` holds.
    pub fn filter(&self, mut keep: impl FnMut(&Index) -> bool) -> Self {
        let coeffs = self
            .coeffs
            .iter()
            .filter(|(i, _)| keep(i))
            .map(|(&i, &c)| (i, c))
            .collect();
        Self {
            n: self.n,
            k_max: self.k_max,
            d_max: self.d_max,
            coeffs,
        }
    }

    /// Drops coefficients with modulus at or below `threshold`.
    pub fn prune(&mut self, threshold: f64) {
        self.coeffs.retain(|_, c| c.norm() > threshold);
    }

    pub fn scaled(&self, s: f64) -> Self {
        self.map_coeffs(|_, c| c * s)
    }

    pub fn map_coeffs(&self, mut f: impl FnMut(&Index, Complex64) -> Complex64) -> Self {
        let coeffs = self.coeffs.iter().map(|(i, &c)| (*i, f(i, c))).collect();
        Self {
            n: self.n,
            k_max: self.k_max,
            d_max: self.d_max,
            coeffs,
        }
    }

    /// `self + s * other`; the result keeps the larger truncation bounds.
    pub fn axpy(&self, s: f64, other: &Self) -> Self {
        debug_assert_eq!(self.n, other.n);
        let mut out = self.clone();
        out.k_max = self.k_max.max(other.k_max);
        out.d_max = self.d_max.max(other.d_max);
        for (&idx, &c) in &other.coeffs {
            out.add_index(idx, c * s);
        }
        out.coeffs.retain(|_, c| *c != Complex64::new(0.0, 0.0));
        out
    }

    pub fn add_series(&self, other: &Self) -> Self {
        self.axpy(1.0, other)
    }

    pub fn sub_series(&self, other: &Self) -> Self {
        self.axpy(-1.0, other)
    }

    /// The `k = 0` layer (the average over the torus).
    pub fn average(&self) -> Self {
        self.filter(|i| i.is_k_zero())
    }

    pub fn d_theta(&self, j: usize) -> Self {
        let mut out = self.map_coeffs(|i, c| c * Complex64::new(0.0, 2.0 * PI * i.k[j] as f64));
        out.coeffs.retain(|_, c| *c != Complex64::new(0.0, 0.0));
        out
    }

    pub fn d_action(&self, j: usize) -> Self {
        let mut out = Self {
            n: self.n,
            k_max: self.k_max,
            d_max: self.d_max,
            coeffs: BTreeMap::new(),
        };
        for (idx, &c) in &self.coeffs {
            if idx.m[j] > 0 {
                let mut lowered = *idx;
                lowered.m[j] -= 1;
                out.add_index(lowered, c * idx.m[j] as f64);
            }
        }
        out
    }

    /// Poisson bracket `{F, G} = d_theta F . d_I G - d_I F . d_theta G`,
    /// truncated to the larger of the two operands' bounds.
    pub fn bracket(&self, other: &Self) -> (Self, TruncationReport) {
        self.bracket_with(
            other,
            self.k_max.max(other.k_max),
            self.d_max.max(other.d_max),
        )
    }

    pub fn bracket_with(&self, other: &Self, k_max: u32, d_max: u32) -> (Self, TruncationReport) {
        assert_eq!(
            self.n, other.n,
            "bracket of series with different dimensions"
        );
        let mut out = Self {
            n: self.n,
            k_max,
            d_max,
            coeffs: BTreeMap::new(),
        };
        let mut report = TruncationReport::default();
        let two_pi_i = Complex64::new(0.0, 2.0 * PI);
        for (a, &ca) in &self.coeffs {
            for (b, &cb) in &other.coeffs {
                let prod = ca * cb * two_pi_i;
                for j in 0..self.n {
                    // c_a c_b [ (2 pi i ka_j) mb_j - ma_j (2 pi i kb_j) ]
                    let w = a.k[j] as i64 * b.m[j] as i64 - a.m[j] as i64 * b.k[j] as i64;
                    if w == 0 {
                        continue;
                    }
                    let mut idx = a.combine(b);
                    idx.m[j] -= 1;
                    out.add_reporting(idx, prod * w as f64, &mut report);
                }
            }
        }
        out.coeffs.retain(|_, c| *c != Complex64::new(0.0, 0.0));
        (out, report)
    }

    /// Largest `|c(-k,m) - conj c(k,m)|`; zero for a real-valued function.
    pub fn reality_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for (idx, &c) in &self.coeffs {
            let mirror = self.get_index(&idx.conjugate_index());
            worst = worst.max((mirror - c.conj()).norm());
        }
        worst
    }

    /// Replaces each pair by its real-valued projection `(c + conj c')/2`.
    pub fn symmetrize(&self) -> Self {
        let mut out = Self {
            n: self.n,
            k_max: self.k_max,
            d_max: self.d_max,
            coeffs: BTreeMap::new(),
        };
        for (idx, &c) in &self.coeffs {
            let mirror = self.get_index(&idx.conjugate_index());
            out.add_index(*idx, (c + mirror.conj()) * 0.5);
        }
        out.coeffs.retain(|_, c| *c != Complex64::new(0.0, 0.0));
        out
    }

    /// `sum |c|`.
    pub fn coefficient_mass(&self) -> f64 {
        self.coeffs.values().map(|c| c.norm()).sum()
    }

    pub fn max_mode(&self) -> u64 {
        self.coeffs.keys().map(|i| i.k_l1()).max().unwrap_or(0)
    }

    pub fn max_degree(&self) -> u32 {
        self.coeffs.keys().map(|i| i.degree()).max().unwrap_or(0)
    }

    pub fn min_degree(&self) -> Option<u32> {
        self.coeffs.keys().map(|i| i.degree()).min()
    }

    pub fn to_records(&self) -> Vec<TermRecord> {
        self.coeffs
            .iter()
            .map(|(i, c)| TermRecord {
                k: i.k_vec(self.n),
                m: i.m_vec(self.n),
                re: c.re,
                im: c.im,
            })
            .collect()
    }

    pub fn from_records(n: usize, k_max: u32, d_max: u32, terms: &[TermRecord]) -> Result<Self> {
        let mut s = Self::new(n, k_max, d_max)?;
        for t in terms {
            if t.k.len() != n || t.m.len() != n {
                return Err(KamError::Parse(format!(
                    "term {:?}/{:?} does not have dimension {n}",
                    t.k, t.m
                )));
            }
            if !s.add(&t.k, &t.m, Complex64::new(t.re, t.im)) {
                return Err(KamError::Parse(format!(
                    "term k={:?} m={:?} exceeds truncation (K={k_max}, d={d_max})",
                    t.k, t.m
                )));
            }
        }
        Ok(s)
    }
}

/// One coefficient in a structured-text record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermRecord {
    pub k: Vec<i64>,
    pub m: Vec<u32>,
    pub re: f64,
    #[serde(default)]
    pub im: f64,
}
