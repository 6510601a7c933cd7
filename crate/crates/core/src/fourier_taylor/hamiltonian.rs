use std::collections::BTreeMap;
use std::fmt;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{CompiledSeries, FourierTaylorSeries, Index, PhaseState, TermRecord, MAX_DIM};
use crate::error::{KamError, Result};
use crate::freq_arith::record::FrequencyRecord;
use crate::freq_arith::FrequencyVector;

/// Condition number above which `A_0` counts as singular.
pub const KOLMOGOROV_COND_MAX: f64 = 1e12;

/// Which of the three forms of the Hamiltonian a spec is in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum ScalingState {
    /// `omega.I + A(theta) I.I + R(theta, I)`.
    Physical,
    /// After `I -> eps I, H -> H / eps`: `omega.I + eps A I.I + eps^2 R`.
    ScaledHam2 { epsilon: f64 },
    /// After a further `H -> H / eps` with time `t -> eps t`.
    ScaledHam3 { epsilon: f64 },
}

impl fmt::Display for ScalingState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScalingState::Physical => write!(f, "physical"),
            ScalingState::ScaledHam2 { epsilon } => write!(f, "scaled_ham2(eps={epsilon:e})"),
            ScalingState::ScaledHam3 { epsilon } => write!(f, "scaled_ham3(eps={epsilon:e})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RescaleDirection {
    Scale1,
    Scale1Inverse,
    Scale2,
    Scale2Inverse,
}

/// Fourier coefficients of a matrix-valued `A(theta)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixSeries {
    n: usize,
    terms: BTreeMap<[i32; MAX_DIM], DMatrix<Complex64>>,
}

impl MatrixSeries {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            terms: BTreeMap::new(),
        }
    }

    /// The constant matrix `a0`.
    pub fn constant(a0: &DMatrix<f64>) -> Self {
        let mut s = Self::new(a0.nrows());
        s.add(&vec![0; a0.nrows()], a0.map(|x| Complex64::new(x, 0.0)));
        s
    }

    pub fn n(&self) -> usize {
        self.n
    }

    fn key(k: &[i64]) -> [i32; MAX_DIM] {
        Index::new(k, &[]).k
    }

    pub fn add(&mut self, k: &[i64], c: DMatrix<Complex64>) {
        assert_eq!(c.shape(), (self.n, self.n));
        let entry = self
            .terms
            .entry(Self::key(k))
            .or_insert_with(|| DMatrix::zeros(self.n, self.n));
        *entry += c;
    }

    /// Adds `b cos(2 pi k.theta)`.
    pub fn add_cos(&mut self, k: &[i64], b: &DMatrix<f64>) {
        if k.iter().all(|&x| x == 0) {
            self.add(k, b.map(|x| Complex64::new(x, 0.0)));
            return;
        }
        let neg: Vec<i64> = k.iter().map(|x| -x).collect();
        self.add(k, b.map(|x| Complex64::new(x / 2.0, 0.0)));
        self.add(&neg, b.map(|x| Complex64::new(x / 2.0, 0.0)));
    }

    pub fn iter(&self) -> impl Iterator<Item = (Vec<i64>, &DMatrix<Complex64>)> {
        self.terms
            .iter()
            .map(|(k, m)| (k[..self.n].iter().map(|&x| x as i64).collect(), m))
    }

    /// Real part of the `k = 0` coefficient.
    pub fn mean(&self) -> DMatrix<f64> {
        self.terms
            .get(&[0; MAX_DIM])
            .map(|m| m.map(|c| c.re))
            .unwrap_or_else(|| DMatrix::zeros(self.n, self.n))
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            n: self.n,
            terms: self
                .terms
                .iter()
                .map(|(k, m)| (*k, m * Complex64::new(s, 0.0)))
                .collect(),
        }
    }

    pub fn max_mode(&self) -> u64 {
        self.terms
            .keys()
            .map(|k| k.iter().map(|x| x.unsigned_abs() as u64).sum())
            .max()
            .unwrap_or(0)
    }

    /// `A(theta) I.I` as a scalar series.
    pub fn quadratic_series(&self, k_max: u32, d_max: u32) -> FourierTaylorSeries {
        let mut out =
            FourierTaylorSeries::new(self.n, k_max, d_max.max(2)).expect("valid dimension");
        for (k, a) in self.iter() {
            for i in 0..self.n {
                for j in 0..self.n {
                    let mut m = vec![0u32; self.n];
                    m[i] += 1;
                    m[j] += 1;
                    out.add(&k, &m, a[(i, j)]);
                }
            }
        }
        out
    }

    pub fn symmetry_defect(&self) -> f64 {
        self.terms
            .values()
            .map(|m| {
                (m - m.transpose())
                    .iter()
                    .fold(0.0, |a: f64, c| a.max(c.norm()))
            })
            .fold(0.0, f64::max)
    }

    pub fn reality_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for (k, m) in &self.terms {
            let neg = k.map(|x| -x);
            let mirror = self
                .terms
                .get(&neg)
                .cloned()
                .unwrap_or_else(|| DMatrix::zeros(self.n, self.n));
            worst = worst.max(
                (mirror - m.map(|c| c.conj()))
                    .iter()
                    .fold(0.0, |a: f64, c| a.max(c.norm())),
            );
        }
        worst
    }
}

/// A Hamiltonian `s omega.I + A(theta) I.I + R(theta, I)` in one of the
/// three scaling states; `s` is `frequency_scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct HamiltonianSpec {
    pub omega: FrequencyVector,
    pub frequency_scale: f64,
    pub a: MatrixSeries,
    pub r: FourierTaylorSeries,
    pub domain_radius: f64,
    pub state: ScalingState,
    /// Whether `A_0` is asserted non-singular.
    pub kolmogorov: bool,
}

impl HamiltonianSpec {
    pub fn new(
        omega: FrequencyVector,
        a: MatrixSeries,
        r: FourierTaylorSeries,
        domain_radius: f64,
    ) -> Result<Self> {
        let spec = Self {
            omega,
            frequency_scale: 1.0,
            a,
            r,
            domain_radius,
            state: ScalingState::Physical,
            kolmogorov: true,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn n(&self) -> usize {
        self.omega.n()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        if self.a.n() != n || self.r.n() != n {
            return Err(KamError::InvalidParameter(format!(
                "dimension mismatch: omega has {n}, A has {}, R has {}",
                self.a.n(),
                self.r.n()
            )));
        }
        if !(self.domain_radius > 0.0) {
            return Err(KamError::InvalidParameter(
                "domain_radius must be positive".into(),
            ));
        }
        let tol = 1e-12
            * (1.0
                + self
                    .a
                    .terms
                    .values()
                    .flat_map(|m| m.iter())
                    .fold(0.0, |a: f64, c| a.max(c.norm())));
        if self.a.symmetry_defect() > tol {
            return Err(KamError::InvalidParameter(
                "A coefficient matrices must be symmetric".into(),
            ));
        }
        if self.a.reality_defect() > tol {
            return Err(KamError::InvalidParameter(
                "A(theta) is not real: A(-k) != conj A(k)".into(),
            ));
        }
        if self.r.reality_defect() > 1e-12 * (1.0 + self.r.coefficient_mass()) {
            return Err(KamError::InvalidParameter(
                "R is not real: R(-k,m) != conj R(k,m)".into(),
            ));
        }
        // The cubic lower bound on R belongs to the first two forms; the
        // normal-formed remainder in the third carries any degree.
        if !matches!(self.state, ScalingState::ScaledHam3 { .. }) {
            if let Some(d) = self.r.min_degree() {
                if d < 3 {
                    return Err(KamError::InvalidParameter(format!(
                        "R must be of order >= 3 in I, found a degree-{d} monomial"
                    )));
                }
            }
        }
        if self.kolmogorov {
            kolmogorov_condition(&self.a.mean())?;
        }
        Ok(())
    }

    /// Time in this form per unit of time in the unscaled flow.
    pub fn time_factor(&self) -> f64 {
        match self.state {
            ScalingState::ScaledHam3 { epsilon } => epsilon,
            _ => 1.0,
        }
    }

    pub fn k_max(&self) -> u32 {
        (self.a.max_mode() as u32).max(self.r.k_max())
    }

    pub fn d_max(&self) -> u32 {
        self.r.d_max().max(2)
    }

    /// The whole Hamiltonian as a single series.
    pub fn to_series(&self) -> FourierTaylorSeries {
        let (k_max, d_max) = (self.k_max(), self.d_max());
        let freq: Vec<f64> = self
            .omega
            .to_f64()
            .iter()
            .map(|w| w * self.frequency_scale)
            .collect();
        let lin = FourierTaylorSeries::linear(&freq, k_max, d_max).expect("valid dimension");
        lin.add_series(&self.a.quadratic_series(k_max, d_max))
            .add_series(&self.r)
    }

    /// `A(theta) I.I + R(theta, I)`.
    pub fn nonlinear_series(&self) -> FourierTaylorSeries {
        let (k_max, d_max) = (self.k_max(), self.d_max());
        self.a.quadratic_series(k_max, d_max).add_series(&self.r)
    }

    pub fn compile(&self) -> CompiledSeries {
        CompiledSeries::new(&self.to_series())
    }

    fn check_domain(&self, s: &PhaseState) -> Result<()> {
        let norm = s.action_norm();
        if norm > self.domain_radius {
            return Err(KamError::DomainExceeded {
                norm,
                radius: self.domain_radius,
            });
        }
        Ok(())
    }

    pub fn evaluate(&self, s: &PhaseState) -> Result<f64> {
        self.check_domain(s)?;
        Ok(self.compile().value(&s.theta, &s.action))
    }

    pub fn gradient(&self, s: &PhaseState) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_domain(s)?;
        Ok(self.compile().gradient(&s.theta, &s.action))
    }

    /// `k = 0` layer of `A(theta) I.I + R(theta, I)` together with `A_0`.
    pub fn average(&self) -> Result<(FourierTaylorSeries, DMatrix<f64>)> {
        let a0 = self.a.mean();
        kolmogorov_condition(&a0)?;
        Ok((self.nonlinear_series().average(), a0))
    }

    pub fn rescale(&self, direction: RescaleDirection, epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(KamError::InvalidParameter(format!(
                "epsilon must lie in (0,1), got {epsilon}"
            )));
        }
        let mismatch = || KamError::StateMismatch {
            direction: format!("{direction:?}"),
            state: self.state.to_string(),
        };
        let same = |e: f64| {
            if (e - epsilon).abs() <= 1e-12 * e {
                Ok(())
            } else {
                Err(KamError::InvalidParameter(format!(
                    "spec was scaled with eps={e:e}, not {epsilon:e}"
                )))
            }
        };
        let mut out = self.clone();
        match (direction, self.state) {
            (RescaleDirection::Scale1, ScalingState::Physical) => {
                out.a = self.a.scaled(epsilon);
                out.r = self
                    .r
                    .map_coeffs(|i, c| c * epsilon.powi(i.degree() as i32 - 1));
                out.domain_radius = self.domain_radius / epsilon;
                out.state = ScalingState::ScaledHam2 { epsilon };
            }
            (RescaleDirection::Scale1Inverse, ScalingState::ScaledHam2 { epsilon: e }) => {
                same(e)?;
                out.a = self.a.scaled(1.0 / epsilon);
                out.r = self
                    .r
                    .map_coeffs(|i, c| c / epsilon.powi(i.degree() as i32 - 1));
                out.domain_radius = self.domain_radius * epsilon;
                out.state = ScalingState::Physical;
            }
            (RescaleDirection::Scale2, ScalingState::ScaledHam2 { epsilon: e }) => {
                same(e)?;
                out.frequency_scale = self.frequency_scale / epsilon;
                out.a = self.a.scaled(1.0 / epsilon);
                out.r = self.r.scaled(1.0 / epsilon);
                out.state = ScalingState::ScaledHam3 { epsilon };
            }
            (RescaleDirection::Scale2Inverse, ScalingState::ScaledHam3 { epsilon: e }) => {
                same(e)?;
                out.frequency_scale = self.frequency_scale * epsilon;
                out.a = self.a.scaled(epsilon);
                out.r = self.r.scaled(epsilon);
                out.state = ScalingState::ScaledHam2 { epsilon };
            }
            _ => return Err(mismatch()),
        }
        Ok(out)
    }

    pub fn to_file(&self) -> HamiltonianFile {
        HamiltonianFile {
            n: self.n(),
            omega: FrequencyRecord::from(&self.omega),
            frequency_scale: self.frequency_scale,
            a: self
                .a
                .iter()
                .map(|(k, m)| MatrixTerm {
                    k,
                    re: (0..self.n())
                        .map(|i| (0..self.n()).map(|j| m[(i, j)].re).collect())
                        .collect(),
                    im: (0..self.n())
                        .map(|i| (0..self.n()).map(|j| m[(i, j)].im).collect())
                        .collect(),
                })
                .collect(),
            r: self.r.to_records(),
            domain_radius: self.domain_radius,
            scaling: self.state,
            kolmogorov: self.kolmogorov,
            k_max: Some(self.r.k_max()),
            d_max: Some(self.r.d_max()),
        }
    }
}

/// Errors with `KolmogorovDegenerate` when `cond(a0)` exceeds the limit.
pub fn kolmogorov_condition(a0: &DMatrix<f64>) -> Result<f64> {
    let sv = a0.clone().singular_values();
    let max = sv.max();
    let min = sv.min();
    let cond = if min == 0.0 { f64::INFINITY } else { max / min };
    if !(cond <= KOLMOGOROV_COND_MAX) {
        return Err(KamError::KolmogorovDegenerate { condition: cond });
    }
    Ok(cond)
}

/// One Fourier coefficient of `A(theta)` in a spec file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixTerm {
    pub k: Vec<i64>,
    pub re: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub im: Vec<Vec<f64>>,
}

/// Structured-text form of a [`HamiltonianSpec`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HamiltonianFile {
    pub n: usize,
    pub omega: FrequencyRecord,
    #[serde(default = "one")]
    pub frequency_scale: f64,
    #[serde(rename = "A")]
    pub a: Vec<MatrixTerm>,
    #[serde(rename = "R", default)]
    pub r: Vec<TermRecord>,
    pub domain_radius: f64,
    #[serde(default = "physical")]
    pub scaling: ScalingState,
    #[serde(default = "yes")]
    pub kolmogorov: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_max: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_max: Option<u32>,
}

fn one() -> f64 {
    1.0
}

fn yes() -> bool {
    true
}

fn physical() -> ScalingState {
    ScalingState::Physical
}

impl HamiltonianFile {
    pub fn to_spec(&self) -> Result<HamiltonianSpec> {
        let n = self.n;
        let omega = self.omega.to_frequency()?;
        if omega.n() != n {
            return Err(KamError::Parse(format!(
                "omega has dimension {}, spec declares {n}",
                omega.n()
            )));
        }
        let mut a = MatrixSeries::new(n);
        for t in &self.a {
            if t.k.len() != n || t.re.len() != n || t.re.iter().any(|row| row.len() != n) {
                return Err(KamError::Parse(format!(
                    "A term at k={:?} has wrong shape",
                    t.k
                )));
            }
            if !t.im.is_empty() && (t.im.len() != n || t.im.iter().any(|row| row.len() != n)) {
                return Err(KamError::Parse(format!(
                    "A term at k={:?} has a malformed im block",
                    t.k
                )));
            }
            let m = DMatrix::from_fn(n, n, |i, j| {
                Complex64::new(
                    t.re[i][j],
                    t.im.get(i).and_then(|r| r.get(j)).copied().unwrap_or(0.0),
                )
            });
            a.add(&t.k, m);
        }
        let k_max = self.k_max.unwrap_or_else(|| {
            self.r
                .iter()
                .map(|t| t.k.iter().map(|x| x.unsigned_abs() as u32).sum())
                .max()
                .unwrap_or(0)
        });
        let d_max = self.d_max.unwrap_or_else(|| {
            self.r
                .iter()
                .map(|t| t.m.iter().sum())
                .max()
                .unwrap_or(3)
                .max(3)
        });
        let r = FourierTaylorSeries::from_records(n, k_max, d_max, &self.r)?;
        let spec = HamiltonianSpec {
            omega,
            frequency_scale: self.frequency_scale,
            a,
            r,
            domain_radius: self.domain_radius,
            state: self.scaling,
            kolmogorov: self.kolmogorov,
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::freq_arith::{make_test_frequency, TestFrequencyKind};

    fn golden() -> FrequencyVector {
        make_test_frequency(TestFrequencyKind::Golden, 2).unwrap()
    }

    fn spec_with_cubic() -> HamiltonianSpec {
        let a0 = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 0.5]);
        let mut a = MatrixSeries::constant(&a0);
        a.add_cos(
            &[1, 0],
            &DMatrix::from_row_slice(2, 2, &[0.3, 0.0, 0.0, 0.1]),
        );
        let mut r = FourierTaylorSeries::new(2, 2, 4).unwrap();
        r.add_cos(&[0, 1], &[3, 0], 0.7);
        r.add(&[0, 0], &[2, 2], Complex64::new(0.25, 0.0));
        HamiltonianSpec::new(golden(), a, r, 1.0).unwrap()
    }

    #[test]
    fn single_harmonic_value_at_origin() {
        let a0 = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0]);
        let b = DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.1, 0.0]);
        let mut a = MatrixSeries::constant(&a0);
        a.add_cos(&[1, 0], &b);
        let r = FourierTaylorSeries::new(2, 1, 3).unwrap();
        let spec = HamiltonianSpec::new(golden(), a, r, 2.0).unwrap();
        let v = spec
            .evaluate(&PhaseState::new(&[0.0, 0.0], &[1.0, 0.0]))
            .unwrap();
        assert!((v - (1.0 + 2.5)).abs() < 1e-14);
        let (_, a0m) = spec.average().unwrap();
        assert_eq!(a0m, a0);
        assert!(matches!(
            spec.evaluate(&PhaseState::new(&[0.0, 0.0], &[3.0, 0.0])),
            Err(KamError::DomainExceeded { .. })
        ));
    }

    #[test]
    fn degenerate_mean_is_rejected() {
        let mut a = MatrixSeries::new(2);
        a.add_cos(
            &[1, 0],
            &DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]),
        );
        let r = FourierTaylorSeries::new(2, 0, 3).unwrap();
        let err = HamiltonianSpec::new(golden(), a, r, 1.0).unwrap_err();
        assert_eq!(err.kind(), "KolmogorovDegenerate");
    }

    #[test]
    fn low_order_remainder_is_rejected() {
        let a = MatrixSeries::constant(&DMatrix::identity(2, 2));
        let mut r = FourierTaylorSeries::new(2, 1, 3).unwrap();
        r.add(&[0, 0], &[1, 1], Complex64::new(1.0, 0.0));
        assert!(HamiltonianSpec::new(golden(), a, r, 1.0).is_err());
    }

    #[test]
    fn scale1_degree_bookkeeping_and_round_trip() {
        let spec = spec_with_cubic();
        let s2 = spec.rescale(RescaleDirection::Scale1, 0.1).unwrap();
        assert!((s2.r.get(&[0, 1], &[3, 0]).re - 0.01 * 0.35).abs() < 1e-17);
        assert!((s2.a.mean()[(0, 0)] - 0.1).abs() < 1e-16);
        let back = s2.rescale(RescaleDirection::Scale1Inverse, 0.1).unwrap();
        for (i, c) in spec.r.iter() {
            let d = back.r.get_index(i);
            assert!((d - c).norm() <= f64::EPSILON * c.norm());
        }
        assert_eq!(back.state, ScalingState::Physical);
    }

    #[test]
    fn state_order_is_enforced() {
        let spec = spec_with_cubic();
        let err = spec.rescale(RescaleDirection::Scale2, 0.1).unwrap_err();
        assert_eq!(err.kind(), "StateMismatch");
        let s2 = spec.rescale(RescaleDirection::Scale1, 0.1).unwrap();
        assert_eq!(
            s2.rescale(RescaleDirection::Scale1, 0.1)
                .unwrap_err()
                .kind(),
            "StateMismatch"
        );
        let s3 = s2.rescale(RescaleDirection::Scale2, 0.1).unwrap();
        assert!((s3.frequency_scale - 10.0).abs() < 1e-14);
        assert!((s3.time_factor() - 0.1).abs() < 1e-18);
        assert_eq!(
            s3.rescale(RescaleDirection::Scale1Inverse, 0.1)
                .unwrap_err()
                .kind(),
            "StateMismatch"
        );
    }

    #[test]
    fn file_round_trip() {
        let spec = spec_with_cubic();
        let json = serde_json::to_string(&spec.to_file()).unwrap();
        let file: HamiltonianFile = serde_json::from_str(&json).unwrap();
        let back = file.to_spec().unwrap();
        assert_eq!(back.r, spec.r);
        assert_eq!(back.a, spec.a);
    }
}
