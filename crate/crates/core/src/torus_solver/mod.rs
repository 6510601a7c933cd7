//! Lagrangian invariant tori with prescribed frequency by a spectral
//! Newton method on the invariance equation `X_H o K = d_Omega K`.
//!
//! The embedding is `K(phi) = (phi + u(phi), I0 + v(phi))` sampled on a
//! uniform grid. Each Newton step moves to the frame `M = [DK, J DK N]`,
//! `N = (DK^T DK)^-1`, where the linearised equation becomes two
//! cohomological equations; the average of the second one is absorbed by
//! shifting the mean action (the Kolmogorov counterterm), which needs the
//! averaged twist to be invertible.
//!
//! The Hamiltonian is split into `frequency_scale * omega . I` and the rest.
//! `Omega` is stored as that linear part plus a shift, so that in the third
//! scaled form (linear part of order `1/eps`) the invariance defect is
//! computed without cancelling two large numbers.

mod grid;
mod verify;

pub use grid::Grid;
pub use verify::{
    pull_back, pull_back_with, verify_by_integration, verify_by_integration_with, PulledBackTorus,
    VerifyReport, DEFAULT_IMAGE_MARGIN, DEFAULT_VERIFY_SAMPLES,
};

use std::f64::consts::PI;
use std::fmt::Write;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{KamError, Result};
use crate::fourier_taylor::{CompiledSeries, FourierTaylorSeries, HamiltonianSpec};
use crate::freq_arith::diophantine_check_raw;
use crate::freq_arith::record::fmt_f64;
use crate::normal_form::NormalFormResult;

pub const DEFAULT_GRID: usize = 16;
pub const DEFAULT_MAX_ITER: usize = 12;
/// Divisors are certified up to `|k|_1 <= CERT_FACTOR * grid`.
pub const CERT_FACTOR: u64 = 4;

/// Outcome of the finite Diophantine certification of a target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiophantineCert {
    pub gamma: f64,
    pub tau: f64,
    pub q_max: u64,
    pub passed: bool,
    pub witness: Option<Vec<i64>>,
}

/// Torus frequency `Omega = omega_linear + omega_shift`, where
/// `omega_linear = frequency_scale * omega` and `omega_shift` is the
/// gradient of the averaged nonlinear part at `I0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetFrequency {
    pub i0: Vec<f64>,
    pub omega_linear: Vec<f64>,
    pub omega_shift: Vec<f64>,
    pub dioph: Option<DiophantineCert>,
}

impl TargetFrequency {
    /// Frequency map of `h` at `i0` using the angle average of its
    /// nonlinear part.
    pub fn from_spec(h: &HamiltonianSpec, i0: &[f64]) -> Result<Self> {
        let avg = h.nonlinear_series().average();
        Self::from_average(h, &avg, i0)
    }

    /// Frequency map `eps^-1 omega + grad fbar(I0)` of a normal form: the
    /// angle dependent remainder does not enter.
    pub fn from_normal_form(nf: &NormalFormResult, i0: &[f64]) -> Result<Self> {
        Self::from_average(&nf.h_tilde, &nf.fbar, i0)
    }

    pub fn from_average(
        h: &HamiltonianSpec,
        avg: &FourierTaylorSeries,
        i0: &[f64],
    ) -> Result<Self> {
        let n = h.n();
        if i0.len() != n {
            return Err(KamError::InvalidParameter(format!(
                "I0 has {} entries, expected {n}",
                i0.len()
            )));
        }
        let (_, shift) = CompiledSeries::new(avg).gradient(&vec![0.0; n], i0);
        Ok(Self {
            i0: i0.to_vec(),
            omega_linear: linear_part(h),
            omega_shift: shift,
            dioph: None,
        })
    }

    pub fn omega(&self) -> Vec<f64> {
        self.omega_linear
            .iter()
            .zip(&self.omega_shift)
            .map(|(a, b)| a + b)
            .collect()
    }

    /// Checks `|k.Omega| >= gamma |k|_1^-tau` for `0 < |k|_1 <= q_max`, with
    /// `gamma` in the time frame of the Hamiltonian the torus belongs to.
    pub fn certify(&mut self, gamma: f64, tau: f64, q_max: u64) -> Result<&DiophantineCert> {
        let omega = self.omega();
        let scale = 1.0 / omega.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let unit: Vec<f64> = omega.iter().map(|x| x * scale).collect();
        let out = diophantine_check_raw(&unit, gamma * scale, tau, q_max)?;
        self.dioph = Some(DiophantineCert {
            gamma,
            tau,
            q_max,
            passed: out.passed,
            witness: out.witness,
        });
        Ok(self.dioph.as_ref().unwrap())
    }
}

fn linear_part(h: &HamiltonianSpec) -> Vec<f64> {
    h.omega
        .to_f64()
        .iter()
        .map(|w| w * h.frequency_scale)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TorusOptions {
    pub grid: usize,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for TorusOptions {
    fn default() -> Self {
        Self {
            grid: DEFAULT_GRID,
            tol: 1e-10,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewtonHistory {
    /// Sup norm of the defect before each step and after the last one.
    pub defects: Vec<f64>,
    /// Mean action the iteration started from.
    pub start_i0: Vec<f64>,
}

impl NewtonHistory {
    /// Newton passes, counting the final residual evaluation.
    pub fn iterations(&self) -> usize {
        self.defects.len()
    }
}

/// Converged embedding sampled on a `grid^n` grid. `u` and `v` have zero
/// mean; `i0` is the averaged action of the torus.
#[derive(Debug, Clone, PartialEq)]
pub struct TorusEmbedding {
    pub n: usize,
    pub grid_size: usize,
    pub i0: Vec<f64>,
    pub omega_linear: Vec<f64>,
    pub omega_shift: Vec<f64>,
    pub u: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub defect_norm: f64,
    pub diag: NewtonHistory,
}

/// Nonlinear part of a spec, ready for pointwise jets.
struct Field {
    nl: CompiledSeries,
}

struct Evaluation {
    e: Vec<Vec<f64>>,
    defect: f64,
    l: Vec<DMatrix<f64>>,
    hess: Vec<DMatrix<f64>>,
    max_action: f64,
}

fn evaluate(
    grid: &Grid,
    field: &Field,
    omega: &[f64],
    shift: &[f64],
    i0: &[f64],
    u: &[Vec<f64>],
    v: &[Vec<f64>],
) -> Evaluation {
    let n = grid.n;
    let du: Vec<Vec<Vec<f64>>> = u
        .iter()
        .map(|c| (0..n).map(|j| grid.derivative(c, j)).collect())
        .collect();
    let dv: Vec<Vec<Vec<f64>>> = v
        .iter()
        .map(|c| (0..n).map(|j| grid.derivative(c, j)).collect())
        .collect();
    let ou: Vec<Vec<f64>> = u.iter().map(|c| grid.along(c, omega)).collect();
    let ov: Vec<Vec<f64>> = v.iter().map(|c| grid.along(c, omega)).collect();
    let mut e = vec![vec![0.0; grid.total]; 2 * n];
    let mut l = Vec::with_capacity(grid.total);
    let mut hess = Vec::with_capacity(grid.total);
    let mut defect: f64 = 0.0;
    let mut max_action: f64 = 0.0;
    for p in 0..grid.total {
        let phi = grid.point(p);
        let theta: Vec<f64> = (0..n).map(|i| phi[i] + u[i][p]).collect();
        let action: Vec<f64> = (0..n).map(|i| i0[i] + v[i][p]).collect();
        max_action = action.iter().fold(max_action, |m, x| m.max(x.abs()));
        let jet = field.nl.jet2(&theta, &action);
        for i in 0..n {
            e[i][p] = jet.grad[n + i] - shift[i] - ou[i][p];
            e[n + i][p] = -jet.grad[i] - ov[i][p];
            defect = defect.max(e[i][p].abs()).max(e[n + i][p].abs());
        }
        let lp = DMatrix::from_fn(2 * n, n, |r, c| {
            if r < n {
                if r == c {
                    1.0 + du[r][c][p]
                } else {
                    du[r][c][p]
                }
            } else {
                dv[r - n][c][p]
            }
        });
        l.push(lp);
        hess.push(jet.hess);
    }
    Evaluation {
        e,
        defect,
        l,
        hess,
        max_action,
    }
}

/// `J x` with `J = [[0, 1], [-1, 0]]`, applied to the rows of `m`.
fn apply_j(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows() / 2;
    DMatrix::from_fn(m.nrows(), m.ncols(), |r, c| {
        if r < n {
            m[(r + n, c)]
        } else {
            -m[(r - n, c)]
        }
    })
}

fn solve_cohomological(
    grid: &Grid,
    rhs: &[f64],
    omega: &[f64],
    gamma: f64,
    tau: f64,
) -> Result<Vec<f64>> {
    let mut c = grid.forward(rhs);
    for (p, x) in c.iter_mut().enumerate() {
        if p == 0 || grid.is_nyquist(p) {
            *x = Complex64::new(0.0, 0.0);
            continue;
        }
        let k = grid.mode(p);
        let d = grid::dot(&k, omega);
        let l1: i64 = k.iter().map(|a| a.abs()).sum();
        let bound = 0.5 * gamma * (l1 as f64).powf(-tau);
        if d.abs() < bound {
            return Err(KamError::SmallDivisorBreakdown {
                k,
                divisor: d.abs(),
                bound,
            });
        }
        *x /= Complex64::new(0.0, 2.0 * PI * d);
    }
    Ok(grid.inverse(&c))
}

fn column_means(values: &[Vec<f64>]) -> DVector<f64> {
    DVector::from_iterator(values.len(), values.iter().map(|c| grid::mean(c)))
}

/// Solves for the invariant torus with the target frequency; `u = v = 0`
/// at the target action is the starting guess.
pub fn solve_torus(
    h: &HamiltonianSpec,
    target: &TargetFrequency,
    tol: f64,
    max_iter: usize,
) -> Result<TorusEmbedding> {
    let opts = TorusOptions {
        tol,
        max_iter,
        ..Default::default()
    };
    solve_torus_with(h, target, &opts, None)
}

pub fn solve_torus_with(
    h: &HamiltonianSpec,
    target: &TargetFrequency,
    opts: &TorusOptions,
    initial: Option<&TorusEmbedding>,
) -> Result<TorusEmbedding> {
    let n = h.n();
    if target.i0.len() != n || target.omega_shift.len() != n {
        return Err(KamError::InvalidParameter(
            "target dimension does not match the Hamiltonian".into(),
        ));
    }
    let lin = linear_part(h);
    for (a, b) in lin.iter().zip(&target.omega_linear) {
        if (a - b).abs() > 1e-14 * a.abs().max(1.0) {
            return Err(KamError::InvalidParameter(
                "target was built for a different linear frequency".into(),
            ));
        }
    }
    if opts.grid < 4 || opts.grid % 2 != 0 {
        return Err(KamError::InvalidParameter(format!(
            "grid must be even and >= 4, got {}",
            opts.grid
        )));
    }
    let cert = target.dioph.as_ref().ok_or_else(|| {
        KamError::InvalidParameter("target frequency has not been certified Diophantine".into())
    })?;
    let omega = target.omega();
    if !cert.passed {
        let k = cert.witness.clone().unwrap_or_default();
        let divisor = grid::dot(&k, &omega).abs();
        let l1: i64 = k.iter().map(|a| a.abs()).sum();
        return Err(KamError::SmallDivisorBreakdown {
            k,
            divisor,
            bound: cert.gamma * (l1.max(1) as f64).powf(-cert.tau),
        });
    }
    if cert.q_max < CERT_FACTOR * opts.grid as u64 {
        return Err(KamError::InvalidParameter(format!(
            "certification to |k|_1 <= {} does not cover {} x grid",
            cert.q_max, CERT_FACTOR
        )));
    }

    let grid = Grid::new(n, opts.grid);
    let field = Field {
        nl: CompiledSeries::new(&h.nonlinear_series()),
    };
    let shift = &target.omega_shift;
    let (mut i0, mut u, mut v) = match initial {
        Some(t) => {
            if t.grid_size != opts.grid || t.n != n {
                return Err(KamError::InvalidParameter(
                    "initial torus has a different grid".into(),
                ));
            }
            (t.i0.clone(), t.u.clone(), t.v.clone())
        }
        None => (
            target.i0.clone(),
            vec![vec![0.0; grid.total]; n],
            vec![vec![0.0; grid.total]; n],
        ),
    };
    let start_i0 = i0.clone();
    let mut defects = Vec::new();
    loop {
        let ev = evaluate(&grid, &field, &omega, shift, &i0, &u, &v);
        if ev.max_action > h.domain_radius {
            return Err(KamError::DomainExceeded {
                norm: ev.max_action,
                radius: h.domain_radius,
            });
        }
        defects.push(ev.defect);
        if ev.defect <= opts.tol {
            return Ok(TorusEmbedding {
                n,
                grid_size: opts.grid,
                i0,
                omega_linear: target.omega_linear.clone(),
                omega_shift: shift.clone(),
                u,
                v,
                defect_norm: ev.defect,
                diag: NewtonHistory { defects, start_i0 },
            });
        }
        let k = defects.len();
        let stalled = k >= 3 && ev.defect >= defects[k - 2];
        if k > opts.max_iter || stalled || !ev.defect.is_finite() {
            return Err(KamError::NonConvergence {
                iterations: k,
                defect: ev.defect,
            });
        }
        newton_step(&grid, &ev, &omega, cert, &mut i0, &mut u, &mut v)?;
    }
}

fn newton_step(
    grid: &Grid,
    ev: &Evaluation,
    omega: &[f64],
    cert: &DiophantineCert,
    i0: &mut [f64],
    u: &mut [Vec<f64>],
    v: &mut [Vec<f64>],
) -> Result<()> {
    let n = grid.n;
    let total = grid.total;
    // Normal vectors V = J L (L^T L)^-1 and their derivative along Omega.
    let mut frames = Vec::with_capacity(total);
    let mut vcols = vec![vec![0.0; total]; 2 * n * n];
    for p in 0..total {
        let l = &ev.l[p];
        let g = (l.transpose() * l)
            .try_inverse()
            .ok_or_else(|| KamError::NonConvergence {
                iterations: 0,
                defect: ev.defect,
            })?;
        let vm = apply_j(l) * g;
        for r in 0..2 * n {
            for c in 0..n {
                vcols[r * n + c][p] = vm[(r, c)];
            }
        }
        frames.push(vm);
    }
    let dvcols: Vec<Vec<f64>> = vcols.iter().map(|c| grid.along(c, omega)).collect();

    let mut eta_l = vec![vec![0.0; total]; n];
    let mut eta_v = vec![vec![0.0; total]; n];
    let mut s_mats = Vec::with_capacity(total);
    let mut ms = Vec::with_capacity(total);
    for p in 0..total {
        let vm = &frames[p];
        let mut m = DMatrix::zeros(2 * n, 2 * n);
        m.columns_mut(0, n).copy_from(&ev.l[p]);
        m.columns_mut(n, n).copy_from(vm);
        let minv = m
            .clone()
            .try_inverse()
            .ok_or_else(|| KamError::NonConvergence {
                iterations: 0,
                defect: ev.defect,
            })?;
        let e = DVector::from_fn(2 * n, |r, _| ev.e[r][p]);
        let eta = &minv * e;
        for i in 0..n {
            eta_l[i][p] = eta[i];
            eta_v[i][p] = eta[n + i];
        }
        let dv = DMatrix::from_fn(2 * n, n, |r, c| dvcols[r * n + c][p]);
        let rhs = apply_j(&ev.hess[p]) * vm - dv;
        let s = (&minv * rhs).rows(0, n).into_owned();
        s_mats.push(s);
        ms.push(m);
    }

    // Normal equation: d_Omega xi_V = eta_V, its mean dropped (quadratically small).
    let mut xi_v = Vec::with_capacity(n);
    for comp in &eta_v {
        let m = grid::mean(comp);
        let centred: Vec<f64> = comp.iter().map(|x| x - m).collect();
        xi_v.push(solve_cohomological(
            grid, &centred, omega, cert.gamma, cert.tau,
        )?);
    }
    // Counterterm: mean(S) c_V = -mean(eta_L + S xi_V).
    let mut mean_s = DMatrix::zeros(n, n);
    let mut tangent = vec![vec![0.0; total]; n];
    for p in 0..total {
        mean_s += &s_mats[p];
        let xv = DVector::from_fn(n, |i, _| xi_v[i][p]);
        let sx = &s_mats[p] * xv;
        for i in 0..n {
            tangent[i][p] = eta_l[i][p] + sx[i];
        }
    }
    mean_s /= total as f64;
    let rhs = -column_means(&tangent);
    let c_v = mean_s
        .clone()
        .lu()
        .solve(&rhs)
        .ok_or_else(|| KamError::KolmogorovDegenerate {
            condition: f64::INFINITY,
        })?;
    for i in 0..n {
        xi_v[i].iter_mut().for_each(|x| *x += c_v[i]);
    }
    for p in 0..total {
        let sc = &s_mats[p] * &c_v;
        for i in 0..n {
            tangent[i][p] += sc[i];
        }
    }
    let mut xi_l = Vec::with_capacity(n);
    for comp in &tangent {
        let m = grid::mean(comp);
        let centred: Vec<f64> = comp.iter().map(|x| x - m).collect();
        xi_l.push(solve_cohomological(
            grid, &centred, omega, cert.gamma, cert.tau,
        )?);
    }

    // Gauge: choose mean(xi_L) so that u keeps zero mean.
    let mut mean_lt = DMatrix::zeros(n, n);
    let mut partial = vec![vec![0.0; total]; n];
    for p in 0..total {
        let m = &ms[p];
        let xl = DVector::from_fn(n, |i, _| xi_l[i][p]);
        let xv = DVector::from_fn(n, |i, _| xi_v[i][p]);
        let d = m.columns(0, n) * xl + m.columns(n, n) * xv;
        for i in 0..n {
            partial[i][p] = d[i];
        }
        mean_lt += m.view((0, 0), (n, n));
    }
    mean_lt /= total as f64;
    let target = -(column_means(u) + column_means(&partial));
    let c_l = mean_lt
        .lu()
        .solve(&target)
        .ok_or_else(|| KamError::NonConvergence {
            iterations: 0,
            defect: ev.defect,
        })?;
    for i in 0..n {
        xi_l[i].iter_mut().for_each(|x| *x += c_l[i]);
    }

    for p in 0..total {
        let m = &ms[p];
        let xi = DVector::from_fn(
            2 * n,
            |r, _| if r < n { xi_l[r][p] } else { xi_v[r - n][p] },
        );
        let dk = m * xi;
        for i in 0..n {
            u[i][p] += dk[i];
            v[i][p] += dk[n + i];
        }
    }
    // Pointwise products alias into the Nyquist slots, which no correction
    // can reach; project them out.
    for i in 0..n {
        u[i] = grid.multiplier(&u[i], |_| Complex64::new(1.0, 0.0));
        v[i] = grid.multiplier(&v[i], |_| Complex64::new(1.0, 0.0));
        let m = grid::mean(&v[i]);
        v[i].iter_mut().for_each(|x| *x -= m);
        i0[i] += m;
    }
    Ok(())
}

/// Trigonometric interpolant of an embedding, for evaluation off the grid.
#[derive(Debug, Clone)]
pub struct TorusInterp {
    n: usize,
    half: i64,
    modes: Vec<Vec<i64>>,
    /// Per mode, coefficients of `u_1..u_n, v_1..v_n`.
    coeffs: Vec<Vec<Complex64>>,
    pub i0: Vec<f64>,
}

impl TorusInterp {
    pub fn new(grid: &Grid, i0: &[f64], u: &[Vec<f64>], v: &[Vec<f64>]) -> Self {
        let n = grid.n;
        let mut table: std::collections::BTreeMap<Vec<i64>, Vec<Complex64>> = Default::default();
        for (slot, comp) in u.iter().chain(v).enumerate() {
            for (k, c) in grid::split_modes(grid, &grid.forward(comp)) {
                table
                    .entry(k)
                    .or_insert_with(|| vec![Complex64::new(0.0, 0.0); 2 * n])[slot] += c;
            }
        }
        let (modes, coeffs) = table.into_iter().unzip();
        Self {
            n,
            half: (grid.size / 2) as i64,
            modes,
            coeffs,
            i0: i0.to_vec(),
        }
    }

    fn exps(&self, phi: &[f64]) -> Vec<Vec<Complex64>> {
        (0..self.n)
            .map(|j| {
                (-self.half..=self.half)
                    .map(|l| {
                        let a = 2.0 * PI * crate::fourier_taylor::wrap_angle(l as f64 * phi[j]);
                        Complex64::new(a.cos(), a.sin())
                    })
                    .collect()
            })
            .collect()
    }

    /// `(u(phi), v(phi))`.
    pub fn displacement(&self, phi: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = self.n;
        let ex = self.exps(phi);
        let mut acc = vec![0.0; 2 * n];
        for (k, c) in self.modes.iter().zip(&self.coeffs) {
            let mut e = Complex64::new(1.0, 0.0);
            for j in 0..n {
                e *= ex[j][(k[j] + self.half) as usize];
            }
            for s in 0..2 * n {
                acc[s] += (c[s] * e).re;
            }
        }
        (acc[..n].to_vec(), acc[n..].to_vec())
    }

    /// `K(phi)` with angles not reduced.
    pub fn point(&self, phi: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (du, dv) = self.displacement(phi);
        let theta = (0..self.n).map(|j| phi[j] + du[j]).collect();
        let action = (0..self.n).map(|j| self.i0[j] + dv[j]).collect();
        (theta, action)
    }

    /// Parameter `phi` with `phi + u(phi) = theta`, lifted like `theta`.
    pub fn parameter_of(&self, theta: &[f64]) -> Vec<f64> {
        let mut phi = theta.to_vec();
        for _ in 0..100 {
            let (du, _) = self.displacement(&phi);
            let next: Vec<f64> = (0..self.n).map(|j| theta[j] - du[j]).collect();
            let change = next
                .iter()
                .zip(&phi)
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            phi = next;
            if change < 1e-15 {
                break;
            }
        }
        phi
    }
}

/// Structured export of a converged torus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TorusRecord {
    pub n: usize,
    pub grid: usize,
    pub omega_target: Vec<f64>,
    pub omega_linear: Vec<f64>,
    pub omega_shift: Vec<f64>,
    pub i0: Vec<f64>,
    pub start_i0: Vec<f64>,
    pub defect_norm: f64,
    pub iterations: usize,
    pub defects: Vec<f64>,
    pub u: Vec<CoefficientRecord>,
    pub v: Vec<CoefficientRecord>,
}

/// Fourier coefficient of component `j` (1-based) at mode `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientRecord {
    pub j: usize,
    pub k: Vec<i64>,
    pub re: f64,
    pub im: f64,
}

impl TorusEmbedding {
    pub fn grid(&self) -> Grid {
        Grid::new(self.n, self.grid_size)
    }

    pub fn omega_target(&self) -> Vec<f64> {
        self.omega_linear
            .iter()
            .zip(&self.omega_shift)
            .map(|(a, b)| a + b)
            .collect()
    }

    pub fn interp(&self) -> TorusInterp {
        TorusInterp::new(&self.grid(), &self.i0, &self.u, &self.v)
    }

    /// Sup over the grid of the pulled-back symplectic form
    /// `D theta^T D I - D I^T D theta`.
    pub fn lagrangian_defect(&self) -> f64 {
        let g = self.grid();
        let n = self.n;
        let du: Vec<Vec<Vec<f64>>> = self
            .u
            .iter()
            .map(|c| (0..n).map(|j| g.derivative(c, j)).collect())
            .collect();
        let dv: Vec<Vec<Vec<f64>>> = self
            .v
            .iter()
            .map(|c| (0..n).map(|j| g.derivative(c, j)).collect())
            .collect();
        let mut worst: f64 = 0.0;
        for p in 0..g.total {
            let dt = DMatrix::from_fn(n, n, |r, c| du[r][c][p] + if r == c { 1.0 } else { 0.0 });
            let di = DMatrix::from_fn(n, n, |r, c| dv[r][c][p]);
            let w = dt.transpose() * &di - di.transpose() * &dt;
            worst = worst.max(w.amax());
        }
        worst
    }

    /// Invariance defect recomputed on a `size^n` grid from the trigonometric
    /// interpolant of the embedding.
    pub fn defect_on_grid(&self, h: &HamiltonianSpec, size: usize) -> Result<f64> {
        let from = self.grid();
        let to = Grid::new(self.n, size);
        let u: Vec<Vec<f64>> = self.u.iter().map(|c| from.resample(c, &to)).collect();
        let v: Vec<Vec<f64>> = self.v.iter().map(|c| from.resample(c, &to)).collect();
        let field = Field {
            nl: CompiledSeries::new(&h.nonlinear_series()),
        };
        let ev = evaluate(
            &to,
            &field,
            &self.omega_target(),
            &self.omega_shift,
            &self.i0,
            &u,
            &v,
        );
        if ev.max_action > h.domain_radius {
            return Err(KamError::DomainExceeded {
                norm: ev.max_action,
                radius: h.domain_radius,
            });
        }
        Ok(ev.defect)
    }

    pub fn to_record(&self) -> TorusRecord {
        let g = self.grid();
        let coeffs = |comps: &[Vec<f64>]| {
            let mut out = Vec::new();
            for (j, c) in comps.iter().enumerate() {
                for (p, x) in g.forward(c).into_iter().enumerate() {
                    if x != Complex64::new(0.0, 0.0) {
                        out.push(CoefficientRecord {
                            j: j + 1,
                            k: g.mode(p),
                            re: x.re,
                            im: x.im,
                        });
                    }
                }
            }
            out
        };
        TorusRecord {
            n: self.n,
            grid: self.grid_size,
            omega_target: self.omega_target(),
            omega_linear: self.omega_linear.clone(),
            omega_shift: self.omega_shift.clone(),
            i0: self.i0.clone(),
            start_i0: self.diag.start_i0.clone(),
            defect_norm: self.defect_norm,
            iterations: self.diag.iterations(),
            defects: self.diag.defects.clone(),
            u: coeffs(&self.u),
            v: coeffs(&self.v),
        }
    }

    /// Grid samples `phi_1..phi_n,theta_1..theta_n,I_1..I_n`, angles mod 1.
    pub fn surface_csv(&self) -> String {
        let g = self.grid();
        surface_csv(&g, &self.i0, &self.u, &self.v)
    }
}

pub(crate) fn surface_csv(g: &Grid, i0: &[f64], u: &[Vec<f64>], v: &[Vec<f64>]) -> String {
    let n = g.n;
    let mut out = String::new();
    let names: Vec<String> = ["phi", "theta", "I"]
        .iter()
        .flat_map(|s| (1..=n).map(move |j| format!("{s}_{j}")))
        .collect();
    out.push_str(&names.join(","));
    out.push('\n');
    for p in 0..g.total {
        let phi = g.point(p);
        let mut row: Vec<String> = phi.iter().map(|x| fmt_f64(*x)).collect();
        row.extend((0..n).map(|j| fmt_f64(crate::fourier_taylor::wrap_angle(phi[j] + u[j][p]))));
        row.extend((0..n).map(|j| fmt_f64(i0[j] + v[j][p])));
        let _ = writeln!(out, "{}", row.join(","));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fourier_taylor::{MatrixSeries, ScalingState};
    use crate::freq_arith::{make_test_frequency, TestFrequencyKind};

    fn spec(mu: f64) -> HamiltonianSpec {
        let omega = make_test_frequency(TestFrequencyKind::Golden, 2).unwrap();
        let a0 = DMatrix::from_row_slice(2, 2, &[1.0, 0.25, 0.25, 0.5]);
        let mut a = MatrixSeries::constant(&a0);
        a.add_cos(
            &[1, 0],
            &DMatrix::from_row_slice(2, 2, &[0.5 * mu, 0.0, 0.0, 0.25 * mu]),
        );
        let mut r = FourierTaylorSeries::new(2, 1, 3).unwrap();
        r.add_cos(&[1, 0], &[0, 0], mu);
        r.add_cos(&[0, 1], &[1, 0], 0.5 * mu);
        let mut s = HamiltonianSpec::new(omega, a, FourierTaylorSeries::new(2, 1, 3).unwrap(), 2.0)
            .unwrap();
        s.r = r;
        s.state = ScalingState::ScaledHam3 { epsilon: 1.0 };
        s
    }

    fn target(h: &HamiltonianSpec) -> TargetFrequency {
        let mut t = TargetFrequency::from_spec(h, &[0.3, 0.2]).unwrap();
        t.certify(0.1, 1.0, CERT_FACTOR * DEFAULT_GRID as u64)
            .unwrap();
        t
    }

    #[test]
    fn integrable_torus_is_exact() {
        let h = spec(0.0);
        let t = solve_torus(&h, &target(&h), 1e-12, 6).unwrap();
        assert_eq!(t.diag.iterations(), 1);
        assert_eq!(t.defect_norm, 0.0);
        assert!(t.u.iter().chain(&t.v).all(|c| c.iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn perturbed_torus_converges() {
        let h = spec(1e-3);
        let t = solve_torus(&h, &target(&h), 1e-11, 8).unwrap();
        assert!(t.defect_norm <= 1e-11);
        assert!(t.diag.iterations() <= 6, "{:?}", t.diag.defects);
        assert!(t.lagrangian_defect() < 1e-8);
        let fine = t.defect_on_grid(&h, 2 * DEFAULT_GRID).unwrap();
        assert!((fine - t.defect_norm).abs() < 1e-10, "{fine}");
        for c in t.u.iter().chain(&t.v) {
            assert!(grid::mean(c).abs() < 1e-15);
        }
        // The counterterm moves the mean action by O(mu).
        let shift = (t.i0[0] - 0.3).abs().max((t.i0[1] - 0.2).abs());
        assert!(shift > 0.0 && shift < 1e-2, "{shift}");
    }

    #[test]
    fn resonant_target_is_refused() {
        let h = spec(1e-3);
        let mut t = target(&h);
        // Omega = (1, 1) up to the linear part: k = (1, -1) is resonant.
        t.omega_shift = vec![1.0 - t.omega_linear[0], 1.0 - t.omega_linear[1]];
        t.certify(0.1, 1.0, 64).unwrap();
        assert!(!t.dioph.as_ref().unwrap().passed);
        let err = solve_torus(&h, &t, 1e-10, 6).unwrap_err();
        assert_eq!(err.kind(), "SmallDivisorBreakdown");
    }

    #[test]
    fn uncertified_target_is_rejected() {
        let h = spec(1e-3);
        let t = TargetFrequency::from_spec(&h, &[0.3, 0.2]).unwrap();
        assert_eq!(
            solve_torus(&h, &t, 1e-10, 6).unwrap_err().kind(),
            "InvalidParameter"
        );
    }

    #[test]
    fn export_shapes() {
        let h = spec(1e-3);
        let t = solve_torus(&h, &target(&h), 1e-11, 8).unwrap();
        let csv = t.surface_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("phi_1,phi_2,theta_1,theta_2,I_1,I_2"));
        assert_eq!(lines.count(), DEFAULT_GRID * DEFAULT_GRID);
        let rec = t.to_record();
        assert_eq!(rec.iterations, t.diag.iterations());
        let interp = t.interp();
        let g = t.grid();
        for p in [0, 17, 100] {
            let (th, ac) = interp.point(&g.point(p));
            assert!((th[0] - g.point(p)[0] - t.u[0][p]).abs() < 1e-14);
            assert!((ac[1] - t.i0[1] - t.v[1][p]).abs() < 1e-14);
        }
    }
}
