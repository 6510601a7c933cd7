use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{surface_csv, Grid, TorusEmbedding, TorusInterp};
use crate::error::{KamError, Result};
use crate::fourier_taylor::{integrate_series, CompiledSeries, HamiltonianSpec, PhaseState};
use crate::normal_form::NormalFormResult;

pub const DEFAULT_VERIFY_SAMPLES: usize = 8;
/// Default `b` in the image margin `b sqrt(mu)` kept from the boundary of `B_1`.
pub const DEFAULT_IMAGE_MARGIN: f64 = 0.25;
/// Records kept per trajectory (the step count is not affected).
const RECORDS_PER_RUN: usize = 2000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub t_end: f64,
    pub step: f64,
    pub samples: usize,
    /// Largest `|I - I0 - v(phi)|` where `phi + u(phi) = theta`: the distance
    /// to the torus along the action fibres.
    pub max_deviation: f64,
    /// Largest `|phi(t) - phi(0) - Omega t|`.
    pub max_phase_error: f64,
}

fn sample_phases(n: usize, samples: usize) -> Vec<Vec<f64>> {
    // Kronecker sequence with an irrational step per coordinate.
    let steps = [
        0.0,
        0.618_033_988_749_894_9,
        0.414_213_562_373_095,
        0.732_050_807_568_877_2,
    ];
    (0..samples)
        .map(|s| {
            (0..n)
                .map(|j| {
                    let x = (s as f64 + 0.5) / samples as f64 * if j == 0 { 1.0 } else { 0.0 }
                        + s as f64 * steps[j];
                    x - x.floor()
                })
                .collect()
        })
        .collect()
}

fn run(
    f: &CompiledSeries,
    radius: f64,
    interp: &TorusInterp,
    omega: &[f64],
    t_end: f64,
    step: f64,
    samples: usize,
) -> Result<VerifyReport> {
    if samples == 0 {
        return Err(KamError::InvalidParameter(
            "need at least one sample".into(),
        ));
    }
    let n = omega.len();
    let every = ((t_end / step).ceil() as usize / RECORDS_PER_RUN).max(1);
    let per: Vec<Result<(f64, f64)>> = sample_phases(n, samples)
        .par_iter()
        .map(|phi0| {
            let (theta, action) = interp.point(phi0);
            let s0 = PhaseState::new(&theta, &action);
            let start = interp.parameter_of(&s0.theta);
            let tr = integrate_series(f, &s0, t_end, step, Some(radius), every)?;
            let mut dev: f64 = 0.0;
            let mut phase: f64 = 0.0;
            for i in 0..tr.len() {
                let phi = interp.parameter_of(&tr.theta_lift[i]);
                let (_, dv) = interp.displacement(&phi);
                for j in 0..n {
                    dev = dev.max((tr.actions[i][j] - interp.i0[j] - dv[j]).abs());
                    phase = phase.max((phi[j] - start[j] - omega[j] * tr.times[i]).abs());
                }
            }
            Ok((dev, phase))
        })
        .collect();
    let mut report = VerifyReport {
        t_end,
        step,
        samples,
        max_deviation: 0.0,
        max_phase_error: 0.0,
    };
    for r in per {
        let (d, p) = r?;
        report.max_deviation = report.max_deviation.max(d);
        report.max_phase_error = report.max_phase_error.max(p);
    }
    Ok(report)
}

/// Integrates from `DEFAULT_VERIFY_SAMPLES` points of the torus for time
/// `t_end` with step `10^-2 / max(1, |Omega|)`.
pub fn verify_by_integration(
    h: &HamiltonianSpec,
    torus: &TorusEmbedding,
    t_end: f64,
) -> Result<VerifyReport> {
    let scale = torus
        .omega_target()
        .iter()
        .fold(1.0f64, |m, x| m.max(x.abs()));
    verify_by_integration_with(h, torus, t_end, 1e-2 / scale, DEFAULT_VERIFY_SAMPLES)
}

pub fn verify_by_integration_with(
    h: &HamiltonianSpec,
    torus: &TorusEmbedding,
    t_end: f64,
    step: f64,
    samples: usize,
) -> Result<VerifyReport> {
    run(
        &h.compile(),
        h.domain_radius,
        &torus.interp(),
        &torus.omega_target(),
        t_end,
        step,
        samples,
    )
}

/// A torus mapped back to the coordinates of the original Hamiltonian.
///
/// `u` does not have zero mean here: the parameterisation is inherited from
/// the normal-form torus.
#[derive(Debug, Clone, PartialEq)]
pub struct PulledBackTorus {
    pub n: usize,
    pub grid_size: usize,
    pub epsilon: f64,
    /// Frequency in the original time, `eps * Omega`.
    pub omega: Vec<f64>,
    pub i0: Vec<f64>,
    pub u: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    /// Defect of the torus before the pull-back.
    pub scaled_defect: f64,
}

pub fn pull_back(
    torus: &TorusEmbedding,
    nf: &NormalFormResult,
    epsilon: f64,
) -> Result<PulledBackTorus> {
    pull_back_with(torus, nf, epsilon, DEFAULT_IMAGE_MARGIN)
}

/// Maps the torus by `Phi` (orbits of `H o Phi` go to orbits of `H`), then
/// undoes the action scaling `I -> eps I`. Time in the third scaled form is
/// `eps` times the original time, so the frequency becomes `eps * Omega`.
pub fn pull_back_with(
    torus: &TorusEmbedding,
    nf: &NormalFormResult,
    epsilon: f64,
    margin_coeff: f64,
) -> Result<PulledBackTorus> {
    if (epsilon - nf.epsilon).abs() > 1e-12 * nf.epsilon {
        return Err(KamError::InvalidParameter(format!(
            "normal form was computed for eps={:e}, not {epsilon:e}",
            nf.epsilon
        )));
    }
    let g = torus.grid();
    let n = torus.n;
    let max_action = (0..g.total)
        .flat_map(|p| (0..n).map(move |j| (j, p)))
        .fold(0.0f64, |m, (j, p)| {
            m.max((torus.i0[j] + torus.v[j][p]).abs())
        });
    let required = margin_coeff * nf.mu.sqrt();
    let margin = 1.0 - max_action;
    if margin < required {
        return Err(KamError::OutsideImage { margin, required });
    }
    let mut u = vec![vec![0.0; g.total]; n];
    let mut v = vec![vec![0.0; g.total]; n];
    for p in 0..g.total {
        let phi = g.point(p);
        let theta: Vec<f64> = (0..n).map(|j| phi[j] + torus.u[j][p]).collect();
        let action: Vec<f64> = (0..n).map(|j| torus.i0[j] + torus.v[j][p]).collect();
        let (t, a) = nf.phi.apply(&theta, &action, false);
        for j in 0..n {
            u[j][p] = t[j] - phi[j];
            v[j][p] = epsilon * a[j];
        }
    }
    let mut i0 = vec![0.0; n];
    for j in 0..n {
        i0[j] = super::grid::mean(&v[j]);
        v[j].iter_mut().for_each(|x| *x -= i0[j]);
    }
    let omega = torus
        .omega_linear
        .iter()
        .zip(&torus.omega_shift)
        .map(|(a, b)| epsilon * a + epsilon * b)
        .collect();
    Ok(PulledBackTorus {
        n,
        grid_size: torus.grid_size,
        epsilon,
        omega,
        i0,
        u,
        v,
        scaled_defect: torus.defect_norm,
    })
}

impl PulledBackTorus {
    pub fn grid(&self) -> Grid {
        Grid::new(self.n, self.grid_size)
    }

    pub fn interp(&self) -> TorusInterp {
        TorusInterp::new(&self.grid(), &self.i0, &self.u, &self.v)
    }

    /// Sup of `X_H(K) - d_omega K` for the original Hamiltonian `h`.
    pub fn defect_in(&self, h: &HamiltonianSpec) -> Result<f64> {
        let g = self.grid();
        let n = self.n;
        let f = h.compile();
        let ou: Vec<Vec<f64>> = self.u.iter().map(|c| g.along(c, &self.omega)).collect();
        let ov: Vec<Vec<f64>> = self.v.iter().map(|c| g.along(c, &self.omega)).collect();
        let mut worst: f64 = 0.0;
        for p in 0..g.total {
            let phi = g.point(p);
            let theta: Vec<f64> = (0..n).map(|j| phi[j] + self.u[j][p]).collect();
            let action: Vec<f64> = (0..n).map(|j| self.i0[j] + self.v[j][p]).collect();
            let norm = action.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            if norm > h.domain_radius {
                return Err(KamError::DomainExceeded {
                    norm,
                    radius: h.domain_radius,
                });
            }
            let (gt, gi) = f.gradient(&theta, &action);
            for j in 0..n {
                worst = worst.max((gi[j] - self.omega[j] - ou[j][p]).abs());
                worst = worst.max((-gt[j] - ov[j][p]).abs());
            }
        }
        Ok(worst)
    }

    /// Integration check in the original coordinates and time.
    pub fn verify(
        &self,
        h: &HamiltonianSpec,
        t_end: f64,
        step: f64,
        samples: usize,
    ) -> Result<VerifyReport> {
        run(
            &h.compile(),
            h.domain_radius,
            &self.interp(),
            &self.omega,
            t_end,
            step,
            samples,
        )
    }

    pub fn surface_csv(&self) -> String {
        surface_csv(&self.grid(), &self.i0, &self.u, &self.v)
    }
}
