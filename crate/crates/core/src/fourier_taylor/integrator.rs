use std::fmt::Write;

use super::{HamiltonianSpec, PhaseFunction, PhaseState};
use crate::error::{KamError, Result};
use crate::freq_arith::record::fmt_f64;

/// Fixed-point tolerance of the implicit midpoint solve, relative to the
/// size of the state and of the step increment.
pub const MIDPOINT_TOL: f64 = 1e-14;
pub const MIDPOINT_MAX_ITER: usize = 100;

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepStats {
    pub steps: usize,
    pub max_iterations: usize,
}

/// Sampled solution; angles are stored lifted (not reduced).
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub theta_lift: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub energies: Vec<f64>,
    pub stats: StepStats,
}

impl Trajectory {
    pub fn state(&self, i: usize) -> PhaseState {
        PhaseState::new(&self.theta_lift[i], &self.actions[i])
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn max_energy_error(&self) -> f64 {
        let e0 = self.energies[0];
        self.energies.iter().fold(0.0, |a, e| a.max((e - e0).abs()))
    }
}

/// One implicit midpoint step `z1 = z0 + h X_H((z0 + z1) / 2)`.
///
/// `theta` and `action` are updated in place; returns the number of
/// fixed-point iterations used.
pub fn midpoint_step(
    f: &dyn PhaseFunction,
    theta: &mut [f64],
    action: &mut [f64],
    h: f64,
) -> Result<usize> {
    let n = theta.len();
    let (t0, a0) = (theta.to_vec(), action.to_vec());
    let (gt, gi) = f.gradient(&t0, &a0);
    let mut t1: Vec<f64> = (0..n).map(|j| t0[j] + h * gi[j]).collect();
    let mut a1: Vec<f64> = (0..n).map(|j| a0[j] - h * gt[j]).collect();
    let mut tm = vec![0.0; n];
    let mut am = vec![0.0; n];
    let scale0 = t0.iter().chain(&a0).fold(1.0f64, |a, x| a.max(x.abs()));
    let mut residual = f64::INFINITY;
    for it in 1..=MIDPOINT_MAX_ITER {
        for j in 0..n {
            tm[j] = 0.5 * (t0[j] + t1[j]);
            am[j] = 0.5 * (a0[j] + a1[j]);
        }
        let (gt, gi) = f.gradient(&tm, &am);
        residual = 0.0;
        let mut incr: f64 = 0.0;
        for j in 0..n {
            let nt = t0[j] + h * gi[j];
            let na = a0[j] - h * gt[j];
            residual = residual.max((nt - t1[j]).abs()).max((na - a1[j]).abs());
            incr = incr.max((h * gi[j]).abs()).max((h * gt[j]).abs());
            t1[j] = nt;
            a1[j] = na;
        }
        if residual <= MIDPOINT_TOL * scale0.max(incr) {
            theta.copy_from_slice(&t1);
            action.copy_from_slice(&a1);
            return Ok(it);
        }
    }
    Err(KamError::NonConvergentStep {
        iterations: MIDPOINT_MAX_ITER,
        residual,
    })
}

/// Integrates `theta' = d_I H, I' = -d_theta H` from `s0` over `[0, t_end]`
/// with `ceil(t_end / h)` equal steps, recording every `record_every`-th
/// state (and the last one).
///
/// Angles are kept in `[0, 1)` during the solve, with the integer
/// windings tracked separately, so large frequencies do not erode the
/// phase accuracy.
pub fn integrate_series(
    f: &dyn PhaseFunction,
    s0: &PhaseState,
    t_end: f64,
    h: f64,
    radius: Option<f64>,
    record_every: usize,
) -> Result<Trajectory> {
    if !(h > 0.0) || !(t_end >= 0.0) || !t_end.is_finite() {
        return Err(KamError::InvalidParameter(format!(
            "need h > 0 and finite T >= 0, got h={h}, T={t_end}"
        )));
    }
    let n = s0.n();
    let steps = (t_end / h).ceil() as usize;
    let h = if steps == 0 { h } else { t_end / steps as f64 };
    let every = record_every.max(1);
    let mut theta: Vec<f64> = s0.theta.clone();
    let mut winding = vec![0.0f64; n];
    let mut action = s0.action.clone();
    let mut traj = Trajectory {
        times: Vec::new(),
        theta_lift: Vec::new(),
        actions: Vec::new(),
        energies: Vec::new(),
        stats: StepStats::default(),
    };
    let check = |a: &[f64]| -> Result<()> {
        if let Some(r) = radius {
            let norm = a.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            if norm > r {
                return Err(KamError::DomainExceeded { norm, radius: r });
            }
        }
        Ok(())
    };
    check(&action)?;
    let record =
        |traj: &mut Trajectory, i: usize, theta: &[f64], winding: &[f64], action: &[f64]| {
            traj.times.push(i as f64 * h);
            traj.theta_lift
                .push(theta.iter().zip(winding).map(|(t, w)| t + w).collect());
            traj.actions.push(action.to_vec());
            traj.energies.push(f.value(theta, action));
        };
    record(&mut traj, 0, &theta, &winding, &action);
    for i in 1..=steps {
        let its = midpoint_step(f, &mut theta, &mut action, h)?;
        traj.stats.max_iterations = traj.stats.max_iterations.max(its);
        for j in 0..n {
            let w = theta[j].floor();
            if w != 0.0 {
                theta[j] -= w;
                winding[j] += w;
            }
        }
        check(&action)?;
        if i % every == 0 || i == steps {
            record(&mut traj, i, &theta, &winding, &action);
        }
    }
    traj.stats.steps = steps;
    Ok(traj)
}

/// Flow of a spec, with its domain radius enforced; all steps recorded.
pub fn integrate_flow(
    spec: &HamiltonianSpec,
    s0: &PhaseState,
    t_end: f64,
    h: f64,
) -> Result<Trajectory> {
    let c = spec.compile();
    integrate_series(&c, s0, t_end, h, Some(spec.domain_radius), 1)
}

/// CSV with columns `t,theta_1..theta_n,I_1..I_n,energy`; angles mod 1.
pub fn trajectory_csv(traj: &Trajectory) -> String {
    let n = traj.actions.first().map_or(0, |a| a.len());
    let mut out = String::from("t");
    for j in 1..=n {
        let _ = write!(out, ",theta_{j}");
    }
    for j in 1..=n {
        let _ = write!(out, ",I_{j}");
    }
    out.push_str(",energy\n");
    for i in 0..traj.len() {
        out.push_str(&fmt_f64(traj.times[i]));
        for t in &traj.theta_lift[i] {
            out.push(',');
            out.push_str(&fmt_f64(super::wrap_angle(*t)));
        }
        for a in &traj.actions[i] {
            out.push(',');
            out.push_str(&fmt_f64(*a));
        }
        out.push(',');
        out.push_str(&fmt_f64(traj.energies[i]));
        out.push('\n');
    }
    out
}
