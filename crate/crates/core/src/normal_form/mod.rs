//! One-step normal form of `H = omega.I + eps f(theta, I)` (the second
//! scaled form).
//!
//! With `K = Delta(c / eps)` the homological equation
//! `omega . d_theta chi = f_{0<|k|<=K}` is solved exactly, `G = eps chi`,
//! and `H o Phi` is expanded as a Lie series. Writing `g = f_{0<|k|<=K}`,
//! the expansion is reorganised so that no cancellation happens in floating
//! point:
//!
//! `H o Phi = omega.I + eps fbar + eps f_{>K}
//!            + sum_{j>=1} L^j (eps f / j! - eps g / (j+1)!)`.

mod lie;

use std::fmt::Write;

use serde::{Deserialize, Serialize};

pub use lie::LieTransform;

use crate::error::{KamError, Result};
use crate::fourier_taylor::{
    angle_diff, grid_sup, kolmogorov_condition, FourierTaylorSeries, HamiltonianSpec, MatrixSeries,
    ScalingState, TermRecord, TruncationReport,
};
use crate::freq_arith::extended::int_dot;
use crate::freq_arith::record::fmt_f64;
use crate::freq_arith::{delta, ArithmeticProfile, FrequencyVector, RESONANCE_TOL};
use lie::{lie_bounds, lie_terms, term_norm};

pub const DEFAULT_LIE_ORDER: usize = 8;
pub const MAX_LIE_ORDER: usize = 16;
pub const TAIL_TOL: f64 = 1e-12;
/// Stand-in for the smallness threshold on `mu`.
pub const DEFAULT_MU_MAX: f64 = 0.25;

/// `K = Delta(c / eps)`.
pub fn truncation_order(omega: &FrequencyVector, epsilon: f64, c: f64) -> Result<u64> {
    if !(epsilon > 0.0 && epsilon < 1.0) || !(c > 0.0) {
        return Err(KamError::InvalidParameter(format!(
            "need 0 < eps < 1 and c > 0, got eps={epsilon}, c={c}"
        )));
    }
    delta(omega, c / epsilon)
}

/// `chi_{k,m} = f_{k,m} / (2 pi i k.omega)` for `0 < |k|_1 <= K`.
pub fn solve_homological(
    f: &FourierTaylorSeries,
    omega: &FrequencyVector,
    k: u64,
) -> Result<FourierTaylorSeries> {
    if k == 0 {
        return Err(KamError::InvalidParameter("K must be >= 1".into()));
    }
    let n = f.n();
    let mut chi = FourierTaylorSeries::new(n, f.k_max(), f.d_max())?;
    for (idx, &c) in f.iter() {
        let l1 = idx.k_l1();
        if l1 == 0 || l1 > k {
            continue;
        }
        let kv = idx.k_vec(n);
        let d = int_dot(&kv, omega.components()).hi();
        if d.abs() < RESONANCE_TOL * l1 as f64 {
            return Err(KamError::ResonanceDetected {
                k: kv,
                divisor: d.abs(),
            });
        }
        chi.add_index(
            *idx,
            c / num_complex::Complex64::new(0.0, 2.0 * std::f64::consts::PI * d),
        );
    }
    Ok(chi)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalFormOptions {
    pub lie_order: usize,
    pub max_lie_order: usize,
    pub mu_max: f64,
    pub tail_tol: f64,
    /// Coefficients below `prune_rel * |eps f|` are dropped (and counted).
    pub prune_rel: f64,
}

impl Default for NormalFormOptions {
    fn default() -> Self {
        Self {
            lie_order: DEFAULT_LIE_ORDER,
            max_lie_order: MAX_LIE_ORDER,
            mu_max: DEFAULT_MU_MAX,
            tail_tol: TAIL_TOL,
            prune_rel: 1e-18,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalFormMeasures {
    /// Grid sup of `|Phi - Id|` over `T^n x B_1`.
    pub phi_dist: f64,
    /// Grid sup of `ftilde` over `T^n x B_1`.
    pub ftilde_norm: f64,
    /// Grid sup of `H o Phi - omega.I - eps fbar` over `T^n x B_1`.
    pub remainder_norm: f64,
    pub discarded_mass: f64,
    pub retained_mass: f64,
    /// Norm of the last Lie term over the first.
    pub tail_ratio: f64,
    /// Largest `|I|` reached by `Phi(T^n x B_1)`.
    pub image_radius: f64,
}

/// Output of [`one_step_normal_form`].
#[derive(Debug, Clone)]
pub struct NormalFormResult {
    pub epsilon: f64,
    pub mu: f64,
    pub k_used: u64,
    pub lie_order: usize,
    /// `H o Phi` in the third scaled form (time `t -> eps t`).
    pub h_tilde: HamiltonianSpec,
    /// `H o Phi` in the second scaled form.
    pub h_tilde_ham2: FourierTaylorSeries,
    pub chi: FourierTaylorSeries,
    pub phi: LieTransform,
    pub fbar: FourierTaylorSeries,
    pub ftilde: FourierTaylorSeries,
    /// Part of `ftilde` coming from the modes `|k|_1 > K` of `f`.
    pub ftilde_truncation: FourierTaylorSeries,
    /// Part of `ftilde` coming from Lie-series orders `>= 2` in `eps`.
    pub ftilde_lie: FourierTaylorSeries,
    pub measured: NormalFormMeasures,
}

pub fn one_step_normal_form(
    h: &HamiltonianSpec,
    profile: &ArithmeticProfile,
    lie_order: usize,
) -> Result<NormalFormResult> {
    let opts = NormalFormOptions {
        lie_order,
        max_lie_order: MAX_LIE_ORDER.max(lie_order),
        ..Default::default()
    };
    one_step_normal_form_with(h, profile, &opts)
}

pub fn one_step_normal_form_with(
    h: &HamiltonianSpec,
    profile: &ArithmeticProfile,
    opts: &NormalFormOptions,
) -> Result<NormalFormResult> {
    let eps = match h.state {
        ScalingState::ScaledHam2 { epsilon } => epsilon,
        other => {
            return Err(KamError::StateMismatch {
                direction: "normal_form".into(),
                state: other.to_string(),
            });
        }
    };
    if (eps - profile.epsilon).abs() > 1e-12 * eps {
        return Err(KamError::InvalidParameter(format!(
            "profile is for eps={:e}, spec was scaled with eps={eps:e}",
            profile.epsilon
        )));
    }
    if profile.mu > opts.mu_max {
        return Err(KamError::MuTooLarge {
            mu: profile.mu,
            threshold: opts.mu_max,
        });
    }
    if opts.lie_order == 0 || opts.max_lie_order < opts.lie_order {
        return Err(KamError::InvalidParameter(
            "need 1 <= lie_order <= max_lie_order".into(),
        ));
    }
    if !h.kolmogorov {
        return Err(KamError::InvalidParameter(
            "normal form requires the Kolmogorov flag".into(),
        ));
    }
    if h.domain_radius < 2.0 {
        return Err(KamError::DomainExceeded {
            norm: 2.0,
            radius: h.domain_radius,
        });
    }
    let n = h.n();
    let omega_f: Vec<f64> = h.omega.to_f64();
    let k_used = profile.delta;

    // eps f = eps A I.I + eps^2 R as stored in the second form.
    let eps_f = h.nonlinear_series();
    let f = eps_f.scaled(1.0 / eps);
    let fbar = f.average();
    let g = f.filter(|i| i.k_l1() > 0 && i.k_l1() <= k_used);
    let f_high = f.filter(|i| i.k_l1() > k_used);
    let chi = solve_homological(&f, &h.omega, k_used)?;
    let gen = chi.scaled(eps);

    let prune = opts.prune_rel * eps_f.coefficient_mass();
    let mut report = TruncationReport::default();
    let bounds = lie_bounds(&eps_f, &gen, opts.max_lie_order);
    let (eps_f_b, _) = eps_f.retruncate(bounds.0, bounds.1);
    let (eps_g_b, _) = g.scaled(eps).retruncate(bounds.0, bounds.1);

    // Terms L^j(eps f)/j! - L^j(eps g)/(j+1)!, extended until the tail is small.
    let mut order = opts.lie_order;
    let (lie_part, tail_ratio) = loop {
        let mut r = TruncationReport::default();
        let a = lie_terms(&eps_f_b, &gen, order, 0, bounds, prune, &mut r);
        let b = lie_terms(&eps_g_b, &gen, order, 1, bounds, prune, &mut r);
        let terms: Vec<FourierTaylorSeries> =
            a.iter().zip(&b).map(|(x, y)| x.sub_series(y)).collect();
        let lead = term_norm(&terms[0]);
        let tail = term_norm(terms.last().unwrap());
        let ratio = if lead == 0.0 { 0.0 } else { tail / lead };
        if ratio <= opts.tail_tol {
            report.merge(r);
            let mut sum = FourierTaylorSeries::new(n, bounds.0, bounds.1)?;
            for t in &terms {
                sum = sum.add_series(t);
            }
            break (sum, ratio);
        }
        if order >= opts.max_lie_order {
            return Err(KamError::TailNotConverged { order, tail: ratio });
        }
        order = (order * 2).min(opts.max_lie_order);
    };

    let mu = profile.mu;
    let scale = 1.0 / (eps * mu);
    let ftilde_truncation = f_high.scaled(eps * scale);
    let ftilde_lie = lie_part.scaled(scale);
    let ftilde = ftilde_truncation.add_series(&ftilde_lie);
    let remainder = f_high.scaled(eps).add_series(&lie_part);
    let lin = FourierTaylorSeries::linear(&omega_f, bounds.0, bounds.1)?;
    let h_tilde_ham2 = lin.add_series(&fbar.scaled(eps)).add_series(&remainder);

    let phi = LieTransform::new(&gen, order);
    let mut phi_dist: f64 = 0.0;
    let mut image_radius: f64 = 0.0;
    for (j, d) in phi.displacements(false).iter().enumerate() {
        phi_dist = phi_dist.max(grid_sup(d, 1.0));
        if j >= n {
            let mut coord = d.clone();
            let mut e = vec![0u32; n];
            e[j - n] = 1;
            coord.add(&vec![0; n], &e, num_complex::Complex64::new(1.0, 0.0));
            image_radius = image_radius.max(grid_sup(&coord, 1.0));
        }
    }
    if image_radius > 2.0 {
        return Err(KamError::DomainExceeded {
            norm: image_radius,
            radius: 2.0,
        });
    }
    let remainder_norm = grid_sup(&remainder, 1.0);
    let measured = NormalFormMeasures {
        phi_dist,
        ftilde_norm: grid_sup(&ftilde, 1.0),
        remainder_norm,
        discarded_mass: report.discarded_mass,
        retained_mass: h_tilde_ham2.coefficient_mass(),
        tail_ratio,
        image_radius,
    };

    // Third form: divide by eps; A_0 from the averaged quadratic part.
    let a0_eps = h.a.mean();
    kolmogorov_condition(&a0_eps)?;
    let a0 = a0_eps.map(|x| x / eps);
    let quad = MatrixSeries::constant(&a0_eps).quadratic_series(bounds.0, bounds.1);
    let r3 = fbar
        .scaled(eps)
        .sub_series(&quad)
        .add_series(&remainder)
        .scaled(1.0 / eps);
    let h_tilde = HamiltonianSpec {
        omega: h.omega.clone(),
        frequency_scale: 1.0 / eps,
        a: MatrixSeries::constant(&a0),
        r: r3,
        domain_radius: 1.0,
        state: ScalingState::ScaledHam3 { epsilon: eps },
        kolmogorov: true,
    };
    h_tilde.validate()?;

    Ok(NormalFormResult {
        epsilon: eps,
        mu,
        k_used,
        lie_order: order,
        h_tilde,
        h_tilde_ham2,
        chi,
        phi,
        fbar,
        ftilde,
        ftilde_truncation,
        ftilde_lie,
        measured,
    })
}

/// Configured constants for [`verify_estimates`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimateBounds {
    pub c2: f64,
    pub c3: f64,
}

impl Default for EstimateBounds {
    fn default() -> Self {
        Self {
            c2: 10.0,
            c3: 100.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub epsilon: f64,
    pub mu: f64,
    pub phi_ratio: f64,
    pub ftilde_norm: f64,
    pub remainder_ratio: f64,
    pub truncation_ok: bool,
    pub passed: bool,
}

/// `|Phi - Id| / mu`, `|ftilde|` and `remainder / (eps mu)` against the
/// configured constants; the truncation policy requires the discarded
/// mass to stay below `1e-3` of the retained mass.
pub fn verify_estimates(result: &NormalFormResult, bounds: &EstimateBounds) -> EstimateReport {
    let m = &result.measured;
    let phi_ratio = m.phi_dist / result.mu;
    let remainder_ratio = m.remainder_norm / (result.epsilon * result.mu);
    let truncation_ok = m.discarded_mass <= 1e-3 * m.retained_mass;
    EstimateReport {
        epsilon: result.epsilon,
        mu: result.mu,
        phi_ratio,
        ftilde_norm: m.ftilde_norm,
        remainder_ratio,
        truncation_ok,
        passed: truncation_ok && phi_ratio <= bounds.c2 && m.ftilde_norm <= bounds.c3,
    }
}

/// Structured-text export of a normal form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalFormRecord {
    pub epsilon: f64,
    pub mu: f64,
    pub k_used: u64,
    pub lie_order: usize,
    pub measured: NormalFormMeasures,
    pub chi: Vec<TermRecord>,
    pub fbar: Vec<TermRecord>,
    pub ftilde: Vec<TermRecord>,
}

impl From<&NormalFormResult> for NormalFormRecord {
    fn from(r: &NormalFormResult) -> Self {
        Self {
            epsilon: r.epsilon,
            mu: r.mu,
            k_used: r.k_used,
            lie_order: r.lie_order,
            measured: r.measured,
            chi: r.chi.to_records(),
            fbar: r.fbar.to_records(),
            ftilde: r.ftilde.to_records(),
        }
    }
}

/// `Phi` on a grid of `T^n x B_1`: `angle_pts` per angle, `action_pts`
/// per action axis on `[-1, 1]`. Columns
/// `theta_in_*,I_in_*,theta_out_*,I_out_*`; output angles mod 1.
pub fn phi_grid_csv(result: &NormalFormResult, angle_pts: usize, action_pts: usize) -> String {
    let n = result.h_tilde.n();
    let mut out = String::new();
    let cols: Vec<String> = ["theta_in", "I_in", "theta_out", "I_out"]
        .iter()
        .flat_map(|p| (1..=n).map(move |j| format!("{p}_{j}")))
        .collect();
    out.push_str(&cols.join(","));
    out.push('\n');
    let angle_total = angle_pts.pow(n as u32);
    let action_total = action_pts.pow(n as u32);
    let node = |i: usize| {
        if action_pts == 1 {
            0.0
        } else {
            -1.0 + 2.0 * i as f64 / (action_pts - 1) as f64
        }
    };
    for a in 0..action_total {
        let action: Vec<f64> = (0..n)
            .map(|j| node(a / action_pts.pow(j as u32) % action_pts))
            .collect();
        for t in 0..angle_total {
            let theta: Vec<f64> = (0..n)
                .map(|j| (t / angle_pts.pow(j as u32) % angle_pts) as f64 / angle_pts as f64)
                .collect();
            let (to, ao) = result.phi.apply(&theta, &action, false);
            let row: Vec<String> = theta
                .iter()
                .chain(&action)
                .copied()
                .chain(to.iter().map(|&x| crate::fourier_taylor::wrap_angle(x)))
                .chain(ao.iter().copied())
                .map(fmt_f64)
                .collect();
            let _ = writeln!(out, "{}", row.join(","));
        }
    }
    out
}

/// Sup over a grid of `|Phi^-1(Phi(x)) - x|`, a consistency check of the
/// two truncated Lie series.
pub fn inverse_defect(result: &NormalFormResult, angle_pts: usize, action_pts: usize) -> f64 {
    let n = result.h_tilde.n();
    let node = |i: usize| {
        if action_pts == 1 {
            0.0
        } else {
            -1.0 + 2.0 * i as f64 / (action_pts - 1) as f64
        }
    };
    let mut worst: f64 = 0.0;
    for a in 0..action_pts.pow(n as u32) {
        let action: Vec<f64> = (0..n)
            .map(|j| node(a / action_pts.pow(j as u32) % action_pts))
            .collect();
        for t in 0..angle_pts.pow(n as u32) {
            let theta: Vec<f64> = (0..n)
                .map(|j| (t / angle_pts.pow(j as u32) % angle_pts) as f64 / angle_pts as f64)
                .collect();
            let (t1, a1) = result.phi.apply(&theta, &action, false);
            let (t2, a2) = result.phi.apply(&t1, &a1, true);
            for j in 0..n {
                worst = worst
                    .max(angle_diff(t2[j], theta[j]).abs())
                    .max((a2[j] - action[j]).abs());
            }
        }
    }
    worst
}
