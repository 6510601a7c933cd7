//! Sampled estimates of the complement of the Kolmogorov set and of its
//! scaling with `mu(eps)`.
//!
//! For each `eps` the actions `I0` are drawn from a Halton sequence in
//! `B_1 = (-1, 1)^n`. A sample is kept if it lies at least `b sqrt(mu)`
//! inside the boundary and its frequency `Omega = eps^-1 omega + grad fbar(I0)`
//! passes the `(gamma, tau)` certification with `gamma = a sqrt(mu)`, both
//! in the scaled time of the third form (so `omega + eps grad fbar` is
//! `(eps gamma, tau)`-Diophantine in the original time). Kept samples are
//! handed to the torus solver. Everything else, including Newton failures,
//! counts toward the complement.

use std::fmt::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{KamError, Result};
use crate::families;
use crate::fourier_taylor::{HamiltonianFile, HamiltonianSpec, RescaleDirection};
use crate::freq_arith::record::fmt_f64;
use crate::freq_arith::{mu_nu, ArithmeticProfile, Gevrey};
use crate::normal_form::{one_step_normal_form_with, NormalFormOptions, NormalFormResult};
use crate::torus_solver::{solve_torus_with, TargetFrequency, TorusOptions, CERT_FACTOR};

/// Where the plan's Hamiltonian comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SpecRef {
    /// Path to a spec file, relative to the plan file.
    Path(PathBuf),
    /// A built-in family.
    Family {
        family: FamilyName,
        b: f64,
    },
    Inline(Box<HamiltonianFile>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyName {
    SingleHarmonic,
}

/// `points` values from `from` to `to`, equally spaced in `log10`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonGrid {
    pub from: f64,
    pub to: f64,
    pub points: usize,
}

impl EpsilonGrid {
    pub fn values(&self) -> Vec<f64> {
        let (a, b) = (self.from.log10(), self.to.log10());
        (0..self.points)
            .map(|i| {
                let e = if self.points == 1 {
                    a
                } else {
                    a + (b - a) * i as f64 / (self.points - 1) as f64
                };
                let r = e.round();
                if (e - r).abs() < 1e-9 {
                    // Exact decades, so that 1e-3 is the same double everywhere.
                    format!("1e{}", r as i64).parse().unwrap()
                } else {
                    10f64.powf(e)
                }
            })
            .collect()
    }
}

fn default_samples() -> usize {
    512
}
fn default_gamma_coeff() -> f64 {
    0.5
}
fn default_tau() -> f64 {
    1.5
}
fn default_margin() -> f64 {
    0.25
}
fn default_c() -> f64 {
    1.0
}
fn default_mu_max() -> f64 {
    0.25
}
fn default_sqrt_mu_max() -> f64 {
    0.5
}
fn default_grid() -> usize {
    8
}
fn default_tol() -> f64 {
    1e-10
}
fn default_max_iter() -> usize {
    12
}
fn default_lie_order() -> usize {
    crate::normal_form::DEFAULT_LIE_ORDER
}

/// Configuration of a sweep. Defaults: 512 samples for n = 2 (scaled by
/// `2^(n-2)` when `samples` is omitted), `a = 0.5`, `tau = 1.5`, `b = 0.25`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanPlan {
    pub spec: SpecRef,
    pub epsilon: EpsilonGrid,
    #[serde(default)]
    pub samples: Option<usize>,
    /// `a` in `gamma = a sqrt(mu)`.
    #[serde(default = "default_gamma_coeff")]
    pub gamma_coeff: f64,
    #[serde(default = "default_tau")]
    pub tau: f64,
    /// `b` in the boundary margin `b sqrt(mu)`.
    #[serde(default = "default_margin")]
    pub margin_coeff: f64,
    /// Constant in the truncation order `Delta(c / eps)`.
    #[serde(default = "default_c")]
    pub c: f64,
    /// Gate `mu(eps) <= mu_max`.
    #[serde(default = "default_mu_max")]
    pub mu_max: f64,
    /// Gate `sqrt(mu(eps)) <= sqrt_mu_max`.
    #[serde(default = "default_sqrt_mu_max")]
    pub sqrt_mu_max: f64,
    #[serde(default = "default_grid")]
    pub grid: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_lie_order")]
    pub lie_order: usize,
    #[serde(default)]
    pub gevrey: Option<Gevrey>,
    /// Report measured wall time; off by default so reports are reproducible.
    #[serde(default)]
    pub record_time: bool,
}

impl ScanPlan {
    /// The acceptance sweep: single-harmonic family, `eps = 10^-2 .. 10^-7`.
    pub fn acceptance(samples: usize) -> Self {
        Self {
            spec: SpecRef::Family {
                family: FamilyName::SingleHarmonic,
                b: 0.5,
            },
            epsilon: EpsilonGrid {
                from: 1e-2,
                to: 1e-7,
                points: 6,
            },
            samples: Some(samples),
            gamma_coeff: default_gamma_coeff(),
            tau: default_tau(),
            margin_coeff: default_margin(),
            c: default_c(),
            mu_max: default_mu_max(),
            sqrt_mu_max: default_sqrt_mu_max(),
            grid: default_grid(),
            tol: default_tol(),
            max_iter: default_max_iter(),
            lie_order: default_lie_order(),
            gevrey: Some(Gevrey {
                alpha: 1.0,
                c_bar: 1.0,
            }),
            record_time: false,
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        let bad = |m: String| Err(KamError::InvalidParameter(m));
        if !(self.tau > (n as f64 - 1.0)) {
            return bad(format!("tau must exceed n-1 = {}, got {}", n - 1, self.tau));
        }
        if !(self.gamma_coeff > 0.0 && self.margin_coeff > 0.0) {
            return bad("gamma and margin coefficients must be positive".into());
        }
        if self.epsilon.points == 0 || !(self.epsilon.from > 0.0 && self.epsilon.to > 0.0) {
            return bad("epsilon grid must be non-empty and positive".into());
        }
        if self.sample_count(n) == 0 {
            return bad("need at least one sample".into());
        }
        Ok(())
    }

    pub fn sample_count(&self, n: usize) -> usize {
        self.samples
            .unwrap_or(default_samples() << n.saturating_sub(2))
    }

    /// Loads the physical Hamiltonian; relative paths are resolved against `base`.
    pub fn load_spec(&self, base: Option<&Path>) -> Result<HamiltonianSpec> {
        match &self.spec {
            SpecRef::Family {
                family: FamilyName::SingleHarmonic,
                b,
            } => families::single_harmonic(*b),
            SpecRef::Inline(f) => f.to_spec(),
            SpecRef::Path(p) => {
                let path = match base {
                    Some(b) if p.is_relative() => b.join(p),
                    _ => p.clone(),
                };
                let text = std::fs::read_to_string(&path)?;
                let file: HamiltonianFile = serde_json::from_str(&text)
                    .map_err(|e| KamError::Parse(format!("{}: {e}", path.display())))?;
                file.to_spec()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleClass {
    /// Within `b sqrt(mu)` of the boundary.
    Margin,
    /// Frequency failed the Diophantine certification.
    Rejected,
    NewtonFailed,
    Converged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleOutcome {
    pub i0: Vec<f64>,
    pub class: SampleClass,
    /// Certification result, if the sample got that far.
    pub certified: Option<bool>,
    /// Whether the torus solver was called.
    pub attempted: bool,
    /// Error kind of a failed solve.
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureReport {
    pub epsilon: f64,
    pub mu: f64,
    pub nu: Option<f64>,
    /// `gamma = a sqrt(mu)`, in the scaled time of the third form.
    pub gamma_used: f64,
    /// `eps * gamma`, the same bound in the original time.
    pub gamma_unscaled: f64,
    pub tau_used: f64,
    pub samples: usize,
    pub selected: usize,
    pub converged: usize,
    pub margin_excluded: usize,
    pub newton_failed: usize,
    pub complement_fraction: f64,
    pub wall_time: f64,
}

impl MeasureReport {
    pub fn selection_rejected(&self) -> usize {
        self.samples - self.selected
    }
}

/// Radical inverse of `i` in base `b`.
fn radical_inverse(mut i: u64, b: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= b as f64;
        r += f * (i % b) as f64;
        i /= b;
    }
    r
}

/// Halton points `1..=count` mapped to `(-1, 1)^n`.
pub fn halton_actions(n: usize, count: usize) -> Vec<Vec<f64>> {
    const PRIMES: [u64; 4] = [2, 3, 5, 7];
    (1..=count as u64)
        .map(|i| {
            (0..n)
                .map(|j| 2.0 * radical_inverse(i, PRIMES[j]) - 1.0)
                .collect()
        })
        .collect()
}

/// Normal form and gates for one `eps`.
pub fn prepare_epsilon(
    plan: &ScanPlan,
    spec: &HamiltonianSpec,
    epsilon: f64,
) -> Result<(ArithmeticProfile, NormalFormResult)> {
    let profile = mu_nu(&spec.omega, epsilon, plan.c, plan.gevrey)?;
    if profile.mu > plan.mu_max || profile.mu.sqrt() > plan.sqrt_mu_max {
        return Err(KamError::GateFailed(format!(
            "eps={epsilon:e}: mu={} (limit {}), sqrt(mu)={} (limit {})",
            profile.mu,
            plan.mu_max,
            profile.mu.sqrt(),
            plan.sqrt_mu_max
        )));
    }
    let scaled = spec.rescale(RescaleDirection::Scale1, epsilon)?;
    let opts = NormalFormOptions {
        lie_order: plan.lie_order,
        ..Default::default()
    };
    let nf = one_step_normal_form_with(&scaled, &profile, &opts)?;
    Ok((profile, nf))
}

pub fn scan_epsilon(
    plan: &ScanPlan,
    spec: &HamiltonianSpec,
    epsilon: f64,
) -> Result<MeasureReport> {
    scan_epsilon_detailed(plan, spec, epsilon).map(|(r, _)| r)
}

/// Like [`scan_epsilon`], also returning the per-sample outcomes in
/// sample order.
pub fn scan_epsilon_detailed(
    plan: &ScanPlan,
    spec: &HamiltonianSpec,
    epsilon: f64,
) -> Result<(MeasureReport, Vec<SampleOutcome>)> {
    let n = spec.n();
    plan.validate(n)?;
    let start = Instant::now();
    let (profile, nf) = prepare_epsilon(plan, spec, epsilon)?;
    let mu = profile.mu;
    let gamma = plan.gamma_coeff * mu.sqrt();
    let limit = 1.0 - plan.margin_coeff * mu.sqrt();
    let opts = TorusOptions {
        grid: plan.grid,
        tol: plan.tol,
        max_iter: plan.max_iter,
    };
    let q_max = CERT_FACTOR * plan.grid as u64;

    let points = halton_actions(n, plan.sample_count(n));
    let outcomes: Vec<Result<SampleOutcome>> = points
        .into_par_iter()
        .map(|i0| {
            let mut out = SampleOutcome {
                i0,
                class: SampleClass::Margin,
                certified: None,
                attempted: false,
                failure: None,
            };
            if out.i0.iter().any(|x| x.abs() > limit) {
                return Ok(out);
            }
            let mut target = TargetFrequency::from_normal_form(&nf, &out.i0)?;
            let passed = target.certify(gamma, plan.tau, q_max)?.passed;
            out.certified = Some(passed);
            if !passed {
                out.class = SampleClass::Rejected;
                return Ok(out);
            }
            out.attempted = true;
            match solve_torus_with(&nf.h_tilde, &target, &opts, None) {
                Ok(_) => out.class = SampleClass::Converged,
                Err(
                    e @ (KamError::NonConvergence { .. }
                    | KamError::SmallDivisorBreakdown { .. }
                    | KamError::DomainExceeded { .. }
                    | KamError::KolmogorovDegenerate { .. }),
                ) => {
                    out.class = SampleClass::NewtonFailed;
                    out.failure = Some(e.kind().to_string());
                }
                Err(e) => return Err(e),
            }
            Ok(out)
        })
        .collect();
    let outcomes: Vec<SampleOutcome> = outcomes.into_iter().collect::<Result<_>>()?;

    let count = |c: SampleClass| outcomes.iter().filter(|o| o.class == c).count();
    let samples = outcomes.len();
    let converged = count(SampleClass::Converged);
    let newton_failed = count(SampleClass::NewtonFailed);
    let report = MeasureReport {
        epsilon,
        mu,
        nu: profile.nu,
        gamma_used: gamma,
        gamma_unscaled: epsilon * gamma,
        tau_used: plan.tau,
        samples,
        selected: converged + newton_failed,
        converged,
        margin_excluded: count(SampleClass::Margin),
        newton_failed,
        complement_fraction: (samples - converged) as f64 / samples as f64,
        wall_time: if plan.record_time {
            start.elapsed().as_secs_f64()
        } else {
            0.0
        },
    };
    Ok((report, outcomes))
}

/// Least-squares fit `log y = slope log x + intercept`.
pub fn fit_power_law(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(KamError::InsufficientSpan(format!(
            "need two or more points, got {}",
            x.len()
        )));
    }
    if x.iter().chain(y).any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(KamError::InsufficientSpan(
            "power-law fit needs positive finite data".into(),
        ));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let m = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / m, ly.iter().sum::<f64>() / m);
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    if sxx == 0.0 {
        return Err(KamError::InsufficientSpan("all abscissae equal".into()));
    }
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

/// Fitted exponent of `complement_fraction ~ mu^exponent` and the bracket
/// `c_low <= complement_fraction / sqrt(mu) <= c_high` over the sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub exponent: f64,
    pub c_low: f64,
    pub c_high: f64,
    pub points: usize,
}

pub const MIN_FIT_POINTS: usize = 4;
pub const MIN_FIT_DECADES: f64 = 2.0;

pub fn fit_scaling(reports: &[MeasureReport]) -> Result<ScalingFit> {
    if reports.len() < MIN_FIT_POINTS {
        return Err(KamError::InsufficientSpan(format!(
            "{} reports, need {MIN_FIT_POINTS}",
            reports.len()
        )));
    }
    let mus: Vec<f64> = reports.iter().map(|r| r.mu).collect();
    let lo = mus.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = mus.iter().cloned().fold(0.0, f64::max);
    if !(hi / lo >= 10f64.powf(MIN_FIT_DECADES)) {
        return Err(KamError::InsufficientSpan(format!(
            "mu spans {:.3} decades",
            (hi / lo).log10()
        )));
    }
    let cf: Vec<f64> = reports.iter().map(|r| r.complement_fraction).collect();
    let (exponent, _) = fit_power_law(&mus, &cf)?;
    let ratios: Vec<f64> = reports
        .iter()
        .map(|r| r.complement_fraction / r.mu.sqrt())
        .collect();
    Ok(ScalingFit {
        exponent,
        c_low: ratios.iter().cloned().fold(f64::INFINITY, f64::min),
        c_high: ratios.iter().cloned().fold(0.0, f64::max),
        points: reports.len(),
    })
}

/// Same fit against `eps` instead of `mu`.
pub fn fit_against_epsilon(reports: &[MeasureReport]) -> Result<f64> {
    let x: Vec<f64> = reports.iter().map(|r| r.epsilon).collect();
    let y: Vec<f64> = reports.iter().map(|r| r.complement_fraction).collect();
    Ok(fit_power_law(&x, &y)?.0)
}

/// Gevrey variant of a report: `sqrt(mu)` replaced by `sqrt(nu)`.
///
/// `nu` underflows quickly, so the normalised quantities are given in
/// `log10` and computed from `log10 nu = -c_bar mu^(-1/alpha) / ln 10`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GevreyRow {
    pub epsilon: f64,
    pub mu: f64,
    pub nu: f64,
    pub log10_nu: f64,
    pub complement_fraction: f64,
    /// `complement_fraction / sqrt(mu)`.
    pub normalized_mu: f64,
    /// `log10(complement_fraction / sqrt(nu))`.
    pub log10_normalized_nu: f64,
    /// `log10(c_high sqrt(nu))`: the complement the Gevrey bound predicts.
    pub log10_predicted: f64,
    pub nu_below_mu_squared: bool,
}

pub fn gevrey_rows(reports: &[MeasureReport], gevrey: Gevrey, c_high: f64) -> Vec<GevreyRow> {
    reports
        .iter()
        .map(|r| {
            let log10_nu = -gevrey.c_bar * r.mu.powf(-1.0 / gevrey.alpha) / std::f64::consts::LN_10;
            let nu = crate::freq_arith::nu_of_mu(r.mu, gevrey);
            GevreyRow {
                epsilon: r.epsilon,
                mu: r.mu,
                nu,
                log10_nu,
                complement_fraction: r.complement_fraction,
                normalized_mu: r.complement_fraction / r.mu.sqrt(),
                log10_normalized_nu: r.complement_fraction.log10() - 0.5 * log10_nu,
                log10_predicted: c_high.log10() + 0.5 * log10_nu,
                nu_below_mu_squared: log10_nu <= 2.0 * r.mu.log10() && nu <= r.mu * r.mu,
            }
        })
        .collect()
}

/// Output of a whole sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanResult {
    pub reports: Vec<MeasureReport>,
    pub fit: std::result::Result<ScalingFit, String>,
    pub gevrey: Option<Vec<GevreyRow>>,
}

pub fn run_scan(plan: &ScanPlan, spec: &HamiltonianSpec) -> Result<ScanResult> {
    let reports = plan
        .epsilon
        .values()
        .iter()
        .map(|&e| scan_epsilon(plan, spec, e))
        .collect::<Result<Vec<_>>>()?;
    let fit = fit_scaling(&reports).map_err(|e| e.to_string());
    let gevrey = match (plan.gevrey, &fit) {
        (Some(g), Ok(f)) => Some(gevrey_rows(&reports, g, f.c_high)),
        _ => None,
    };
    Ok(ScanResult {
        reports,
        fit,
        gevrey,
    })
}

pub fn report_csv(reports: &[MeasureReport]) -> String {
    let mut out =
        String::from("eps,mu,gamma,tau,samples,selected,converged,complement_fraction,wall_time\n");
    for r in reports {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            fmt_f64(r.epsilon),
            fmt_f64(r.mu),
            fmt_f64(r.gamma_used),
            fmt_f64(r.tau_used),
            r.samples,
            r.selected,
            r.converged,
            fmt_f64(r.complement_fraction),
            fmt_f64(r.wall_time)
        );
    }
    out
}

pub fn gevrey_csv(rows: &[GevreyRow]) -> String {
    let mut out = String::from(
        "eps,mu,nu,log10_nu,complement_fraction,normalized_mu,log10_normalized_nu,log10_predicted,nu_below_mu_squared\n",
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            fmt_f64(r.epsilon),
            fmt_f64(r.mu),
            fmt_f64(r.nu),
            fmt_f64(r.log10_nu),
            fmt_f64(r.complement_fraction),
            fmt_f64(r.normalized_mu),
            fmt_f64(r.log10_normalized_nu),
            fmt_f64(r.log10_predicted),
            r.nu_below_mu_squared
        );
    }
    out
}
