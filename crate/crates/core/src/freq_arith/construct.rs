//! Test frequencies on both sides of the Diophantine/Liouville divide.

use serde::{Deserialize, Serialize};
use twofloat::TwoFloat;

use super::continued::MAX_EXACT;
use super::{divisor, psi, FrequencyKind, FrequencyVector, DEFAULT_Q_CHECK, RESONANCE_TOL};
use crate::error::{KamError, Result};

/// Growth prescribed for `Psi` along a Liouville construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum LiouvilleSchedule {
    /// `Psi(Q_j) >= Q_j^p`.
    Power { p: f64 },
    /// `Psi(Q_j) >= base^Q_j`.
    Exponential { base: f64 },
}

impl LiouvilleSchedule {
    pub fn bound(&self, q: u64) -> f64 {
        match *self {
            LiouvilleSchedule::Power { p } => (q as f64).powf(p),
            LiouvilleSchedule::Exponential { base } => base.powf(q as f64),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TestFrequencyKind {
    Golden,
    Diophantine {
        tau: f64,
    },
    Liouville {
        schedule: LiouvilleSchedule,
        first_quotient: u64,
    },
    /// `(1, sum_j 10^-j!)` for n = 2.
    LiouvilleConstant,
    Explicit(Vec<TwoFloat>),
}

/// Margin kept above the resonance floor when placing Liouville scales.
const FLOOR_SAFETY: f64 = 100.0;
/// Scales up to this size are re-verified by a full `psi` walk.
const VERIFY_WITH_PSI: u64 = 2_000_000;

fn dd(x: f64) -> TwoFloat {
    TwoFloat::from(x)
}

fn golden_ratio_inverse() -> TwoFloat {
    (dd(5.0).sqrt() - dd(1.0)) * dd(0.5)
}

pub fn make_test_frequency(kind: TestFrequencyKind, n: usize) -> Result<FrequencyVector> {
    if n < 2 {
        return Err(KamError::InvalidParameter(format!(
            "n must be >= 2, got {n}"
        )));
    }
    let omega = match kind {
        TestFrequencyKind::Golden => {
            if n != 2 {
                return Err(KamError::ConstructionFailed(
                    "golden frequency is defined for n = 2; use diophantine for n >= 3".into(),
                ));
            }
            FrequencyVector::from_components(
                &[dd(1.0), golden_ratio_inverse()],
                FrequencyKind::Golden,
            )?
            .with_symbolic("(1, (sqrt(5)-1)/2)")
        }
        TestFrequencyKind::Diophantine { tau } => diophantine_vector(n, tau)?,
        TestFrequencyKind::Liouville {
            schedule,
            first_quotient,
        } => {
            if n == 2 {
                continued_fraction_liouville(schedule, first_quotient)?
            } else {
                lacunary_liouville(n, schedule)?
            }
        }
        TestFrequencyKind::LiouvilleConstant => {
            if n != 2 {
                return Err(KamError::ConstructionFailed(
                    "the Liouville constant vector has n = 2".into(),
                ));
            }
            // 10^-1 + 10^-2 + 10^-6 + 10^-24; 10^-120 is below double-double resolution.
            let l = [1, 2, 6, 24]
                .iter()
                .fold(dd(0.0), |acc, &e| acc + super::extended::ten_pow(-e));
            FrequencyVector::from_components(&[dd(1.0), l], FrequencyKind::LiouvilleConstant)?
                .with_symbolic("(1, sum_j 10^-j!)")
        }
        TestFrequencyKind::Explicit(values) => {
            if values.len() != n {
                return Err(KamError::InvalidParameter(format!(
                    "explicit vector has {} components, expected {n}",
                    values.len()
                )));
            }
            FrequencyVector::from_components(&values, FrequencyKind::Explicit)?
        }
    };
    omega
        .check_nonresonant(DEFAULT_Q_CHECK)
        .map_err(|e| match e {
            KamError::ResonanceDetected { k, divisor } => KamError::ConstructionFailed(format!(
                "vector is resonant at k = {k:?} (divisor {divisor:e})"
            )),
            other => other,
        })?;
    let mut omega = omega;
    omega
        .metadata
        .insert("q_check".into(), DEFAULT_Q_CHECK.to_string());
    Ok(omega)
}

/// `(1, 2^(1/n), ..., 2^((n-1)/n))`: a basis of a degree-n number field,
/// Diophantine with exponent n-1 (golden mean for n = 2).
fn diophantine_vector(n: usize, tau: f64) -> Result<FrequencyVector> {
    if tau < (n - 1) as f64 {
        return Err(KamError::InvalidParameter(format!(
            "tau must be >= n-1 = {}, got {tau}",
            n - 1
        )));
    }
    if n == 2 {
        let mut w = FrequencyVector::from_components(
            &[dd(1.0), golden_ratio_inverse()],
            FrequencyKind::Diophantine { tau },
        )?
        .with_symbolic("(1, (sqrt(5)-1)/2)");
        w.metadata
            .insert("construction".into(), "golden mean".into());
        return Ok(w);
    }
    let root = super::extended::dd_root(dd(2.0), n as u32);
    let mut comps = vec![dd(1.0)];
    for _ in 1..n {
        let last = *comps.last().unwrap();
        comps.push(last * root);
    }
    let mut w = FrequencyVector::from_components(&comps, FrequencyKind::Diophantine { tau })?
        .with_symbolic(format!("powers of 2^(1/{n})"));
    w.metadata
        .insert("construction".into(), "algebraic basis".into());
    Ok(w)
}

/// `alpha = [0; a_1, ..., a_J, 1, 1, ...]` with `a_{j+1}` chosen so that
/// `Psi(Q_j) >= schedule(Q_j)` at `Q_j = p_j + q_j`.
///
/// The quotients are kept exactly, so the scales are limited by `f64`
/// range rather than by double-double resolution.
fn continued_fraction_liouville(
    schedule: LiouvilleSchedule,
    first_quotient: u64,
) -> Result<FrequencyVector> {
    if first_quotient < 1 {
        return Err(KamError::InvalidParameter(
            "first partial quotient must be >= 1".into(),
        ));
    }
    let mut quotients: Vec<f64> = vec![first_quotient as f64];
    let (mut p_prev, mut q_prev) = (0.0f64, 1.0f64);
    let (mut p, mut q) = (1.0f64, first_quotient as f64);
    let mut scales = Vec::new();
    loop {
        let big_q = p + q;
        if big_q > MAX_EXACT {
            break;
        }
        let target = schedule.bound(big_q as u64);
        // |q_j alpha - p_j| < 1 / (a_{j+1} q_j + q_{j-1}).
        let a_next = ((target - q_prev) / q).ceil().max(1.0);
        if !(a_next * q + q_prev).is_finite() || !(a_next * (q + p)).is_finite() {
            break;
        }
        scales.push(big_q as u64);
        quotients.push(a_next);
        let p_next = a_next * p + p_prev;
        let q_next = a_next * q + q_prev;
        p_prev = p;
        q_prev = q;
        p = p_next;
        q = q_next;
    }
    if scales.is_empty() {
        return Err(KamError::ConstructionFailed(format!(
            "schedule {schedule:?} overflows at the first scale"
        )));
    }
    // Tail of ones: complete quotient a_J + 1/phi.
    let mut x = dd(*quotients.last().unwrap()) + golden_ratio_inverse();
    for &a in quotients.iter().rev().skip(1) {
        x = dd(a) + super::extended::dd_recip(x);
    }
    let alpha = super::extended::dd_recip(x);
    let mut w = FrequencyVector::from_components(&[dd(1.0), alpha], FrequencyKind::Liouville)?
        .with_continued_fraction(quotients.clone())?;
    w.metadata
        .insert("construction".into(), "continued fraction".into());
    w.metadata.insert(
        "partial_quotients".into(),
        quotients
            .iter()
            .map(|a| a.to_string())
            .collect::<Vec<_>>()
            .join(" "),
    );
    w.metadata
        .insert("schedule".into(), format!("{schedule:?}"));
    verify_scales(&mut w, &scales, schedule)?;
    Ok(w)
}

/// `(1, L, frac(sqrt 2), frac(sqrt 3), ...)` with `L = sum_j 10^-e_j`.
fn lacunary_liouville(n: usize, schedule: LiouvilleSchedule) -> Result<FrequencyVector> {
    let mut exps = vec![1i32];
    let mut scales = Vec::new();
    loop {
        let e = *exps.last().unwrap();
        let partial = exps.iter().fold(0.0, |acc, &x| acc + 10f64.powi(-x));
        let qj = 10f64.powi(e);
        let big_q = qj + (qj * partial).round();
        let target = schedule.bound(big_q as u64);
        let gap = target.log10().ceil().max(1.0) as i32 + 1;
        let e_next = e + gap;
        let divisor_estimate = 10f64.powi(e - e_next);
        if divisor_estimate < FLOOR_SAFETY * RESONANCE_TOL * big_q || e_next > 30 {
            break;
        }
        scales.push(big_q as u64);
        exps.push(e_next);
    }
    if scales.is_empty() {
        return Err(KamError::ConstructionFailed(format!(
            "schedule {schedule:?} cannot be realised above the resonance floor"
        )));
    }
    let l = exps
        .iter()
        .fold(dd(0.0), |acc, &e| acc + super::extended::ten_pow(-e));
    let mut comps = vec![dd(1.0), l];
    const PRIMES: [f64; 6] = [2.0, 3.0, 5.0, 7.0, 11.0, 13.0];
    for i in 0..n - 2 {
        let r = dd(PRIMES[i % PRIMES.len()]).sqrt();
        comps.push(r - r.floor());
    }
    let mut w = FrequencyVector::from_components(&comps, FrequencyKind::Liouville)?;
    w.metadata
        .insert("construction".into(), "lacunary decimal series".into());
    w.metadata.insert(
        "exponents".into(),
        exps.iter()
            .map(|e| e.to_string())
            .collect::<Vec<_>>()
            .join(" "),
    );
    w.metadata
        .insert("schedule".into(), format!("{schedule:?}"));
    verify_scales(&mut w, &scales, schedule)?;
    Ok(w)
}

/// Confirms `Psi(Q_j) >= schedule(Q_j)`; large scales are certified through
/// the explicit near-resonant vector (a lower bound for `Psi`).
fn verify_scales(
    w: &mut FrequencyVector,
    scales: &[u64],
    schedule: LiouvilleSchedule,
) -> Result<()> {
    let exact = w.partial_quotients.is_some();
    let scale_psi = |w: &FrequencyVector, q: u64| -> Result<f64> {
        if exact || (q <= VERIFY_WITH_PSI && w.n() == 2) {
            Ok(psi(w, q)?.psi)
        } else {
            Ok(1.0 / divisor(&scale_witness(w, q), w))
        }
    };
    let mut kept = Vec::new();
    let mut listed = Vec::new();
    for &q in scales {
        let lower = scale_psi(w, q)?;
        if lower >= schedule.bound(q) {
            kept.push(q);
            listed.push(format!("{q}:{lower:e}"));
        }
    }
    if kept.is_empty() {
        return Err(KamError::ConstructionFailed(
            "no scale satisfies the schedule after verification".into(),
        ));
    }
    w.metadata.insert("scale_psi".into(), listed.join(" "));
    w.scales = kept;
    Ok(())
}

/// The near-resonant vector `(-p, q, 0, ...)` with `p + q = Q` responsible
/// for the jump of `Psi` at a Liouville scale.
pub fn scale_witness(w: &FrequencyVector, big_q: u64) -> Vec<i64> {
    let l = w.components()[1];
    // Solve q + round(q L) = Q for q.
    let approx = (big_q as f64 / (1.0 + l.hi())).round() as i64;
    let mut best: Option<(f64, Vec<i64>)> = None;
    for q in (approx - 2).max(1)..=approx + 2 {
        let p = (TwoFloat::from(q as f64) * l).hi().round() as i64;
        if (p + q) as u64 != big_q {
            continue;
        }
        let mut k = vec![0i64; w.n()];
        k[0] = -p;
        k[1] = q;
        let d = divisor(&k, w);
        if best.as_ref().map_or(true, |(bd, _)| d < *bd) {
            best = Some((d, k));
        }
    }
    best.map(|(_, k)| k).unwrap_or_else(|| {
        let mut k = vec![0i64; w.n()];
        k[1] = 1;
        k
    })
}
