//! Small-divisor arithmetic of non-resonant frequency vectors.
//!
//! A [`FrequencyVector`] is stored in double-double precision and always
//! sup-normalised. On top of it live the divisor function
//! `Psi(Q) = max { |k.omega|^-1 : 0 < |k|_1 <= Q }`, its inverse-type
//! companion `Delta(x) = sup { Q : Q Psi(Q) <= x }`, the derived small
//! parameters `mu(eps) = 1 / Delta(c / eps)` and
//! `nu(eps) = exp(-c_bar mu^(-1/alpha))`, and finite Diophantine
//! certification. Two-dimensional vectors built from a continued fraction
//! keep their partial quotients and take `Psi` from the convergents.

pub mod construct;
pub mod continued;
pub mod extended;
pub mod lattice;
pub mod record;

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use twofloat::TwoFloat;

use crate::error::{KamError, Result};
use lattice::{candidate_order, canonical, for_each_half_space, l1};

pub use construct::{make_test_frequency, LiouvilleSchedule, TestFrequencyKind};

/// Divisors below `RESONANCE_TOL * |k|_1` are treated as exact resonances.
pub const RESONANCE_TOL: f64 = 1e-14;

/// Default radius of the non-resonance witness check done at construction.
pub const DEFAULT_Q_CHECK: u64 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormMode {
    Sup,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum FrequencyKind {
    Golden,
    Diophantine { tau: f64 },
    Liouville,
    LiouvilleConstant,
    Explicit,
}

impl FrequencyKind {
    pub fn tag(&self) -> &'static str {
        match self {
            FrequencyKind::Golden => "golden",
            FrequencyKind::Diophantine { .. } => "diophantine",
            FrequencyKind::Liouville => "liouville",
            FrequencyKind::LiouvilleConstant => "liouville_constant",
            FrequencyKind::Explicit => "explicit",
        }
    }
}

/// A sup-normalised frequency vector in double-double precision.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyVector {
    components: Vec<TwoFloat>,
    pivot: usize,
    pub norm_mode: NormMode,
    pub kind: FrequencyKind,
    /// Exact closed form, when one is known (quadratic irrationals).
    pub symbolic: Option<String>,
    pub metadata: BTreeMap<String, String>,
    /// Scales `Q_j` at which a Liouville construction certified its schedule.
    pub scales: Vec<u64>,
    /// Exact continued fraction `[0; a_1, .., a_J, 1, 1, ..]` of the second
    /// component when n = 2; `psi` then works from the convergents.
    pub partial_quotients: Option<Vec<f64>>,
}

impl FrequencyVector {
    /// Sup-normalises `values`. No resonance check is done here; see
    /// [`FrequencyVector::check_nonresonant`].
    pub fn from_components(values: &[TwoFloat], kind: FrequencyKind) -> Result<Self> {
        if values.len() < 2 {
            return Err(KamError::InvalidParameter(format!(
                "frequency dimension must be >= 2, got {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.hi().is_finite()) {
            return Err(KamError::InvalidParameter(
                "non-finite frequency component".into(),
            ));
        }
        let mut pivot = 0;
        for (i, v) in values.iter().enumerate() {
            if v.hi().abs() > values[pivot].hi().abs() {
                pivot = i;
            }
        }
        let scale = values[pivot].abs();
        if scale.hi() == 0.0 {
            return Err(KamError::InvalidParameter("zero frequency vector".into()));
        }
        let mut components: Vec<TwoFloat> =
            values.iter().map(|&v| extended::dd_div(v, scale)).collect();
        components[pivot] = TwoFloat::from(values[pivot].hi().signum());
        Ok(Self {
            components,
            pivot,
            norm_mode: NormMode::Sup,
            kind,
            symbolic: None,
            metadata: BTreeMap::new(),
            scales: Vec::new(),
            partial_quotients: None,
        })
    }

    pub fn from_f64(values: &[f64], kind: FrequencyKind) -> Result<Self> {
        let v: Vec<TwoFloat> = values.iter().map(|&x| TwoFloat::from(x)).collect();
        Self::from_components(&v, kind)
    }

    pub fn n(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[TwoFloat] {
        &self.components
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.hi()).collect()
    }

    /// Index of the component of modulus one.
    pub fn pivot(&self) -> usize {
        self.pivot
    }

    /// Checks the witness property: no `0 < |k|_1 <= q_check` is resonant.
    pub fn check_nonresonant(&self, q_check: u64) -> Result<()> {
        psi(self, q_check).map(|_| ())
    }

    /// Attaches the exact continued fraction of the second component.
    pub fn with_continued_fraction(mut self, a: Vec<f64>) -> Result<Self> {
        continued::validate(&a)?;
        if self.n() != 2 || self.pivot != 0 || self.components[0].hi() != 1.0 {
            return Err(KamError::InvalidParameter(
                "a continued fraction needs omega = (1, alpha)".into(),
            ));
        }
        self.partial_quotients = Some(a);
        Ok(self)
    }

    pub fn with_symbolic(mut self, s: impl Into<String>) -> Self {
        self.symbolic = Some(s.into());
        self
    }
}

/// `|k . omega|`, the single primitive every enumeration shares.
pub fn divisor(k: &[i64], omega: &FrequencyVector) -> f64 {
    extended::int_dot(k, omega.components()).hi().abs()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivisorRecord {
    pub q: u64,
    pub min_divisor: f64,
    pub argmin_k: Vec<i64>,
    pub psi: f64,
}

struct Best {
    divisor: f64,
    k: Vec<i64>,
    scratch: Vec<i64>,
}

impl Best {
    fn new() -> Self {
        Self {
            divisor: f64::INFINITY,
            k: Vec::new(),
            scratch: Vec::new(),
        }
    }

    fn offer(&mut self, divisor: f64, k: &[i64]) {
        if divisor > self.divisor {
            return;
        }
        self.scratch.clear();
        self.scratch.extend_from_slice(k);
        canonical(&mut self.scratch);
        if self.k.is_empty()
            || candidate_order((divisor, &self.scratch), (self.divisor, &self.k)).is_lt()
        {
            self.divisor = divisor;
            std::mem::swap(&mut self.k, &mut self.scratch);
        }
    }

    fn into_record(self, q: u64) -> Result<DivisorRecord> {
        if self.divisor < RESONANCE_TOL * l1(&self.k) as f64 {
            return Err(KamError::ResonanceDetected {
                k: self.k,
                divisor: self.divisor,
            });
        }
        Ok(DivisorRecord {
            q,
            min_divisor: self.divisor,
            psi: 1.0 / self.divisor,
            argmin_k: self.k,
        })
    }
}

/// Rebuilds a full vector from the non-pivot entries and the pivot entry.
fn assemble(out: &mut [i64], rest: &[i64], pivot: usize, kp: i64) {
    let mut j = 0;
    for (i, slot) in out.iter_mut().enumerate() {
        if i == pivot {
            *slot = kp;
        } else {
            *slot = rest[j];
            j += 1;
        }
    }
}

fn rest_dot(rest: &[i64], omega: &[TwoFloat], pivot: usize) -> TwoFloat {
    let mut acc = TwoFloat::from(0.0);
    let mut j = 0;
    for (i, &w) in omega.iter().enumerate() {
        if i == pivot {
            continue;
        }
        if rest[j] != 0 {
            acc += w * TwoFloat::from(rest[j] as f64);
        }
        j += 1;
    }
    acc
}

/// `Psi(Q)` with its minimiser.
///
/// For every choice of the non-pivot entries the pivot entry enters
/// `|k.omega|` as `|k_p + s|` (the pivot component is exactly +-1), which is
/// convex in `k_p`; only the two integers around `-s` (clamped to the l1
/// budget) can win. Cost is O(Q^(n-1)).
pub fn psi(omega: &FrequencyVector, q: u64) -> Result<DivisorRecord> {
    if q == 0 {
        return Err(KamError::InvalidParameter("Q must be >= 1".into()));
    }
    if let Some(a) = &omega.partial_quotients {
        return continued::psi(a, q);
    }
    let n = omega.n();
    let p = omega.pivot();
    let sign = omega.components()[p].hi();
    let mut best = Best::new();
    let mut k = vec![0i64; n];
    // rest = 0: k = (0,..,k_p,..,0) with k_p >= 1, divisor k_p; k_p = 1 wins.
    assemble(&mut k, &vec![0; n - 1], p, 1);
    best.offer(divisor(&k, omega), &k);
    for_each_half_space(n - 1, q, false, |rest, used| {
        let budget = (q - used) as i64;
        let s = rest_dot(rest, omega.components(), p);
        let target = -(s.hi() * sign);
        let lo = (target.floor() as i64).clamp(-budget, budget);
        let hi = (target.ceil() as i64).clamp(-budget, budget);
        for kp in [lo, hi] {
            assemble(&mut k, rest, p, kp);
            best.offer(divisor(&k, omega), &k);
        }
    });
    best.into_record(q)
}

/// `Psi(Q)` for every `Q = 1..=q_max`, by walking l1 shells once.
pub fn psi_table(omega: &FrequencyVector, q_max: u64) -> Result<Vec<DivisorRecord>> {
    if q_max == 0 {
        return Err(KamError::InvalidParameter("Q must be >= 1".into()));
    }
    if let Some(a) = &omega.partial_quotients {
        return (1..=q_max).map(|q| continued::psi(a, q)).collect();
    }
    let n = omega.n();
    let p = omega.pivot();
    // Shell minima, indexed by |k|_1.
    let mut shells: Vec<Best> = (0..=q_max).map(|_| Best::new()).collect();
    let mut k = vec![0i64; n];
    for_each_half_space(n - 1, q_max, true, |rest, used| {
        let top = (q_max - used) as i64;
        if used == 0 {
            for kp in 1..=top {
                assemble(&mut k, rest, p, kp);
                shells[kp as usize].offer(divisor(&k, omega), &k);
            }
            return;
        }
        for kp in -top..=top {
            assemble(&mut k, rest, p, kp);
            let shell = used as usize + kp.unsigned_abs() as usize;
            shells[shell].offer(divisor(&k, omega), &k);
        }
    });
    let mut out = Vec::with_capacity(q_max as usize);
    let mut run = Best::new();
    for (q, shell) in shells.into_iter().enumerate().skip(1) {
        if !shell.k.is_empty() {
            run.offer(shell.divisor, &shell.k);
        }
        let rec = Best {
            divisor: run.divisor,
            k: run.k.clone(),
            scratch: Vec::new(),
        }
        .into_record(q as u64)?;
        out.push(rec);
    }
    Ok(out)
}

/// Memoised `Psi` for monotone searches.
pub struct PsiCache<'a> {
    omega: &'a FrequencyVector,
    values: HashMap<u64, f64>,
}

impl<'a> PsiCache<'a> {
    pub fn new(omega: &'a FrequencyVector) -> Self {
        Self {
            omega,
            values: HashMap::new(),
        }
    }

    pub fn get(&mut self, q: u64) -> Result<f64> {
        if let Some(&v) = self.values.get(&q) {
            return Ok(v);
        }
        let v = psi(self.omega, q)?.psi;
        self.values.insert(q, v);
        Ok(v)
    }
}

/// Search ceiling for `Delta`; beyond it the lattice walk is no longer cheap.
/// Vectors with an exact continued fraction search up to `2^52`.
pub const DELTA_SEARCH_MAX: u64 = 1 << 26;

/// `Delta(x)`: the largest `Q >= 1` with `Q Psi(Q) <= x`.
pub fn delta(omega: &FrequencyVector, x: f64) -> Result<u64> {
    let mut cache = PsiCache::new(omega);
    delta_cached(&mut cache, x)
}

pub fn delta_cached(cache: &mut PsiCache<'_>, x: f64) -> Result<u64> {
    if !x.is_finite() {
        return Err(KamError::InvalidParameter(format!(
            "Delta argument must be finite, got {x}"
        )));
    }
    let psi1 = cache.get(1)?;
    if x < psi1 {
        return Err(KamError::BelowThreshold { x, psi1 });
    }
    // Convergents make Psi cheap at any Q.
    let ceiling = if cache.omega.partial_quotients.is_some() {
        1 << 52
    } else {
        DELTA_SEARCH_MAX
    };
    // Q Psi(Q) is strictly increasing: double, then bisect.
    let mut lo = 1u64;
    let mut hi = 2u64;
    loop {
        if hi as f64 * cache.get(hi)? > x {
            break;
        }
        lo = hi;
        hi *= 2;
        if hi > ceiling {
            return Err(KamError::InvalidParameter(format!(
                "Delta({x}) exceeds the search ceiling {ceiling}"
            )));
        }
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if mid as f64 * cache.get(mid)? <= x {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gevrey {
    pub alpha: f64,
    pub c_bar: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArithmeticProfile {
    pub epsilon: f64,
    pub c: f64,
    pub delta: u64,
    pub mu: f64,
    pub alpha: Option<f64>,
    pub c_bar: Option<f64>,
    pub nu: Option<f64>,
}

pub fn nu_of_mu(mu: f64, g: Gevrey) -> f64 {
    (-g.c_bar * mu.powf(-1.0 / g.alpha)).exp()
}

/// The arithmetic profile at scale `epsilon`: `Delta = Delta(c/eps)`,
/// `mu = 1/Delta`, and `nu` when Gevrey data are supplied.
pub fn mu_nu(
    omega: &FrequencyVector,
    epsilon: f64,
    c: f64,
    gevrey: Option<Gevrey>,
) -> Result<ArithmeticProfile> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(KamError::InvalidParameter(format!(
            "epsilon must lie in (0,1), got {epsilon}"
        )));
    }
    if c <= 0.0 {
        return Err(KamError::InvalidParameter(format!(
            "c must be positive, got {c}"
        )));
    }
    if let Some(g) = gevrey {
        if g.alpha < 1.0 || g.c_bar <= 0.0 {
            return Err(KamError::InvalidParameter(format!(
                "Gevrey data need alpha >= 1 and c_bar > 0, got {g:?}"
            )));
        }
    }
    let d = delta(omega, c / epsilon)?;
    let mu = 1.0 / d as f64;
    Ok(ArithmeticProfile {
        epsilon,
        c,
        delta: d,
        mu,
        alpha: gevrey.map(|g| g.alpha),
        c_bar: gevrey.map(|g| g.c_bar),
        nu: gevrey.map(|g| nu_of_mu(mu, g)),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiophantineOutcome {
    pub passed: bool,
    pub gamma: f64,
    pub tau: f64,
    pub q_max: u64,
    /// The worst violator, `argmin |k.omega| |k|_1^tau` among violators.
    pub witness: Option<Vec<i64>>,
    pub witness_ratio: Option<f64>,
}

/// Finite certification of `|k.omega| >= gamma |k|_1^-tau` for
/// `0 < |k|_1 <= q_max`.
pub fn diophantine_check(
    omega: &FrequencyVector,
    gamma: f64,
    tau: f64,
    q_max: u64,
) -> Result<DiophantineOutcome> {
    if tau < (omega.n() - 1) as f64 {
        return Err(KamError::InvalidParameter(format!(
            "tau must be >= n-1 = {}, got {tau}",
            omega.n() - 1
        )));
    }
    diophantine_scan(omega.components(), gamma, tau, q_max)
}

/// Same certification for an arbitrary (not normalised) real vector, as
/// used for torus frequencies in scaled time.
pub fn diophantine_check_raw(
    components: &[f64],
    gamma: f64,
    tau: f64,
    q_max: u64,
) -> Result<DiophantineOutcome> {
    let v: Vec<TwoFloat> = components.iter().map(|&x| TwoFloat::from(x)).collect();
    diophantine_scan(&v, gamma, tau, q_max)
}

fn diophantine_scan(
    omega: &[TwoFloat],
    gamma: f64,
    tau: f64,
    q_max: u64,
) -> Result<DiophantineOutcome> {
    if !(gamma > 0.0) || !tau.is_finite() || q_max == 0 {
        return Err(KamError::InvalidParameter(format!(
            "need gamma > 0, finite tau, q_max >= 1 (got {gamma}, {tau}, {q_max})"
        )));
    }
    let n = omega.len();
    let mut p = 0;
    for i in 0..n {
        if omega[i].hi().abs() > omega[p].hi().abs() {
            p = i;
        }
    }
    let wp = omega[p].hi();
    if wp == 0.0 {
        return Err(KamError::InvalidParameter("zero frequency vector".into()));
    }
    let mut worst: Option<(f64, Vec<i64>)> = None;
    let mut k = vec![0i64; n];
    let consider = |k: &[i64], worst: &mut Option<(f64, Vec<i64>)>| {
        let d = extended::int_dot(k, omega).hi().abs();
        let q1 = l1(k) as f64;
        if d < gamma * q1.powf(-tau) {
            let ratio = d * q1.powf(tau);
            let better = match worst {
                None => true,
                Some((r, kk)) => candidate_order((ratio, k), (*r, kk)).is_lt(),
            };
            if better {
                *worst = Some((ratio, k.to_vec()));
            }
        }
    };
    // Only pivot entries with |k_p w_p + s| < gamma can violate (|k|_1^-tau <= 1).
    let window = |s: f64, budget: i64| -> (i64, i64) {
        let a = (-s - gamma) / wp;
        let b = (-s + gamma) / wp;
        let (a, b) = if a <= b { (a, b) } else { (b, a) };
        (
            (a.ceil() as i64).max(-budget),
            (b.floor() as i64).min(budget),
        )
    };
    {
        let (lo, hi) = window(0.0, q_max as i64);
        for kp in lo.max(1)..=hi {
            assemble(&mut k, &vec![0; n - 1], p, kp);
            consider(&k, &mut worst);
        }
    }
    for_each_half_space(n - 1, q_max, false, |rest, used| {
        let budget = (q_max - used) as i64;
        let s = rest_dot(rest, omega, p).hi();
        let (lo, hi) = window(s, budget);
        for kp in lo..=hi {
            assemble(&mut k, rest, p, kp);
            consider(&k, &mut worst);
        }
    });
    let (witness, witness_ratio) = match worst {
        Some((r, kk)) => (Some(kk), Some(r)),
        None => (None, None),
    };
    Ok(DiophantineOutcome {
        passed: witness.is_none(),
        gamma,
        tau,
        q_max,
        witness,
        witness_ratio,
    })
}

/// Canonical representative of `k` up to sign.
pub fn canonical_k(k: &[i64]) -> Vec<i64> {
    let mut c = k.to_vec();
    canonical(&mut c);
    c
}
