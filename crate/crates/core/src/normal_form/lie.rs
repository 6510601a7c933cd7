//! Lie series `exp(L_G) F = sum_j L_G^j F / j!` with `L_G F = {F, G}`.

use crate::fourier_taylor::{
    weighted_fourier, CompiledSeries, FourierTaylorSeries, TruncationReport,
};

/// Radius used to measure series terms (the outer ball `B_2`).
pub const TERM_NORM_RADIUS: f64 = 2.0;

pub(crate) fn term_norm(f: &FourierTaylorSeries) -> f64 {
    weighted_fourier(f, 0.0, TERM_NORM_RADIUS)
}

/// Bounds that keep every bracket up to `order` free of truncation.
pub(crate) fn lie_bounds(
    f: &FourierTaylorSeries,
    g: &FourierTaylorSeries,
    order: usize,
) -> (u32, u32) {
    let gk = g.max_mode() as u32;
    let gd = g.max_degree().saturating_sub(1);
    let k = f.max_mode() as u32 + order as u32 * gk;
    let d = f.max_degree() + order as u32 * gd;
    (k.max(f.k_max()), d.max(f.d_max()))
}

/// Successive terms `T_j = L^j(start) / ((j + shift)! / shift!)` for
/// `j = 1..=order`, i.e. `T_j = L(T_{j-1}) / (j + shift)`.
///
/// Coefficients below `prune` are dropped and counted as discarded.
pub(crate) fn lie_terms(
    start: &FourierTaylorSeries,
    g: &FourierTaylorSeries,
    order: usize,
    shift: usize,
    bounds: (u32, u32),
    prune: f64,
    report: &mut TruncationReport,
) -> Vec<FourierTaylorSeries> {
    let mut out = Vec::with_capacity(order);
    let mut prev = start.clone();
    for j in 1..=order {
        let (mut next, rep) = prev.bracket_with(g, bounds.0, bounds.1);
        report.merge(rep);
        next = next.scaled(1.0 / (j + shift) as f64);
        let before = next.coefficient_mass();
        next.prune(prune);
        let dropped = before - next.coefficient_mass();
        if dropped > 0.0 {
            report.discarded_mass += dropped;
        }
        out.push(next.clone());
        prev = next;
    }
    out
}

/// Time-one map of the Hamiltonian flow of `G`, as Lie series of the
/// coordinate functions:
/// `theta_j o Phi = theta_j + sum_i L^(i-1)(d_{I_j} G) / i!`,
/// `I_j o Phi = I_j + sum_i L^(i-1)(-d_{theta_j} G) / i!`.
#[derive(Debug, Clone)]
pub struct LieTransform {
    n: usize,
    order: usize,
    generator: FourierTaylorSeries,
    /// Displacements `theta_1..n, I_1..n` of `Phi` and of `Phi^-1`.
    forward: Vec<FourierTaylorSeries>,
    backward: Vec<FourierTaylorSeries>,
    forward_c: Vec<CompiledSeries>,
    backward_c: Vec<CompiledSeries>,
}

impl LieTransform {
    pub fn new(generator: &FourierTaylorSeries, order: usize) -> Self {
        let n = generator.n();
        let forward = displacements(generator, order);
        let backward = displacements(&generator.scaled(-1.0), order);
        let compile = |v: &[FourierTaylorSeries]| v.iter().map(CompiledSeries::new).collect();
        Self {
            n,
            order,
            generator: generator.clone(),
            forward_c: compile(&forward),
            backward_c: compile(&backward),
            forward,
            backward,
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn generator(&self) -> &FourierTaylorSeries {
        &self.generator
    }

    /// Displacement series (`theta` components first, then `I`).
    pub fn displacements(&self, inverse: bool) -> &[FourierTaylorSeries] {
        if inverse {
            &self.backward
        } else {
            &self.forward
        }
    }

    /// `Phi(theta, I)` (or `Phi^-1`), angles not reduced.
    pub fn apply(&self, theta: &[f64], action: &[f64], inverse: bool) -> (Vec<f64>, Vec<f64>) {
        let d = if inverse {
            &self.backward_c
        } else {
            &self.forward_c
        };
        let n = self.n;
        let t = (0..n)
            .map(|j| theta[j] + d[j].value(theta, action))
            .collect();
        let a = (0..n)
            .map(|j| action[j] + d[n + j].value(theta, action))
            .collect();
        (t, a)
    }
}

fn displacements(g: &FourierTaylorSeries, order: usize) -> Vec<FourierTaylorSeries> {
    let n = g.n();
    let mut out = Vec::with_capacity(2 * n);
    let firsts: Vec<FourierTaylorSeries> = (0..n)
        .map(|j| g.d_action(j))
        .chain((0..n).map(|j| g.d_theta(j).scaled(-1.0)))
        .collect();
    for first in firsts {
        let bounds = lie_bounds(&first, g, order);
        let (first, _) = first.retruncate(bounds.0, bounds.1);
        let mut total = first.clone();
        let mut prev = first;
        for i in 2..=order {
            let (next, _) = prev.bracket_with(g, bounds.0, bounds.1);
            let next = next.scaled(1.0 / i as f64);
            total = total.add_series(&next);
            prev = next;
        }
        out.push(total);
    }
    out
}
