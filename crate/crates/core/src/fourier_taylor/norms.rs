use std::collections::BTreeMap;
use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{FourierTaylorSeries, MAX_DIM};

pub const GRID_ANGLE_POINTS: usize = 32;
pub const GRID_RADIAL_POINTS: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum NormKind {
    GridSup { radius: f64 },
    WeightedFourier { width: f64, radius: f64 },
}

pub fn series_norm(f: &FourierTaylorSeries, kind: NormKind) -> f64 {
    match kind {
        NormKind::GridSup { radius } => grid_sup(f, radius),
        NormKind::WeightedFourier { width, radius } => weighted_fourier(f, width, radius),
    }
}

/// `sum |c_{k,m}| exp(2 pi width |k|_1) radius^|m|_1`, a majorant of the
/// sup over `|Im theta| < width, |I| <= radius`.
pub fn weighted_fourier(f: &FourierTaylorSeries, width: f64, radius: f64) -> f64 {
    f.iter()
        .map(|(i, c)| {
            c.norm() * (2.0 * PI * width * i.k_l1() as f64).exp() * radius.powi(i.degree() as i32)
        })
        .sum()
}

pub fn grid_sup(f: &FourierTaylorSeries, radius: f64) -> f64 {
    grid_sup_with(f, radius, GRID_ANGLE_POINTS, GRID_RADIAL_POINTS)
}

/// Max of `|F|` over the product of a uniform angle grid and a uniform
/// action grid on `[-radius, radius]^n` (end points included).
///
/// For each action node the series collapses to its Fourier coefficients,
/// which are then summed on the angle grid with exact roots of unity.
pub fn grid_sup_with(
    f: &FourierTaylorSeries,
    radius: f64,
    angle_pts: usize,
    radial_pts: usize,
) -> f64 {
    let n = f.n();
    // Fold onto the half-space: value = sum_k Re(g_k(I) e_k(theta)).
    let mut by_mode: BTreeMap<[i32; MAX_DIM], Vec<([u16; MAX_DIM], Complex64)>> = BTreeMap::new();
    for (idx, &c) in f.iter() {
        let (key, c) = if idx.is_k_zero() {
            (idx.k, Complex64::new(c.re, 0.0))
        } else if idx.in_half_space() {
            (idx.k, c)
        } else {
            (idx.conjugate_index().k, c.conj())
        };
        by_mode.entry(key).or_default().push((idx.m, c));
    }
    let modes: Vec<_> = by_mode.into_iter().collect();
    let roots: Vec<Complex64> = (0..angle_pts)
        .map(|i| {
            let ph = 2.0 * PI * i as f64 / angle_pts as f64;
            Complex64::new(ph.cos(), ph.sin())
        })
        .collect();
    let action_nodes: Vec<f64> = (0..radial_pts)
        .map(|i| {
            if radial_pts == 1 {
                0.0
            } else {
                -radius + 2.0 * radius * i as f64 / (radial_pts - 1) as f64
            }
        })
        .collect();
    let angle_total = angle_pts.pow(n as u32);
    let action_total = radial_pts.pow(n as u32);
    let mut g = vec![Complex64::new(0.0, 0.0); modes.len()];
    let mut best: f64 = 0.0;
    let mut action = vec![0.0; n];
    for a in 0..action_total {
        let mut r = a;
        for slot in action.iter_mut() {
            *slot = action_nodes[r % radial_pts];
            r /= radial_pts;
        }
        for (gk, (_, terms)) in g.iter_mut().zip(&modes) {
            *gk = terms
                .iter()
                .map(|(m, c)| c * (0..n).map(|j| action[j].powi(m[j] as i32)).product::<f64>())
                .sum();
        }
        for t in 0..angle_total {
            let mut val = 0.0;
            for (gk, (k, _)) in g.iter().zip(&modes) {
                let mut phase = 0i64;
                let mut r = t;
                for &kj in k.iter().take(n) {
                    phase += kj as i64 * (r % angle_pts) as i64;
                    r /= angle_pts;
                }
                let e = roots[phase.rem_euclid(angle_pts as i64) as usize];
                val += (gk * e).re;
            }
            best = best.max(val.abs());
        }
    }
    best
}
