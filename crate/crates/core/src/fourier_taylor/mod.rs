//! Truncated Fourier-Taylor series `H(theta, I)` on `T^n x R^n`.
//!
//! Angles have period 1, so `d/dtheta_j exp(2 pi i k.theta) = 2 pi i k_j
//! exp(2 pi i k.theta)`. Poisson brackets use `{F, G} = d_theta F . d_I G
//! - d_I F . d_theta G`, with `theta' = d_I H` and `I' = -d_theta H`.

mod eval;
mod hamiltonian;
mod integrator;
mod norms;
mod series;

pub use eval::{CompiledSeries, Jet2, PhaseFunction};
pub use hamiltonian::{
    kolmogorov_condition, HamiltonianFile, HamiltonianSpec, MatrixSeries, MatrixTerm,
    RescaleDirection, ScalingState, KOLMOGOROV_COND_MAX,
};
pub use integrator::{
    integrate_flow, integrate_series, midpoint_step, trajectory_csv, StepStats, Trajectory,
};
pub use norms::{
    grid_sup, series_norm, weighted_fourier, NormKind, GRID_ANGLE_POINTS, GRID_RADIAL_POINTS,
};
pub use series::{FourierTaylorSeries, TermRecord, TruncationReport};

use serde::{Deserialize, Serialize};

/// Largest supported number of degrees of freedom.
pub const MAX_DIM: usize = 4;

/// Key of one coefficient: Fourier mode `k` and action exponent `m`.
/// Unused trailing slots are zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Index {
    pub k: [i32; MAX_DIM],
    pub m: [u16; MAX_DIM],
}

impl Index {
    pub fn new(k: &[i64], m: &[u32]) -> Self {
        assert!(k.len() <= MAX_DIM && m.len() <= MAX_DIM);
        let mut idx = Index {
            k: [0; MAX_DIM],
            m: [0; MAX_DIM],
        };
        for (slot, &v) in idx.k.iter_mut().zip(k) {
            *slot = i32::try_from(v).expect("Fourier mode out of range");
        }
        for (slot, &v) in idx.m.iter_mut().zip(m) {
            *slot = u16::try_from(v).expect("action exponent out of range");
        }
        idx
    }

    pub fn k_l1(&self) -> u64 {
        self.k.iter().map(|x| x.unsigned_abs() as u64).sum()
    }

    pub fn degree(&self) -> u32 {
        self.m.iter().map(|&x| x as u32).sum()
    }

    pub fn is_k_zero(&self) -> bool {
        self.k.iter().all(|&x| x == 0)
    }

    /// Index of the product of two monomials.
    pub fn combine(&self, other: &Index) -> Index {
        let mut out = *self;
        for j in 0..MAX_DIM {
            out.k[j] += other.k[j];
            out.m[j] += other.m[j];
        }
        out
    }

    pub fn conjugate_index(&self) -> Index {
        let mut out = *self;
        out.k.iter_mut().for_each(|x| *x = -*x);
        out
    }

    /// True if `k` is zero or its first nonzero entry is positive.
    pub fn in_half_space(&self) -> bool {
        self.k.iter().find(|&&x| x != 0).map_or(true, |&x| x > 0)
    }

    pub fn k_vec(&self, n: usize) -> Vec<i64> {
        self.k[..n].iter().map(|&x| x as i64).collect()
    }

    pub fn m_vec(&self, n: usize) -> Vec<u32> {
        self.m[..n].iter().map(|&x| x as u32).collect()
    }
}

/// Point of `T^n x R^n`, angles reduced to `[0, 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseState {
    pub theta: Vec<f64>,
    pub action: Vec<f64>,
}

impl PhaseState {
    pub fn new(theta: &[f64], action: &[f64]) -> Self {
        assert_eq!(theta.len(), action.len());
        Self {
            theta: theta.iter().map(|&t| wrap_angle(t)).collect(),
            action: action.to_vec(),
        }
    }

    pub fn n(&self) -> usize {
        self.theta.len()
    }

    /// Sup norm of the actions.
    pub fn action_norm(&self) -> f64 {
        self.action.iter().fold(0.0, |a, x| a.max(x.abs()))
    }
}

/// `x mod 1` in `[0, 1)`.
pub fn wrap_angle(x: f64) -> f64 {
    let r = x - x.floor();
    if r >= 1.0 {
        0.0
    } else {
        r
    }
}

/// Signed distance between two angles on the circle, in `[-1/2, 1/2)`.
pub fn angle_diff(a: f64, b: f64) -> f64 {
    let d = a - b;
    d - (d + 0.5).floor()
}
