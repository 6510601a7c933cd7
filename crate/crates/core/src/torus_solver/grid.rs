use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Uniform grid of `size^n` points on `T^n` with FFT helpers.
///
/// Point `p` has digits `i_j` (base `size`, dimension 0 fastest) and
/// coordinates `phi_j = i_j / size`.
#[derive(Clone)]
pub struct Grid {
    pub n: usize,
    pub size: usize,
    pub total: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Grid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Grid({}^{})", self.size, self.n)
    }
}

impl Grid {
    pub fn new(n: usize, size: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            n,
            size,
            total: size.pow(n as u32),
            fwd: planner.plan_fft_forward(size),
            inv: planner.plan_fft_inverse(size),
        }
    }

    fn digits(&self, p: usize) -> Vec<usize> {
        let mut d = Vec::with_capacity(self.n);
        let mut r = p;
        for _ in 0..self.n {
            d.push(r % self.size);
            r /= self.size;
        }
        d
    }

    pub fn point(&self, p: usize) -> Vec<f64> {
        self.digits(p)
            .into_iter()
            .map(|d| d as f64 / self.size as f64)
            .collect()
    }

    /// Signed Fourier mode stored at slot `p`; the Nyquist digit maps to `+size/2`.
    pub fn mode(&self, p: usize) -> Vec<i64> {
        let half = self.size / 2;
        self.digits(p)
            .into_iter()
            .map(|d| {
                if d <= half {
                    d as i64
                } else {
                    d as i64 - self.size as i64
                }
            })
            .collect()
    }

    pub fn is_nyquist(&self, p: usize) -> bool {
        self.size % 2 == 0 && self.digits(p).contains(&(self.size / 2))
    }

    fn slot(&self, k: &[i64]) -> usize {
        let mut p = 0;
        for j in (0..self.n).rev() {
            p = p * self.size + k[j].rem_euclid(self.size as i64) as usize;
        }
        p
    }

    fn transform(&self, data: &mut [Complex64], inverse: bool) {
        let plan = if inverse { &self.inv } else { &self.fwd };
        let mut line = vec![Complex64::new(0.0, 0.0); self.size];
        let mut stride = 1;
        for _ in 0..self.n {
            for base in 0..self.total {
                if (base / stride) % self.size != 0 {
                    continue;
                }
                for (i, x) in line.iter_mut().enumerate() {
                    *x = data[base + i * stride];
                }
                plan.process(&mut line);
                for (i, x) in line.iter().enumerate() {
                    data[base + i * stride] = *x;
                }
            }
            stride *= self.size;
        }
    }

    /// Normalised coefficients `c_k` with `v(phi) = sum c_k exp(2 pi i k.phi)`.
    pub fn forward(&self, v: &[f64]) -> Vec<Complex64> {
        let mut c: Vec<Complex64> = v.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.transform(&mut c, false);
        let s = 1.0 / self.total as f64;
        c.iter_mut().for_each(|x| *x *= s);
        c
    }

    pub fn inverse(&self, c: &[Complex64]) -> Vec<f64> {
        let mut d = c.to_vec();
        self.transform(&mut d, true);
        d.into_iter().map(|x| x.re).collect()
    }

    /// Applies `c_k -> m(k) c_k` with `m = 0` on Nyquist slots.
    pub fn multiplier(&self, v: &[f64], mut m: impl FnMut(&[i64]) -> Complex64) -> Vec<f64> {
        let mut c = self.forward(v);
        for (p, x) in c.iter_mut().enumerate() {
            *x = if self.is_nyquist(p) {
                Complex64::new(0.0, 0.0)
            } else {
                *x * m(&self.mode(p))
            };
        }
        self.inverse(&c)
    }

    pub fn derivative(&self, v: &[f64], j: usize) -> Vec<f64> {
        self.multiplier(v, |k| Complex64::new(0.0, 2.0 * PI * k[j] as f64))
    }

    /// `d_Omega v = sum_j Omega_j d_j v`.
    pub fn along(&self, v: &[f64], omega: &[f64]) -> Vec<f64> {
        self.multiplier(v, |k| Complex64::new(0.0, 2.0 * PI * dot(k, omega)))
    }

    /// Values of the trigonometric interpolant of `v` on a finer grid.
    pub fn resample(&self, v: &[f64], target: &Grid) -> Vec<f64> {
        assert!(target.size >= self.size && target.n == self.n);
        let c = self.forward(v);
        let mut out = vec![Complex64::new(0.0, 0.0); target.total];
        for (k, x) in split_modes(self, &c) {
            out[target.slot(&k)] += x;
        }
        target.inverse(&out)
    }
}

pub fn dot(k: &[i64], omega: &[f64]) -> f64 {
    k.iter().zip(omega).map(|(&a, &b)| a as f64 * b).sum()
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Coefficients with each Nyquist slot split evenly between `+size/2` and
/// `-size/2`, so the interpolant is real everywhere.
pub fn split_modes(grid: &Grid, c: &[Complex64]) -> Vec<(Vec<i64>, Complex64)> {
    let half = (grid.size / 2) as i64;
    let even = grid.size % 2 == 0;
    let mut out = Vec::with_capacity(c.len());
    for (p, &x) in c.iter().enumerate() {
        if x == Complex64::new(0.0, 0.0) {
            continue;
        }
        let mut variants = vec![(grid.mode(p), x)];
        for j in 0..grid.n {
            if even && grid.mode(p)[j] == half {
                let mut next = Vec::with_capacity(2 * variants.len());
                for (k, y) in variants {
                    let mut km = k.clone();
                    km[j] = -half;
                    next.push((k, y * 0.5));
                    next.push((km, y * 0.5));
                }
                variants = next;
            }
        }
        out.extend(variants);
    }
    out
}
