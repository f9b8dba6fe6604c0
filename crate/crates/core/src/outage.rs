//! Accumulated sensing SNR, Monte-Carlo outage, and the Chernoff bound.
//!
//! With per-cluster weights `q` and RCS vector `Sigma`, the accumulated
//! sensing SNR is the quadratic form `Sigma^H diag(q) Sigma`. Outage is the
//! probability this falls below the detection threshold; it is estimated by
//! Monte Carlo and upper-bounded by
//! `min_{s>0} exp(s Gamma_th) / det(I + s R Q)`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::rcs::RcsModel;

/// Monte-Carlo outage estimate with its binomial standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutageEstimate {
    pub p_hat: f64,
    pub std_err: f64,
    pub n: usize,
    pub seed: u64,
}

/// Minimized Chernoff bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChernoffResult {
    pub s_star: f64,
    pub bound: f64,
    pub log_bound: f64,
}

/// `sum_m q_m |Sigma(m)|^2 = Sigma^H Q Sigma`.
pub fn accumulated_snr(q: &[f64], sigma: &DVector<Complex64>) -> f64 {
    q.iter().zip(sigma.iter()).map(|(&w, z)| w * z.norm_sqr()).sum()
}

/// Fraction of `n` seeded draws with accumulated SNR strictly below the
/// threshold. Deterministic for a given seed regardless of thread count.
pub fn mc_outage(q: &[f64], model: &RcsModel, gamma_th: f64, n: usize, seed: u64) -> OutageEstimate {
    let hits = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let s = model.sample_at(seed, i);
            usize::from(accumulated_snr(q, &s) < gamma_th)
        })
        .sum::<usize>();
    let p_hat = hits as f64 / n as f64;
    OutageEstimate {
        p_hat,
        std_err: (p_hat * (1.0 - p_hat) / n as f64).sqrt(),
        n,
        seed,
    }
}

/// Log of the Chernoff bound at parameter `s`:
/// `s * Gamma_th - logdet(I + s R Q)`.
///
/// The determinant is evaluated through the symmetrized PSD form
/// `I + s F^T Q F` (same determinant, always Cholesky-factorizable).
pub fn chernoff_value(q: &[f64], model: &RcsModel, gamma_th: f64, s: f64) -> f64 {
    s * gamma_th - logdet_i_plus_s_rq(q, model, s)
}

/// `logdet(I + s R_Sigma Q)` via `det(I + AB) = det(I + BA)`.
pub fn logdet_i_plus_s_rq(q: &[f64], model: &RcsModel, s: f64) -> f64 {
    let a = symmetrized(q, model, s);
    let chol = a
        .cholesky()
        .expect("I + s F^T Q F is positive definite for s > 0, q >= 0");
    2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

/// `I + s F^T Q F`, the PSD-symmetrized argument of the determinant.
pub(crate) fn symmetrized(q: &[f64], model: &RcsModel, s: f64) -> DMatrix<f64> {
    let m = model.dim();
    let f = model.factor();
    let mut a = DMatrix::<f64>::identity(m, m);
    for i in 0..m {
        for j in 0..m {
            let mut acc = 0.0;
            for r in 0..m {
                acc += f[(r, i)] * q[r] * f[(r, j)];
            }
            a[(i, j)] += s * acc;
        }
    }
    a
}

/// Default Chernoff search grid: 32 points, logarithmic in
/// `[1e-3 / Gamma_th, 1e3 / Gamma_th]`.
pub fn default_s_grid(gamma_th: f64) -> Vec<f64> {
    log_grid(1e-3 / gamma_th, 1e3 / gamma_th, 32)
}

/// Logarithmically spaced grid of `n >= 2` points over `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    assert!(n >= 2 && lo > 0.0 && hi > lo);
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

/// Minimize the log-bound over the grid, then refine by golden-section
/// search on the bracketing interval (the log-bound is convex in `s`).
pub fn chernoff_bound(q: &[f64], model: &RcsModel, gamma_th: f64, grid: &[f64]) -> ChernoffResult {
    assert!(!grid.is_empty(), "chernoff grid must be non-empty");
    let vals: Vec<f64> = grid.iter().map(|&s| chernoff_value(q, model, gamma_th, s)).collect();
    let (imin, _) = vals
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .unwrap();
    let lo = grid[imin.saturating_sub(1)];
    let hi = grid[(imin + 1).min(grid.len() - 1)];
    let s_star = if hi > lo {
        golden_min(|s| chernoff_value(q, model, gamma_th, s), lo, hi)
    } else {
        grid[imin]
    };
    let log_bound = chernoff_value(q, model, gamma_th, s_star).min(vals[imin]);
    let s_star = if log_bound < vals[imin] { s_star } else { grid[imin] };
    ChernoffResult { s_star, bound: log_bound.exp(), log_bound }
}

/// Golden-section minimizer for a unimodal function on `[lo, hi]`.
fn golden_min(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
    let phi = (5.0_f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..120 {
        if b - a <= 1e-12 * (1.0 + a.abs()) {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}
