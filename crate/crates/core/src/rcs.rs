//! Angular RCS covariance and correlated complex-Gaussian sampling.
//!
//! The target's radar cross-section seen from cluster look angle `theta_m`
//! is one entry of a zero-mean circularly-symmetric Gaussian vector whose
//! covariance decays exponentially in the angular gap:
//! `[R]_{ij} = zeta_av * exp(-kappa |theta_i - theta_j|)`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RcsError {
    #[error("covariance factorization failed: {0}")]
    Factorization(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
}

/// Angular covariance `R_Sigma` with a cached square-root factor.
#[derive(Debug, Clone)]
pub struct RcsModel {
    angles: Vec<f64>,
    zeta_av: f64,
    kappa: f64,
    r_sigma: DMatrix<f64>,
    factor: DMatrix<f64>,
}

/// Build the covariance and its factor from cluster look angles.
///
/// A Cholesky factor is used when it exists; the fully-correlated limit
/// `kappa = 0` makes the matrix rank-one, in which case a symmetric
/// eigendecomposition with clamped eigenvalues provides the square root.
pub fn build_covariance(angles: &[f64], zeta_av: f64, kappa: f64) -> Result<RcsModel, RcsError> {
    if !(zeta_av > 0.0) {
        return Err(RcsError::Parameter(format!("zeta_av must be positive, got {zeta_av}")));
    }
    if kappa < 0.0 {
        return Err(RcsError::Parameter(format!("kappa must be nonnegative, got {kappa}")));
    }
    let m = angles.len();
    let r_sigma = DMatrix::from_fn(m, m, |i, j| zeta_av * (-kappa * (angles[i] - angles[j]).abs()).exp());
    // Cholesky only when safely positive definite; a rank-deficient matrix
    // (kappa = 0) can still "factor" with rounding-noise pivots.
    let chol = r_sigma.clone().cholesky().filter(|ch| {
        let diag = ch.l_dirty().diagonal();
        diag.min() > 1e-6 * zeta_av.sqrt()
    });
    let factor = match chol {
        Some(ch) => ch.unpack(),
        None => {
            let eig = r_sigma.clone().symmetric_eigen();
            let mut f = eig.eigenvectors;
            for (c, &lam) in eig.eigenvalues.iter().enumerate() {
                let s = lam.max(0.0).sqrt();
                f.column_mut(c).scale_mut(s);
            }
            f
        }
    };
    let residual = (&factor * factor.transpose() - &r_sigma).norm() / r_sigma.norm();
    if residual > 1e-10 {
        return Err(RcsError::Factorization(format!(
            "factor residual {residual:.3e} exceeds 1e-10"
        )));
    }
    Ok(RcsModel { angles: angles.to_vec(), zeta_av, kappa, r_sigma, factor })
}

impl RcsModel {
    pub fn dim(&self) -> usize {
        self.angles.len()
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.r_sigma
    }

    pub fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }

    pub fn zeta_av(&self) -> f64 {
        self.zeta_av
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    /// Sample `Sigma = factor * w` for draw index `idx` of stream `seed`,
    /// with `w` i.i.d. unit-variance circularly-symmetric complex Gaussian.
    ///
    /// The generator is keyed by `(seed, idx)`, so any parallel chunking of
    /// draw indices reproduces the same vectors.
    pub fn sample_at(&self, seed: u64, idx: u64) -> DVector<Complex64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(idx);
        let m = self.dim();
        let scale = 0.5_f64.sqrt();
        let w = DVector::from_fn(m, |_, _| {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            Complex64::new(re * scale, im * scale)
        });
        // factor is real, so the product stays circularly symmetric
        DVector::from_fn(m, |i, _| {
            let mut acc = Complex64::ZERO;
            for j in 0..m {
                acc += self.factor[(i, j)] * w[j];
            }
            acc
        })
    }

    /// Draw `n` RCS vectors deterministically from `seed`.
    pub fn sample_rcs(&self, seed: u64, n: usize) -> Vec<DVector<Complex64>> {
        (0..n as u64).map(|i| self.sample_at(seed, i)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn kappa_zero_gives_rank_one_all_ones() {
        let model = build_covariance(&[0.3, 0.9, 2.0], 2.5, 0.0).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_relative_eq!(model.covariance()[(i, j)], 2.5, epsilon = 1e-14);
            }
        }
        let s = model.sample_at(7, 0);
        // rank-one factor: every coordinate of a draw is identical
        assert_relative_eq!((s[0] - s[1]).norm(), 0.0, epsilon = 1e-12);
        assert_relative_eq!((s[0] - s[2]).norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn large_kappa_approaches_identity() {
        let model = build_covariance(&[0.3, 0.9, 2.0], 1.0, 1e6).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                if i == j {
                    assert_relative_eq!(model.covariance()[(i, j)], 1.0);
                } else {
                    assert!(model.covariance()[(i, j)].abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn off_diagonal_halves_at_log_two_gap() {
        let model = build_covariance(&[0.0, std::f64::consts::LN_2], 1.0, 1.0).unwrap();
        assert_relative_eq!(model.covariance()[(0, 1)], 0.5, epsilon = 1e-14);
    }

    #[test]
    fn factor_reproduces_covariance() {
        for kappa in [0.0, 0.01, 0.1, 10.0, 1e6] {
            let angles: Vec<f64> = (0..8).map(|i| 0.4 + 0.25 * i as f64).collect();
            let model = build_covariance(&angles, 1.7, kappa).unwrap();
            let resid = (model.factor() * model.factor().transpose() - model.covariance()).norm()
                / model.covariance().norm();
            assert!(resid <= 1e-10, "kappa={kappa}: residual {resid}");
        }
    }

    #[test]
    fn single_angle_magnitude_squared_is_exponential_with_mean_zeta() {
        let model = build_covariance(&[1.0], 3.0, 0.1).unwrap();
        let n = 100_000;
        let mean: f64 = (0..n).map(|i| model.sample_at(11, i).map(|z| z.norm_sqr()).sum()).sum::<f64>() / n as f64;
        // exponential with mean zeta: std error = zeta / sqrt(n)
        let se = 3.0 / (n as f64).sqrt();
        assert!((mean - 3.0).abs() <= 3.0 * se, "mean {mean} vs 3.0 +- {se}");
    }

    #[test]
    fn empirical_covariance_converges() {
        let angles: Vec<f64> = (1..=10).map(|i| ((i as f64 - 0.5) - 5.0).atan2(5.0)).collect();
        let model = build_covariance(&angles, 1.0, 0.1).unwrap();
        let m = model.dim();
        let n = 100_000u64;
        let mut acc = DMatrix::<f64>::zeros(m, m);
        for i in 0..n {
            let s = model.sample_at(5, i);
            for a in 0..m {
                for b in 0..m {
                    acc[(a, b)] += (s[a] * s[b].conj()).re;
                }
            }
        }
        acc /= n as f64;
        let rel = (&acc - model.covariance()).norm() / model.covariance().norm();
        assert!(rel < 0.05, "relative Frobenius error {rel}");
    }

    #[test]
    fn circular_symmetry_split_between_real_and_imaginary() {
        let model = build_covariance(&[0.5], 2.0, 0.1).unwrap();
        let n = 100_000u64;
        let (mut vr, mut vi) = (0.0, 0.0);
        for i in 0..n {
            let z = model.sample_at(3, i)[0];
            vr += z.re * z.re;
            vi += z.im * z.im;
        }
        vr /= n as f64;
        vi /= n as f64;
        assert!((vr - 1.0).abs() < 0.02, "re variance {vr}");
        assert!((vi - 1.0).abs() < 0.02, "im variance {vi}");
    }

    #[test]
    fn draws_are_deterministic_and_order_free() {
        let model = build_covariance(&[0.2, 0.9], 1.0, 0.4).unwrap();
        let a = model.sample_at(42, 17);
        let b = model.sample_at(42, 17);
        assert_eq!(a, b);
        let batch = model.sample_rcs(42, 20);
        assert_eq!(batch[17], a);
    }

    #[test]
    fn parameter_validation() {
        assert!(build_covariance(&[0.1], 0.0, 0.1).is_err());
        assert!(build_covariance(&[0.1], 1.0, -0.5).is_err());
    }
}
