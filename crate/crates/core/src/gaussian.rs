//! Bivariate Gaussian moments, closed-form KL divergence, and sampling.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, Mat2, Vec2};
use crate::rng::CounterRng;

/// Default additive floor applied to near-singular covariances
/// (e.g. idle primitives with zero acceleration variance).
pub const COVARIANCE_FLOOR: f64 = 1e-9;

/// Dimension of the feature space (speed, acceleration).
pub const DIM: usize = 2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GaussianError {
    #[error("covariance matrix is singular even after repeated {floor:.0e} I floor")]
    SingularCovariance { floor: f64 },
}

/// Mean vector and covariance of a bivariate Gaussian.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianMoments {
    pub mu: Vec2,
    pub sigma: Mat2,
}

impl GaussianMoments {
    pub fn new(mu: Vec2, sigma: Mat2) -> Self {
        Self { mu, sigma }
    }

    /// Covariance with the SPD floor applied if needed. Logs when the floor
    /// actually changes the matrix so silent regularization never happens.
    pub fn floored_sigma(&self) -> Result<Mat2, GaussianError> {
        let (fixed, rounds) = linalg::spd_repair(&self.sigma, COVARIANCE_FLOOR, 3).ok_or(
            GaussianError::SingularCovariance {
                floor: COVARIANCE_FLOOR,
            },
        )?;
        if rounds > 0 {
            log::warn!(
                "covariance floor applied ({rounds} round(s) of {COVARIANCE_FLOOR:.0e} I) to sigma {:?}",
                self.sigma
            );
        }
        Ok(fixed)
    }

    /// Draw one sample: mu + L z with z standard normal, L the Cholesky factor.
    pub fn sample(&self, rng: &mut CounterRng) -> Result<Vec2, GaussianError> {
        let sigma = self.floored_sigma()?;
        let l = linalg::cholesky(&sigma).ok_or(GaussianError::SingularCovariance {
            floor: COVARIANCE_FLOOR,
        })?;
        let z: Vec2 = [rng.sample(StandardNormal), rng.sample(StandardNormal)];
        Ok([
            self.mu[0] + l[0][0] * z[0],
            self.mu[1] + l[1][0] * z[0] + l[1][1] * z[1],
        ])
    }
}

/// Gaussian with inverse and normalizer precomputed for repeated density
/// evaluation (the HSMM likelihood evaluates every observation against
/// every state each sweep).
#[derive(Debug, Clone)]
pub struct PreparedGaussian {
    pub mu: Vec2,
    inv: Mat2,
    /// -ln(2 pi) - 0.5 ln det(sigma), the log-density at zero Mahalanobis distance.
    log_norm: f64,
}

impl PreparedGaussian {
    pub fn new(g: &GaussianMoments) -> Result<Self, GaussianError> {
        let sigma = g.floored_sigma()?;
        let det = linalg::det(&sigma);
        let inv = linalg::inverse(&sigma).ok_or(GaussianError::SingularCovariance {
            floor: COVARIANCE_FLOOR,
        })?;
        Ok(Self {
            mu: g.mu,
            inv,
            log_norm: -(2.0 * std::f64::consts::PI).ln() - 0.5 * det.ln(),
        })
    }

    #[inline]
    pub fn log_pdf(&self, x: &Vec2) -> f64 {
        let d = linalg::sub_vec(x, &self.mu);
        let maha = linalg::dot(&d, &linalg::mat_vec(&self.inv, &d));
        self.log_norm - 0.5 * maha
    }
}

/// KL divergence between two multivariate normals, closed form:
///
///   D_KL(p || q) = 1/2 [ tr(Sq^-1 Sp) + (mq-mp)^T Sq^-1 (mq-mp) - k
///                        + ln(det Sq / det Sp) ]
///
/// Both covariances receive the SPD floor before inversion.
pub fn kl_gaussian(p: &GaussianMoments, q: &GaussianMoments) -> Result<f64, GaussianError> {
    let sp = p.floored_sigma()?;
    let sq = q.floored_sigma()?;
    let sq_inv = linalg::inverse(&sq).ok_or(GaussianError::SingularCovariance {
        floor: COVARIANCE_FLOOR,
    })?;
    let tr = linalg::trace(&linalg::mat_mul(&sq_inv, &sp));
    let d = linalg::sub_vec(&q.mu, &p.mu);
    let maha = linalg::dot(&d, &linalg::mat_vec(&sq_inv, &d));
    let log_det_ratio = linalg::det(&sq).ln() - linalg::det(&sp).ln();
    let kl = 0.5 * (tr + maha - DIM as f64 + log_det_ratio);
    // Clamp the tiny negative values rounding can produce when p ~= q.
    Ok(if kl < 0.0 && kl > -1e-12 { 0.0 } else { kl })
}
