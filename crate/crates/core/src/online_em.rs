//! Online EM for the unknown noise covariances `{Q, Sigma}`.
//!
//! The E-step is a stochastic approximation with constant step `1 - alpha`:
//! sufficient statistics are exponentially forgotten accumulators and the
//! M-step divides by `lambda_k = (1 - alpha^k) / (1 - alpha)`.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::kalman::{LagOneMoments, NoiseModel};
use crate::linalg::{Mat2, Vec2};
use crate::oscillator::{q_matrix, sigma_matrix, Observation, OscillatorParams};

pub const DEFAULT_ALPHA: f64 = 0.99;
pub const DEFAULT_VARIANCE_FLOOR: f64 = 1e-18;

/// Current estimate of `{Q, Sigma}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThetaEstimate {
    pub q_hat: Mat2,
    pub sigma_f_sq_hat: f64,
    pub sigma_theta_sq_hat: f64,
}

impl ThetaEstimate {
    pub fn noise_model(&self) -> NoiseModel {
        NoiseModel {
            q: self.q_hat,
            sigma: Mat2::diag(self.sigma_f_sq_hat, self.sigma_theta_sq_hat),
        }
    }

    pub fn from_model(model: &NoiseModel) -> Self {
        Self {
            q_hat: model.q,
            sigma_f_sq_hat: model.sigma.a,
            sigma_theta_sq_hat: model.sigma.d,
        }
    }
}

/// EM initialisations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EmInitCase {
    /// Diagonal `Q` built from `sigma_f^2 = 1/sqrt(T)` with no jitter, and a
    /// poor `Sigma = diag(1e3, 1e-12)`.
    PoorA,
    /// True `Q`, same poor `Sigma`.
    GoodB,
    /// True `Q` and `Sigma`.
    Genie,
    /// Caller-supplied matrices.
    Custom,
}

/// Per-node exponentially forgotten sufficient statistics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmAccumulators {
    pub xi_q: Mat2,
    pub xi_f: f64,
    pub xi_theta: f64,
    /// Number of updates applied so far.
    pub k: u64,
    pub alpha: f64,
    pub variance_floor: f64,
}

impl EmAccumulators {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "EM alpha {alpha} outside (0, 1)"
            )));
        }
        Ok(Self {
            xi_q: Mat2::ZERO,
            xi_f: 0.0,
            xi_theta: 0.0,
            k: 0,
            alpha,
            variance_floor: DEFAULT_VARIANCE_FLOOR,
        })
    }
}

/// `(1 - alpha^k) / (1 - alpha)`.
pub fn lambda_k(alpha: f64, k: u64) -> f64 {
    let k = i32::try_from(k).unwrap_or(i32::MAX);
    (1.0 - alpha.powi(k)) / (1.0 - alpha)
}

/// Per-step terms of the M-step numerators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmTerms {
    pub q: Mat2,
    pub f: f64,
    pub theta: f64,
}

/// Computes this iteration's contributions from the smoothing moments, the
/// observation, and the posterior mean.
///
/// `|y|^2 - 2 y m + gamma` is evaluated as `(y - m)^2 + V` (equal because
/// `gamma = V + m^2`), which avoids cancelling carrier-sized squares.
pub fn em_terms(moments: &LagOneMoments, obs: &Observation, posterior_mean: Vec2) -> EmTerms {
    let resid = obs.as_vec() - posterior_mean;
    EmTerms {
        q: moments.increment_second_moment(),
        f: resid.x * resid.x + moments.cov.a,
        theta: resid.y * resid.y + moments.cov.d,
    }
}

/// Advances the accumulators by one step and returns the clamped M-step
/// estimate.
pub fn em_update(
    acc: &EmAccumulators,
    moments: &LagOneMoments,
    obs: &Observation,
    posterior_mean: Vec2,
) -> (EmAccumulators, ThetaEstimate) {
    em_update_terms(acc, em_terms(moments, obs, posterior_mean))
}

pub fn em_update_terms(acc: &EmAccumulators, terms: EmTerms) -> (EmAccumulators, ThetaEstimate) {
    let next = EmAccumulators {
        xi_q: (acc.xi_q * acc.alpha + terms.q).symmetrize(),
        xi_f: acc.alpha * acc.xi_f + terms.f,
        xi_theta: acc.alpha * acc.xi_theta + terms.theta,
        k: acc.k + 1,
        ..*acc
    };
    let lambda = lambda_k(acc.alpha, next.k);
    let estimate = ThetaEstimate {
        q_hat: (next.xi_q * (1.0 / lambda)).clip_psd(),
        sigma_f_sq_hat: (next.xi_f / lambda).max(acc.variance_floor),
        sigma_theta_sq_hat: (next.xi_theta / lambda).max(acc.variance_floor),
    };
    (next, estimate)
}

/// Initial `{Q, Sigma}` for the chosen case. `custom` is required for
/// [`EmInitCase::Custom`] and ignored otherwise.
pub fn init_theta(
    case: EmInitCase,
    params: &OscillatorParams,
    custom: Option<&ThetaEstimate>,
) -> Result<ThetaEstimate> {
    let poor_sigma = (1e3, 1e-12);
    match case {
        EmInitCase::PoorA => {
            let sf2 = 1.0 / params.t.sqrt();
            Ok(ThetaEstimate {
                q_hat: Mat2::diag(sf2, PI * PI * params.t * params.t * sf2),
                sigma_f_sq_hat: poor_sigma.0,
                sigma_theta_sq_hat: poor_sigma.1,
            })
        }
        EmInitCase::GoodB => Ok(ThetaEstimate {
            q_hat: q_matrix(params),
            sigma_f_sq_hat: poor_sigma.0,
            sigma_theta_sq_hat: poor_sigma.1,
        }),
        EmInitCase::Genie => {
            let s = sigma_matrix(params)?;
            Ok(ThetaEstimate {
                q_hat: q_matrix(params),
                sigma_f_sq_hat: s.a,
                sigma_theta_sq_hat: s.d,
            })
        }
        EmInitCase::Custom => custom
            .copied()
            .ok_or_else(|| Error::Config("custom EM initialisation needs Q and Sigma".into())),
    }
}
