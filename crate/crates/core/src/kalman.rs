//! Per-node Kalman filter over the (frequency, phase) random walk
//! `x(k) = x(k-1) + u`, `y(k) = x(k) + v`, plus the one-lag smoothing
//! moments consumed by online EM.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::linalg::{Mat2, Vec2};
use crate::oscillator::{Observation, OscillatorParams};

/// Innovation (`q`) and measurement (`sigma`) covariances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    pub q: Mat2,
    pub sigma: Mat2,
}

/// Filter state for one iteration.
///
/// `mean`/`cov` hold the latest posterior (or the prior before the first
/// update); `pred_mean`/`pred_cov` hold the one-step prediction that the
/// smoother needs after the update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KalmanState {
    pub mean: Vec2,
    pub cov: Mat2,
    pub pred_mean: Vec2,
    pub pred_cov: Mat2,
}

impl KalmanState {
    pub fn new(mean: Vec2, cov: Mat2) -> Self {
        let cov = cov.symmetrize();
        Self {
            mean,
            cov,
            pred_mean: mean,
            pred_cov: cov,
        }
    }

    /// Prior for the first iteration: mean `[f_c, pi]`, covariance
    /// `diag(sigma^2, (2pi)^2/12)`.
    pub fn initial(p: &OscillatorParams) -> Self {
        let s = p.sigma_init_hz();
        Self::new(
            Vec2::new(p.f_c, PI),
            Mat2::diag(s * s, (2.0 * PI).powi(2) / 12.0),
        )
    }
}

/// `m_pred = m`, `V_pred = V + Q`.
pub fn predict(state: &KalmanState, model: &NoiseModel) -> KalmanState {
    KalmanState {
        pred_mean: state.mean,
        pred_cov: (state.cov + model.q).symmetrize(),
        ..*state
    }
}

/// Measurement update with `H = I`.
pub fn update(state: &KalmanState, obs: &Observation, model: &NoiseModel) -> Result<KalmanState> {
    let s = (state.pred_cov + model.sigma).symmetrize();
    let s_inv = s
        .inverse()
        .ok_or(Error::Singular("innovation covariance"))?;
    let gain = state.pred_cov * s_inv;
    let mean = state.pred_mean + gain.mul_vec(obs.as_vec() - state.pred_mean);
    let cov = (state.pred_cov - gain * state.pred_cov).symmetrize();
    if !mean.is_finite() || !cov.is_finite() {
        return Err(Error::NonFinite("Kalman update"));
    }
    Ok(KalmanState {
        mean,
        cov,
        ..*state
    })
}

/// Fixed-point smoother gain `U = V_{k-1|k-1} V_{k|k-1}^{-1}`.
///
/// Takes the state between `predict` and `update`, where `cov` is still the
/// previous posterior.
pub fn smoother_gain(state: &KalmanState) -> Result<Mat2> {
    let inv = state
        .pred_cov
        .inverse()
        .ok_or(Error::Singular("predicted covariance"))?;
    Ok(state.cov * inv)
}

/// Gain from a previous posterior and the current prediction.
pub fn smoother_gain_between(prev: &KalmanState, curr: &KalmanState) -> Result<Mat2> {
    let inv = curr
        .pred_cov
        .inverse()
        .ok_or(Error::Singular("predicted covariance"))?;
    Ok(prev.cov * inv)
}

/// Smoothed one-lag quantities for iteration `k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LagOneMoments {
    /// `m_{k|k}`.
    pub mean: Vec2,
    /// `V_{k|k}`.
    pub cov: Mat2,
    /// `m_{k-1|k}`.
    pub smoothed_mean: Vec2,
    /// `V_{k-1|k}`.
    pub smoothed_cov: Mat2,
    /// Smoother gain `U`.
    pub gain: Mat2,
}

impl LagOneMoments {
    /// `E[x(k) x(k)^T | y(1..k)]`.
    pub fn gamma_kk(&self) -> Mat2 {
        self.cov + self.mean.outer(self.mean)
    }

    /// `E[x(k) x(k-1)^T | y(1..k)]`.
    pub fn gamma_k_km1(&self) -> Mat2 {
        self.mean.outer(self.smoothed_mean) + self.cov * self.gain.transpose()
    }

    /// `E[x(k-1) x(k-1)^T | y(1..k)]`.
    pub fn gamma_km1_km1(&self) -> Mat2 {
        self.smoothed_cov + self.smoothed_mean.outer(self.smoothed_mean)
    }

    /// `E[(x(k) - x(k-1))(x(k) - x(k-1))^T | y(1..k)]`, i.e.
    /// `G_kk - G_k,k-1 - G_k,k-1^T + G_k-1,k-1`, formed from centred terms
    /// so the large carrier-frequency means cancel exactly.
    pub fn increment_second_moment(&self) -> Mat2 {
        let d = self.mean - self.smoothed_mean;
        let vu = self.cov * self.gain.transpose();
        (d.outer(d) + self.cov + self.smoothed_cov - vu - vu.transpose()).symmetrize()
    }
}

/// One-lag fixed-point smoothing moments from the previous posterior
/// (`prev`) and the current predicted/updated state (`curr`).
pub fn lag_one_moments(prev: &KalmanState, curr: &KalmanState, gain: Mat2) -> LagOneMoments {
    let smoothed_cov =
        (prev.cov + gain * (curr.cov - curr.pred_cov) * gain.transpose()).symmetrize();
    let smoothed_mean = prev.mean + gain.mul_vec(curr.mean - curr.pred_mean);
    LagOneMoments {
        mean: curr.mean,
        cov: curr.cov,
        smoothed_mean,
        smoothed_cov,
        gain,
    }
}

/// One in-neighbour's contribution to a post-consensus prior.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeighborCovariance {
    /// Posterior covariance the neighbour computed last round.
    pub cov: Mat2,
    /// `w[n][m]`.
    pub weight: f64,
    /// Neighbour's push-sum scalar before last round's mixing.
    pub s_before: f64,
}

/// Prior covariance after a consensus round:
/// `sum_m (w[n][m] s_m)^2 V_m / s_n^2`.
pub fn consensus_prior(neighbors: &[NeighborCovariance], s_n: f64) -> Mat2 {
    let mut acc = Mat2::ZERO;
    for nb in neighbors {
        let eta = (nb.weight * nb.s_before).powi(2);
        acc += nb.cov * eta;
    }
    (acc * (1.0 / (s_n * s_n))).symmetrize()
}
