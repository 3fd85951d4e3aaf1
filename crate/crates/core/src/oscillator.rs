//! Local oscillator dynamics and frequency/phase estimation noise.
//!
//! Each node's oscillator random-walks in frequency (ADEV-parameterised
//! drift), picks up a deterministic phase offset coupled to that drift, and
//! accumulates phase jitter. Estimation errors are injected at their CRLB
//! levels rather than produced by a waveform-level estimator.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{Mat2, Vec2};

/// Every stochastic parameter of the oscillator and measurement model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OscillatorParams {
    /// Carrier frequency, Hz.
    pub f_c: f64,
    /// ADEV design constants.
    pub beta1: f64,
    pub beta2: f64,
    /// Integrated phase noise power, dB. `-inf` disables jitter.
    pub a_dbc: f64,
    /// Initial clock accuracy, ppm.
    pub sigma_init_ppm: f64,
    /// Update interval, s.
    pub t: f64,
    /// Sampling frequency, Hz.
    pub f_s: f64,
    /// Linear SNR. `+inf` disables estimation noise.
    pub snr_linear: f64,
    /// Fixed initial phase; `None` draws it from U(0, 2pi).
    pub initial_phase: Option<f64>,
}

impl Default for OscillatorParams {
    /// f_c = 1 GHz, f_s = 10 MHz, T = 0.1 ms, quartz ADEV constants,
    /// A = -53.46 dB, 100 ppm initial accuracy, SNR = 30 dB.
    fn default() -> Self {
        Self {
            f_c: 1e9,
            beta1: 5e-19,
            beta2: 5e-19,
            a_dbc: -53.46,
            sigma_init_ppm: 100.0,
            t: 1e-4,
            f_s: 1e7,
            snr_linear: db_to_linear(30.0),
            initial_phase: None,
        }
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

impl OscillatorParams {
    /// Drift, jitter and estimation noise all switched off.
    pub fn noiseless(self) -> Self {
        Self {
            beta1: 0.0,
            beta2: 0.0,
            a_dbc: f64::NEG_INFINITY,
            snr_linear: f64::INFINITY,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidParameter(what.to_string()));
        if !(self.f_c > 0.0 && self.f_c.is_finite()) {
            return bad("f_c must be positive and finite");
        }
        if !(self.t > 0.0 && self.t.is_finite()) {
            return bad("T must be positive and finite");
        }
        if !(self.f_s > 0.0 && self.f_s.is_finite()) {
            return bad("f_s must be positive and finite");
        }
        if !(self.snr_linear > 0.0) {
            return bad("SNR must be positive");
        }
        if !(self.beta1 >= 0.0 && self.beta2 >= 0.0) {
            return bad("ADEV constants must be non-negative");
        }
        if !(self.sigma_init_ppm >= 0.0) {
            return bad("initial clock accuracy must be non-negative");
        }
        if self.a_dbc.is_nan() || self.a_dbc == f64::INFINITY {
            return bad("phase noise power must be finite or -inf");
        }
        let l = self.samples_per_window();
        if l < 1.0 {
            return Err(Error::ObservationWindow(l));
        }
        Ok(())
    }

    /// L = T * f_s.
    pub fn samples_per_window(&self) -> f64 {
        self.t * self.f_s
    }

    /// Initial frequency std, Hz.
    pub fn sigma_init_hz(&self) -> f64 {
        self.sigma_init_ppm * 1e-6 * self.f_c
    }
}

/// Instantaneous oscillator state. Phase is kept unwrapped.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TrueState {
    pub f: f64,
    pub theta: f64,
}

impl TrueState {
    pub fn as_vec(self) -> Vec2 {
        Vec2::new(self.f, self.theta)
    }
}

/// A node's noisy estimate of its own frequency and phase.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Observation {
    pub f_hat: f64,
    pub theta_hat: f64,
}

impl Observation {
    pub fn as_vec(self) -> Vec2 {
        Vec2::new(self.f_hat, self.theta_hat)
    }

    pub fn from_vec(v: Vec2) -> Self {
        Self {
            f_hat: v.x,
            theta_hat: v.y,
        }
    }
}

/// Per-interval frequency drift std `f_c * sqrt(beta1 / T + beta2 * T)`, Hz.
pub fn adev_sigma(p: &OscillatorParams) -> f64 {
    p.f_c * (p.beta1 / p.t + p.beta2 * p.t).sqrt()
}

/// Phase jitter std `sqrt(2 * 10^(A/10))`, rad.
pub fn jitter_sigma(p: &OscillatorParams) -> f64 {
    (2.0 * 10f64.powf(p.a_dbc / 10.0)).sqrt()
}

/// CRLB standard deviations of the frequency (Hz) and phase (rad) estimators.
pub fn estimation_sigmas(p: &OscillatorParams) -> Result<(f64, f64)> {
    let l = p.samples_per_window();
    if !(l >= 1.0) {
        return Err(Error::ObservationWindow(l));
    }
    let sigma_f = p.f_c * (6.0 / ((2.0 * PI).powi(2) * l.powi(3) * p.snr_linear)).sqrt();
    let sigma_theta = 2.0 / (l * p.snr_linear);
    Ok((sigma_f, sigma_theta))
}

/// Draws `f(0) ~ N(f_c, sigma^2)` and `theta(0) ~ U(0, 2pi)` (or the fixed
/// phase when configured).
pub fn init_state<R: Rng + ?Sized>(p: &OscillatorParams, rng: &mut R) -> TrueState {
    let z: f64 = rng.sample(StandardNormal);
    let f = p.f_c + p.sigma_init_hz() * z;
    let theta = match p.initial_phase {
        Some(phase) => phase,
        None => rng.random_range(0.0..2.0 * PI),
    };
    TrueState { f, theta }
}

/// One update interval of drift and jitter.
///
/// The frequency step and its induced phase offset come from one shared
/// draw, so `dtheta_f == -pi * T * df` holds exactly.
pub fn transition<R: Rng + ?Sized>(
    state: TrueState,
    p: &OscillatorParams,
    rng: &mut R,
) -> TrueState {
    let z_f: f64 = rng.sample(StandardNormal);
    let z_theta: f64 = rng.sample(StandardNormal);
    let df = adev_sigma(p) * z_f;
    let dtheta_f = -PI * p.t * df;
    let dtheta = jitter_sigma(p) * z_theta;
    TrueState {
        f: state.f + df,
        theta: state.theta + dtheta_f + dtheta,
    }
}

/// Adds independent zero-mean Gaussian estimation errors.
pub fn observe<R: Rng + ?Sized>(
    state: TrueState,
    p: &OscillatorParams,
    rng: &mut R,
) -> Result<Observation> {
    let (sf, st) = estimation_sigmas(p)?;
    let e_f: f64 = rng.sample(StandardNormal);
    let e_theta: f64 = rng.sample(StandardNormal);
    Ok(Observation {
        f_hat: state.f + sf * e_f,
        theta_hat: state.theta + st * e_theta,
    })
}

/// Innovation covariance of the (frequency, phase) random walk.
pub fn q_matrix(p: &OscillatorParams) -> Mat2 {
    let sf2 = adev_sigma(p).powi(2);
    let st2 = jitter_sigma(p).powi(2);
    let cross = -PI * p.t * sf2;
    Mat2::new(sf2, cross, cross, PI * PI * p.t * p.t * sf2 + st2)
}

/// Measurement covariance `diag(sigma_f^m^2, sigma_theta^m^2)`.
pub fn sigma_matrix(p: &OscillatorParams) -> Result<Mat2> {
    let (sf, st) = estimation_sigmas(p)?;
    Ok(Mat2::diag(sf * sf, st * st))
}
