//! Evaluation metrics: cross-node residual frequency/phase errors,
//! convergence detection, and the geometric-sum residual prediction.

use std::f64::consts::PI;

use crate::consensus::ArrayState;
use crate::error::Result;
use crate::oscillator::{adev_sigma, estimation_sigmas, jitter_sigma, OscillatorParams};

/// Cross-node error statistics of one iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorSnapshot {
    pub iteration: u64,
    /// `(f_n - mean_f) / f_c * 1e6`.
    pub freq_errors_ppm: Vec<f64>,
    /// `phi_n - mean_phi` in degrees, `phi_n = 2 pi f_n T + theta_n`.
    pub phase_errors_deg: Vec<f64>,
    pub std_freq_ppm: f64,
    pub std_phase_deg: f64,
}

/// Sample mean and (n - 1)-normalised standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    (mean, (ss / (n - 1) as f64).sqrt())
}

/// Errors relative to the instantaneous cross-node mean.
///
/// Frequencies are centred before forming the total phase so the
/// `2 pi f_c T` carrier term cancels exactly.
pub fn snapshot(array: &ArrayState, params: &OscillatorParams, iteration: u64) -> ErrorSnapshot {
    let n = array.n_nodes() as f64;
    // Offsets from the carrier are exact, so the mean loses nothing to it.
    let mean_offset = array.truth.iter().map(|t| t.f - params.f_c).sum::<f64>() / n;
    let mean_theta = array.truth.iter().map(|t| t.theta).sum::<f64>() / n;
    let df: Vec<f64> = array
        .truth
        .iter()
        .map(|t| (t.f - params.f_c) - mean_offset)
        .collect();
    let dphi: Vec<f64> = array
        .truth
        .iter()
        .zip(&df)
        .map(|(t, d)| 2.0 * PI * d * params.t + (t.theta - mean_theta))
        .collect();
    let freq_errors_ppm: Vec<f64> = df.iter().map(|d| d / params.f_c * 1e6).collect();
    let phase_errors_deg: Vec<f64> = dphi.iter().map(|p| p.to_degrees()).collect();
    let std_freq_ppm = mean_std(&freq_errors_ppm).1;
    let std_phase_deg = mean_std(&phase_errors_deg).1;
    ErrorSnapshot {
        iteration,
        freq_errors_ppm,
        phase_errors_deg,
        std_freq_ppm,
        std_phase_deg,
    }
}

/// Per-iteration injected error variance of the frequency (Hz^2) and phase
/// (rad^2) channels.
pub fn error_variance_channels(params: &OscillatorParams) -> Result<(f64, f64)> {
    let sf2 = adev_sigma(params).powi(2);
    let st2 = jitter_sigma(params).powi(2);
    let (mf, mt) = estimation_sigmas(params)?;
    let freq = sf2 + mf * mf;
    let phase = PI * PI * params.t * params.t * sf2 + mt * mt + st2;
    Ok((freq, phase))
}

/// `sigma_e^2 * sum_{i=1..I} lambda2^(2i)` for one channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TheoryPrediction {
    pub sigma_e_sq: f64,
    pub lambda2: f64,
    pub iterations: u64,
    pub predicted_variance: f64,
}

impl TheoryPrediction {
    pub fn new(sigma_e_sq: f64, lambda2: f64, iterations: u64) -> Self {
        let r = lambda2 * lambda2;
        let sum = if r == 0.0 {
            0.0
        } else if r < 1.0 {
            // r + r^2 + ... + r^I
            r * (1.0 - r.powi(iterations.min(i32::MAX as u64) as i32)) / (1.0 - r)
        } else {
            iterations as f64
        };
        Self {
            sigma_e_sq,
            lambda2,
            iterations,
            predicted_variance: sigma_e_sq * sum,
        }
    }

    /// `sigma_e^2 lambda2^2 / (1 - lambda2^2)`.
    pub fn limit(&self) -> f64 {
        let r = self.lambda2 * self.lambda2;
        self.sigma_e_sq * r / (1.0 - r)
    }
}

/// Predictions for both channels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualPrediction {
    pub frequency: TheoryPrediction,
    pub phase: TheoryPrediction,
}

impl ResidualPrediction {
    /// Variance of the total phase `2 pi f T + theta`, rad^2, treating the
    /// two channels as independent.
    pub fn total_phase_variance(&self, params: &OscillatorParams) -> f64 {
        (2.0 * PI * params.t).powi(2) * self.frequency.predicted_variance
            + self.phase.predicted_variance
    }
}

/// Residual variance after `iterations` rounds, dropping the constant term.
pub fn theoretical_residual(
    params: &OscillatorParams,
    lambda2: f64,
    iterations: u64,
) -> Result<ResidualPrediction> {
    let (freq, phase) = error_variance_channels(params)?;
    Ok(ResidualPrediction {
        frequency: TheoryPrediction::new(freq, lambda2, iterations),
        phase: TheoryPrediction::new(phase, lambda2, iterations),
    })
}

pub const DEFAULT_WINDOW: usize = 10;
pub const DEFAULT_REL_TOL: f64 = 0.1;

/// First index `k` whose window mean over `[k, k + window)` is within
/// `rel_tol` of the mean over the final window.
pub fn detect_convergence(series: &[f64], window: usize, rel_tol: f64) -> Option<usize> {
    if window == 0 || series.len() < window {
        return None;
    }
    let window_mean = |k: usize| series[k..k + window].iter().sum::<f64>() / window as f64;
    let last = series.len() - window;
    let target = window_mean(last);
    (0..=last).find(|&k| (window_mean(k) - target).abs() <= rel_tol * target.abs())
}

/// [`detect_convergence`] on the `std_phase_deg` of a snapshot series.
pub fn detect_convergence_snapshots(
    series: &[ErrorSnapshot],
    window: usize,
    rel_tol: f64,
) -> Option<u64> {
    let values: Vec<f64> = series.iter().map(|s| s.std_phase_deg).collect();
    detect_convergence(&values, window, rel_tol).map(|k| series[k].iteration)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oscillator::TrueState;

    fn array(states: &[(f64, f64)]) -> ArrayState {
        ArrayState::new(
            states
                .iter()
                .map(|&(f, theta)| TrueState { f, theta })
                .collect(),
        )
    }

    #[test]
    fn identical_nodes_have_no_error() {
        let a = array(&[(1e9, 1.0); 5]);
        let s = snapshot(&a, &OscillatorParams::default(), 3);
        assert_eq!(s.iteration, 3);
        assert!(s.freq_errors_ppm.iter().all(|&e| e == 0.0));
        assert_eq!(s.std_phase_deg, 0.0);
        assert_eq!(s.std_freq_ppm, 0.0);
    }

    #[test]
    fn one_hertz_offsets_in_ppm() {
        let a = array(&[(1e9 + 1.0, 0.0), (1e9 - 1.0, 0.0)]);
        let s = snapshot(&a, &OscillatorParams::default(), 0);
        assert!((s.freq_errors_ppm[0] - 0.001).abs() < 1e-15);
        assert!((s.freq_errors_ppm[1] + 0.001).abs() < 1e-15);
        let phi = (2.0 * PI * 1.0 * 1e-4).to_degrees();
        assert!((s.phase_errors_deg[0] - phi).abs() < 1e-12);
    }

    #[test]
    fn std_matches_two_pass_oracle() {
        let states: Vec<(f64, f64)> = (0..17)
            .map(|i| (1e9 + (i as f64 * 1.7).sin() * 300.0, (i as f64 * 0.3).cos()))
            .collect();
        let a = array(&states);
        let p = OscillatorParams::default();
        let s = snapshot(&a, &p, 0);
        // Independent route: phase per node in degrees, two-pass variance.
        let phases: Vec<f64> = states
            .iter()
            .map(|&(f, th)| ((2.0 * PI * (f - 1e9) * p.t) + th).to_degrees())
            .collect();
        let m = phases.iter().sum::<f64>() / 17.0;
        let v = phases.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / 16.0;
        assert!((s.std_phase_deg - v.sqrt()).abs() < 1e-12);
        let resid = s.phase_errors_deg.iter().sum::<f64>();
        assert!(resid.abs() < 1e-9, "{resid}");
    }

    #[test]
    fn channel_variances() {
        let (f, ph) = error_variance_channels(&OscillatorParams::default()).unwrap();
        assert!((f / 1.57e5 - 1.0).abs() < 0.01, "{f}");
        assert!(ph > 0.0);
        let quiet = OscillatorParams::default().noiseless();
        assert_eq!(error_variance_channels(&quiet).unwrap(), (0.0, 0.0));
        let jitter_only = OscillatorParams {
            beta1: 0.0,
            beta2: 0.0,
            snr_linear: f64::INFINITY,
            ..OscillatorParams::default()
        };
        let (f, ph) = error_variance_channels(&jitter_only).unwrap();
        assert_eq!(f, 0.0);
        assert!((ph - 2.0 * 10f64.powf(-5.346)).abs() < 1e-18);
    }

    #[test]
    fn theory_sums() {
        assert_eq!(TheoryPrediction::new(1.0, 0.0, 100).predicted_variance, 0.0);
        let t = TheoryPrediction::new(1.0, 0.5, 10_000);
        assert!((t.predicted_variance - 1.0 / 3.0).abs() < 1e-15);
        assert!((t.limit() - 1.0 / 3.0).abs() < 1e-15);
        let brute: f64 = (1..=7).map(|i| 0.8f64.powi(2 * i)).sum();
        assert!(
            (TheoryPrediction::new(2.0, 0.8, 7).predicted_variance - 2.0 * brute).abs() < 1e-14
        );
        assert!(
            TheoryPrediction::new(1.0, 0.9, 100).predicted_variance
                > TheoryPrediction::new(1.0, 0.5, 100).predicted_variance
        );
    }

    #[test]
    fn constant_series_converges_immediately() {
        assert_eq!(detect_convergence(&[2.0; 30], 10, 0.1), Some(0));
    }

    #[test]
    fn increasing_series_converges_only_at_the_end() {
        let s: Vec<f64> = (0..100).map(|i| (i as f64 * 0.1).exp()).collect();
        // Only the reference window itself qualifies.
        assert_eq!(detect_convergence(&s, 10, 1e-3), Some(90));
        assert_eq!(detect_convergence(&s[..5], 10, 0.1), None);
    }

    #[test]
    fn geometric_decay_detection() {
        let (floor, amp, r, w, tol) = (2.0, 500.0, 0.8f64, 10usize, 0.1);
        let s: Vec<f64> = (0..200).map(|k| floor + amp * r.powi(k)).collect();
        // Closed form: window mean of the decaying term at k is
        // amp r^k (1 - r^w) / ((1 - r) w); the final window is floor plus a
        // negligible remainder.
        let tail =
            |k: usize| amp * r.powi(k as i32) * (1.0 - r.powi(w as i32)) / ((1.0 - r) * w as f64);
        let target = floor + tail(190);
        let expected = (0..)
            .find(|&k| floor + tail(k) - target <= tol * target)
            .unwrap();
        assert_eq!(detect_convergence(&s, w, tol), Some(expected));
    }
}
