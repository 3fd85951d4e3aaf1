//! Per-iteration pipeline: drift, observe, optionally filter (and learn the
//! noise model), then mix.

use crate::error::{Error, Result};
use crate::kalman::{
    consensus_prior, lag_one_moments, predict, smoother_gain, update, KalmanState,
    NeighborCovariance,
};
use crate::linalg::Vec2;
use crate::network::WeightMatrix;
use crate::online_em::{em_update, EmAccumulators, ThetaEstimate};
use crate::oscillator::{init_state, observe, transition, Observation, OscillatorParams};
use crate::rng::{Purpose, StreamKey};

use super::{dfpc_step, psfpc_step, ArrayState, NodeFilter};

/// Consensus rule applied each round.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mixing {
    PushSum,
    Average,
}

/// Whether and how nodes filter their observations before mixing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FilterMode {
    /// Mix raw observations.
    None,
    /// Mix Kalman posterior means. With `em_alpha` set, `{Q, Sigma}` are
    /// re-estimated every iteration starting from `theta0`; otherwise they
    /// stay at `theta0`.
    Kalman {
        theta0: ThetaEstimate,
        em_alpha: Option<f64>,
    },
}

/// Everything one trial needs besides the network.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimSettings {
    pub params: OscillatorParams,
    pub mixing: Mixing,
    pub filter: FilterMode,
    /// Seed of this trial's RNG streams.
    pub seed: u64,
    pub trial: u64,
}

/// A trial in progress. Iteration 0 is the initial draw; each
/// [`step`](Self::step) runs one full round.
#[derive(Debug, Clone)]
pub struct Simulation<'w> {
    settings: SimSettings,
    weights: &'w WeightMatrix,
    state: ArrayState,
    iteration: u64,
}

impl<'w> Simulation<'w> {
    pub fn new(settings: SimSettings, weights: &'w WeightMatrix) -> Result<Self> {
        settings.params.validate()?;
        let n = weights.n();
        let truth = (0..n)
            .map(|node| {
                init_state(
                    &settings.params,
                    &mut settings.key(node, 0, Purpose::InitialState).rng(),
                )
            })
            .collect();
        let mut state = ArrayState::new(truth);
        if let FilterMode::Kalman { theta0, em_alpha } = settings.filter {
            let em = EmAccumulators::new(em_alpha.unwrap_or(0.5))?;
            let prior = KalmanState::initial(&settings.params);
            state.filters = Some(vec![
                NodeFilter {
                    prior,
                    theta: theta0,
                    em
                };
                n
            ]);
        }
        Ok(Self {
            settings,
            weights,
            state,
            iteration: 0,
        })
    }

    pub fn state(&self) -> &ArrayState {
        &self.state
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn settings(&self) -> &SimSettings {
        &self.settings
    }

    pub fn step(&mut self) -> Result<()> {
        let k = self.iteration + 1;
        let s = &self.settings;
        let p = &s.params;
        let n = self.state.n_nodes();

        let mut drifted = self.state.clone();
        for (node, truth) in drifted.truth.iter_mut().enumerate() {
            *truth = transition(*truth, p, &mut s.key(node, k, Purpose::Drift).rng());
        }
        let observations = drifted
            .truth
            .iter()
            .enumerate()
            .map(|(node, truth)| {
                observe(*truth, p, &mut s.key(node, k, Purpose::Measurement).rng())
            })
            .collect::<Result<Vec<Observation>>>()?;

        let mut posteriors = None;
        let inputs = match (s.filter, drifted.filters.as_mut()) {
            (FilterMode::Kalman { em_alpha, .. }, Some(filters)) => {
                let mut post = Vec::with_capacity(n);
                for (f, obs) in filters.iter_mut().zip(&observations) {
                    let model = f.theta.noise_model();
                    let prev = f.prior;
                    let pred = predict(&prev, &model);
                    let gain = smoother_gain(&pred)?;
                    let curr = update(&pred, obs, &model)?;
                    if em_alpha.is_some() {
                        let moments = lag_one_moments(&prev, &curr, gain);
                        let (acc, est) = em_update(&f.em, &moments, obs, curr.mean);
                        f.em = acc;
                        f.theta = est;
                    }
                    post.push(curr);
                }
                let means = post.iter().map(|c| Observation::from_vec(c.mean)).collect();
                posteriors = Some(post);
                means
            }
            _ => observations,
        };

        let mut next = match s.mixing {
            Mixing::PushSum => psfpc_step(&drifted, self.weights, &inputs)?,
            Mixing::Average => dfpc_step(&drifted, self.weights, &inputs)?,
        };

        if let (Some(post), Some(filters)) = (posteriors, next.filters.as_mut()) {
            for (node, f) in filters.iter_mut().enumerate() {
                let neighbors: Vec<NeighborCovariance> = self
                    .weights
                    .row(node)
                    .iter()
                    .map(|&(m, w)| NeighborCovariance {
                        cov: post[m].cov,
                        weight: w,
                        s_before: drifted.push_sum[m].s,
                    })
                    .collect();
                let cov = consensus_prior(&neighbors, next.push_sum[node].s);
                f.prior = KalmanState::new(next.truth[node].as_vec(), cov);
            }
        }

        if next
            .truth
            .iter()
            .any(|t| !Vec2::new(t.f, t.theta).is_finite())
        {
            return Err(Error::NonFinite("array state"));
        }
        self.state = next;
        self.iteration = k;
        Ok(())
    }
}

impl SimSettings {
    pub fn key(&self, node: usize, iteration: u64, purpose: Purpose) -> StreamKey {
        StreamKey::new(self.seed, self.trial, node as u64, iteration, purpose)
    }
}

/// Runs `iterations` rounds and returns the state after each, starting with
/// the initial state.
pub fn run_scenario(
    settings: SimSettings,
    weights: &WeightMatrix,
    iterations: u64,
) -> Result<Vec<ArrayState>> {
    let mut sim = Simulation::new(settings, weights)?;
    let mut out = Vec::with_capacity(iterations as usize + 1);
    out.push(sim.state().clone());
    for _ in 0..iterations {
        sim.step()?;
        out.push(sim.state().clone());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{generate, metropolis_weights, push_sum_weights};
    use crate::online_em::{init_theta, EmInitCase};

    fn settings(params: OscillatorParams, mixing: Mixing, filter: FilterMode) -> SimSettings {
        SimSettings {
            params,
            mixing,
            filter,
            seed: 11,
            trial: 0,
        }
    }

    #[test]
    fn noiseless_push_sum_reaches_exact_consensus() {
        let params = OscillatorParams::default().noiseless();
        let net = generate(
            20,
            0.3,
            true,
            &mut StreamKey::new(3, 0, 0, 0, Purpose::Network).rng(),
        )
        .unwrap();
        let w = push_sum_weights(&net).unwrap();
        let states =
            run_scenario(settings(params, Mixing::PushSum, FilterMode::None), &w, 200).unwrap();
        let mean0 = states[0].truth.iter().map(|t| t.f).sum::<f64>() / 20.0;
        let last = states.last().unwrap();
        let spread = last.truth.iter().map(|t| t.f).fold(f64::MIN, f64::max)
            - last.truth.iter().map(|t| t.f).fold(f64::MAX, f64::min);
        assert!(spread < 1e-9 * 1e9 * 1e-6, "{spread}");
        assert!((last.truth[0].f - mean0).abs() < 1e-5);
    }

    #[test]
    fn identical_runs_are_identical() {
        let params = OscillatorParams::default();
        let net = generate(
            10,
            0.5,
            false,
            &mut StreamKey::new(4, 0, 0, 0, Purpose::Network).rng(),
        )
        .unwrap();
        let w = metropolis_weights(&net).unwrap();
        let theta0 = init_theta(EmInitCase::GoodB, &params, None).unwrap();
        let s = settings(
            params,
            Mixing::Average,
            FilterMode::Kalman {
                theta0,
                em_alpha: Some(0.99),
            },
        );
        let a = run_scenario(s, &w, 30).unwrap();
        let b = run_scenario(s, &w, 30).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn filtered_run_stays_finite() {
        let params = OscillatorParams::default();
        let net = generate(
            20,
            0.2,
            true,
            &mut StreamKey::new(5, 0, 0, 0, Purpose::Network).rng(),
        )
        .unwrap();
        let w = push_sum_weights(&net).unwrap();
        let theta0 = init_theta(EmInitCase::PoorA, &params, None).unwrap();
        let s = settings(
            params,
            Mixing::PushSum,
            FilterMode::Kalman {
                theta0,
                em_alpha: Some(0.99),
            },
        );
        let states = run_scenario(s, &w, 100).unwrap();
        let last = states.last().unwrap();
        assert!(last
            .filters
            .as_ref()
            .unwrap()
            .iter()
            .all(|f| f.theta.q_hat.is_finite()));
        assert!((last.push_sum_mass() - 20.0).abs() < 1e-9 * 20.0);
    }
}
