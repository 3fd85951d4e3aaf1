//! Shared fixtures for the criterion benchmarks.

use psfpc_core::network::{generate, push_sum_weights};
use psfpc_core::oscillator::Observation;
use psfpc_core::{ArrayState, OscillatorParams, Purpose, StreamKey, TrueState, WeightMatrix};

/// Push-sum weights of a seeded random digraph.
pub fn push_sum_fixture(n: usize, c: f64, seed: u64) -> WeightMatrix {
    let mut rng = StreamKey::new(seed, 0, 0, 0, Purpose::Network).rng();
    let net = generate(n, c, true, &mut rng).expect("fixture network");
    push_sum_weights(&net).expect("fixture weights")
}

/// Array of `n` nodes spread around the carrier, with matching observations.
pub fn array_fixture(n: usize, params: &OscillatorParams) -> (ArrayState, Vec<Observation>) {
    let truth: Vec<TrueState> = (0..n)
        .map(|i| TrueState {
            f: params.f_c + 10.0 * i as f64,
            theta: 0.01 * i as f64,
        })
        .collect();
    let obs = truth
        .iter()
        .map(|t| Observation {
            f_hat: t.f,
            theta_hat: t.theta,
        })
        .collect();
    (ArrayState::new(truth), obs)
}
