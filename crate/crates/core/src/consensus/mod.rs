//! Synchronous consensus rounds over the whole array: push-sum (PsFPC) for
//! column-stochastic weights and plain weighted averaging (DFPC) for
//! doubly-stochastic weights.
//!
//! Every node reads only the previous round's values, so results do not
//! depend on the order in which nodes are visited.
//!
//! Frequencies are mixed as offsets from a per-round reference (the first
//! input), which is exact in real arithmetic and keeps the carrier out of
//! the rounding error: once nodes agree, they agree to the last bit.

mod pipeline;

pub use pipeline::{run_scenario, FilterMode, Mixing, SimSettings, Simulation};

use crate::error::{Error, Result};
use crate::kalman::KalmanState;
use crate::network::{WeightKind, WeightMatrix};
use crate::online_em::{EmAccumulators, ThetaEstimate};
use crate::oscillator::{Observation, TrueState};

/// Push-sum numerators and weight scalar of one node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PushSumNode {
    pub x_f: f64,
    pub x_theta: f64,
    pub s: f64,
}

impl PushSumNode {
    fn fresh(state: TrueState) -> Self {
        Self {
            x_f: state.f,
            x_theta: state.theta,
            s: 1.0,
        }
    }
}

/// Filter and EM state a node carries between rounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeFilter {
    /// Prior for the next iteration's predict step.
    pub prior: KalmanState,
    /// Estimate used by the next iteration's filter.
    pub theta: ThetaEstimate,
    pub em: EmAccumulators,
}

/// Whole-array state between rounds.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrayState {
    pub truth: Vec<TrueState>,
    pub push_sum: Vec<PushSumNode>,
    pub filters: Option<Vec<NodeFilter>>,
}

impl ArrayState {
    /// Starts every push-sum scalar at `s(0) = 1`.
    pub fn new(truth: Vec<TrueState>) -> Self {
        let push_sum = truth.iter().copied().map(PushSumNode::fresh).collect();
        Self {
            truth,
            push_sum,
            filters: None,
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.truth.len()
    }

    /// `sum_n s_n`.
    pub fn push_sum_mass(&self) -> f64 {
        self.push_sum.iter().map(|p| p.s).sum()
    }
}

fn check_sizes(array: &ArrayState, w: &WeightMatrix, inputs: &[Observation]) -> Result<()> {
    let n = array.n_nodes();
    if w.n() != n {
        return Err(Error::NodeCount {
            expected: n,
            got: w.n(),
        });
    }
    if inputs.len() != n {
        return Err(Error::NodeCount {
            expected: n,
            got: inputs.len(),
        });
    }
    Ok(())
}

fn reference(inputs: &[Observation]) -> f64 {
    inputs.first().map_or(0.0, |o| o.f_hat)
}

/// One PsFPC round:
/// `x_n = sum_m w[n][m] z_m s_m(k-1)`, `s_n = sum_m w[n][m] s_m(k-1)`,
/// `z_n = x_n / s_n`.
pub fn psfpc_step(
    array: &ArrayState,
    w: &WeightMatrix,
    inputs: &[Observation],
) -> Result<ArrayState> {
    let order: Vec<usize> = (0..array.n_nodes()).collect();
    psfpc_step_in_order(array, w, inputs, &order)
}

/// [`psfpc_step`] visiting nodes in `order`, which must be a permutation.
pub fn psfpc_step_in_order(
    array: &ArrayState,
    w: &WeightMatrix,
    inputs: &[Observation],
    order: &[usize],
) -> Result<ArrayState> {
    check_sizes(array, w, inputs)?;
    let f_ref = reference(inputs);
    let mut next = array.clone();
    for &n in order {
        let (mut x_f, mut x_theta, mut s) = (0.0, 0.0, 0.0);
        for &(m, wnm) in w.row(n) {
            let s_m = array.push_sum[m].s;
            x_f += wnm * (inputs[m].f_hat - f_ref) * s_m;
            x_theta += wnm * inputs[m].theta_hat * s_m;
            s += wnm * s_m;
        }
        if !(s > 0.0) {
            return Err(Error::WeightUnderflow { node: n, value: s });
        }
        let truth = TrueState {
            f: f_ref + x_f / s,
            theta: x_theta / s,
        };
        if !(truth.f.is_finite() && truth.theta.is_finite()) {
            return Err(Error::NonFinite("push-sum ratio"));
        }
        next.push_sum[n] = PushSumNode {
            x_f: x_f + f_ref * s,
            x_theta,
            s,
        };
        next.truth[n] = truth;
    }
    Ok(next)
}

/// One DFPC round: `z_n = sum_m w[n][m] z_m`. Push-sum scalars are left
/// untouched.
pub fn dfpc_step(
    array: &ArrayState,
    w: &WeightMatrix,
    inputs: &[Observation],
) -> Result<ArrayState> {
    if w.kind() != WeightKind::DoublyStochastic {
        return Err(Error::WeightKind {
            expected: "doubly-stochastic",
        });
    }
    check_sizes(array, w, inputs)?;
    let f_ref = reference(inputs);
    let mut next = array.clone();
    for (n, slot) in next.truth.iter_mut().enumerate() {
        let (mut f, mut theta) = (0.0, 0.0);
        for &(m, wnm) in w.row(n) {
            f += wnm * (inputs[m].f_hat - f_ref);
            theta += wnm * inputs[m].theta_hat;
        }
        if !(f.is_finite() && theta.is_finite()) {
            return Err(Error::NonFinite("average consensus"));
        }
        *slot = TrueState {
            f: f_ref + f,
            theta,
        };
    }
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{metropolis_weights, push_sum_weights, DirectedNetwork};

    fn obs_of(array: &ArrayState) -> Vec<Observation> {
        array
            .truth
            .iter()
            .map(|s| Observation {
                f_hat: s.f,
                theta_hat: s.theta,
            })
            .collect()
    }

    fn states(fs: &[f64]) -> ArrayState {
        ArrayState::new(fs.iter().map(|&f| TrueState { f, theta: -f }).collect())
    }

    #[test]
    fn doubly_stochastic_keeps_s_at_one() {
        let net = DirectedNetwork::from_edges(3, [(0, 1), (1, 0), (1, 2), (2, 1)]).unwrap();
        let w = metropolis_weights(&net).unwrap();
        let a = states(&[0.0, 1.0, 2.0]);
        let next = psfpc_step(&a, &w, &obs_of(&a)).unwrap();
        for (n, p) in next.push_sum.iter().enumerate() {
            assert!((p.s - 1.0).abs() < 1e-15);
            let avg: f64 = w.row(n).iter().map(|&(m, wnm)| wnm * a.truth[m].f).sum();
            assert!((next.truth[n].f - avg).abs() < 1e-15);
        }
    }

    #[test]
    fn path_metropolis_average() {
        let net = DirectedNetwork::from_edges(3, [(0, 1), (1, 0), (1, 2), (2, 1)]).unwrap();
        let w = metropolis_weights(&net).unwrap();
        let a = states(&[0.0, 1.0, 2.0]);
        let next = dfpc_step(&a, &w, &obs_of(&a)).unwrap();
        let expected = [1.0 / 3.0, 1.0, 5.0 / 3.0];
        for (s, e) in next.truth.iter().zip(expected) {
            assert!((s.f - e).abs() < 1e-15);
        }
    }

    #[test]
    fn complete_graph_reaches_average_in_one_round() {
        let edges = (0..4).flat_map(|a| (0..4).filter(move |&b| b != a).map(move |b| (a, b)));
        let net = DirectedNetwork::from_edges(4, edges).unwrap();
        let w = metropolis_weights(&net).unwrap();
        let a = states(&[1.0, 2.0, 3.0, 10.0]);
        let next = dfpc_step(&a, &w, &obs_of(&a)).unwrap();
        for s in &next.truth {
            assert!((s.f - 4.0).abs() < 1e-14);
        }
    }

    #[test]
    fn dfpc_rejects_column_stochastic() {
        let net = DirectedNetwork::from_edges(3, [(0, 1), (1, 2), (2, 0)]).unwrap();
        let w = push_sum_weights(&net).unwrap();
        let a = states(&[0.0, 1.0, 2.0]);
        assert!(matches!(
            dfpc_step(&a, &w, &obs_of(&a)),
            Err(Error::WeightKind { .. })
        ));
    }

    #[test]
    fn size_mismatch_is_rejected() {
        let net = DirectedNetwork::from_edges(3, [(0, 1), (1, 2), (2, 0)]).unwrap();
        let w = push_sum_weights(&net).unwrap();
        let a = states(&[0.0, 1.0]);
        assert!(matches!(
            psfpc_step(&a, &w, &obs_of(&a)),
            Err(Error::NodeCount { .. })
        ));
    }

    #[test]
    fn zero_weight_scalar_is_an_error() {
        let net = DirectedNetwork::from_edges(3, [(0, 1), (1, 2), (2, 0)]).unwrap();
        let w = push_sum_weights(&net).unwrap();
        let mut a = states(&[0.0, 1.0, 2.0]);
        for p in &mut a.push_sum {
            p.s = 0.0;
        }
        assert!(matches!(
            psfpc_step(&a, &w, &obs_of(&a)),
            Err(Error::WeightUnderflow { .. })
        ));
    }

    /// Noiseless directed 3-cycle: iterate against the closed form
    /// `W^k (z0 . 1) / W^k 1`.
    #[test]
    fn cycle_converges_to_average() {
        let net = DirectedNetwork::from_edges(3, [(0, 1), (1, 2), (2, 0)]).unwrap();
        let w = push_sum_weights(&net).unwrap();
        let mut a = states(&[0.0, 3.0, 6.0]);
        let mut num = nalgebra::DVector::from_vec(vec![0.0, 3.0, 6.0]);
        let mut den = nalgebra::DVector::from_element(3, 1.0);
        for _ in 0..60 {
            a = psfpc_step(&a, &w, &obs_of(&a)).unwrap();
            num = w.dense() * num;
            den = w.dense() * den;
        }
        for (n, s) in a.truth.iter().enumerate() {
            assert!((s.f - 3.0).abs() < 1e-9);
            assert!((s.f - num[n] / den[n]).abs() < 1e-12);
        }
    }
}
