//! Push-sum frequency and phase consensus for distributed phased arrays.
//!
//! The crate simulates free-running oscillators that exchange noisy
//! frequency/phase estimates over a directed network, optionally smoothing
//! them with per-node Kalman filters whose noise covariances are learned
//! online by EM.

// `!(x > 0.0)` is used deliberately so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod config;
pub mod consensus;
pub mod error;
pub mod harness;
pub mod kalman;
pub mod linalg;
pub mod network;
pub mod online_em;
pub mod oscillator;
pub mod rng;

pub use analysis::{ErrorSnapshot, TheoryPrediction};
pub use config::{Algorithm, ConfigOverrides, EmMode, ScenarioConfig};
pub use consensus::{ArrayState, FilterMode, Mixing, PushSumNode, SimSettings, Simulation};
pub use error::{Error, Result};
pub use harness::{run, RunOutput, TrialRecord};
pub use kalman::{KalmanState, NoiseModel};
pub use linalg::{Mat2, Vec2};
pub use network::{DirectedNetwork, SpectralInfo, WeightKind, WeightMatrix};
pub use online_em::{EmAccumulators, EmInitCase, ThetaEstimate};
pub use oscillator::{Observation, OscillatorParams, TrueState};
pub use rng::{Purpose, StreamKey};
