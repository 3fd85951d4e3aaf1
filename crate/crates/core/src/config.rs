//! Scenario configuration: defaults, flat TOML files, and overrides.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Deserialize;

use crate::consensus::{FilterMode, Mixing, SimSettings};
use crate::error::{Error, Result};
use crate::linalg::Mat2;
use crate::online_em::{init_theta, EmInitCase, ThetaEstimate, DEFAULT_ALPHA};
use crate::oscillator::{db_to_linear, OscillatorParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Psfpc,
    Dfpc,
    KfPsfpc,
    KfDfpc,
    EmKfPsfpc,
    EmKfDfpc,
}

impl Algorithm {
    pub const ALL: [Algorithm; 6] = [
        Algorithm::Psfpc,
        Algorithm::Dfpc,
        Algorithm::KfPsfpc,
        Algorithm::KfDfpc,
        Algorithm::EmKfPsfpc,
        Algorithm::EmKfDfpc,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Psfpc => "psfpc",
            Algorithm::Dfpc => "dfpc",
            Algorithm::KfPsfpc => "kf_psfpc",
            Algorithm::KfDfpc => "kf_dfpc",
            Algorithm::EmKfPsfpc => "em_kf_psfpc",
            Algorithm::EmKfDfpc => "em_kf_dfpc",
        }
    }

    pub fn mixing(self) -> Mixing {
        match self {
            Algorithm::Psfpc | Algorithm::KfPsfpc | Algorithm::EmKfPsfpc => Mixing::PushSum,
            _ => Mixing::Average,
        }
    }

    pub fn filtered(self) -> bool {
        !matches!(self, Algorithm::Psfpc | Algorithm::Dfpc)
    }

    pub fn learns_noise(self) -> bool {
        matches!(self, Algorithm::EmKfPsfpc | Algorithm::EmKfDfpc)
    }
}

impl FromStr for Algorithm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.as_str() == s.replace('-', "_"))
            .ok_or_else(|| Error::Config(format!("unknown algorithm `{s}`")))
    }
}

/// How the filter's noise covariances are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmMode {
    /// Learned online.
    Em,
    /// Frozen at the initial guess.
    Naive,
    /// Fixed at the truth.
    Genie,
}

impl EmMode {
    pub fn as_str(self) -> &'static str {
        match self {
            EmMode::Em => "em",
            EmMode::Naive => "naive",
            EmMode::Genie => "genie",
        }
    }
}

impl FromStr for EmMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "em" => Ok(EmMode::Em),
            "naive" => Ok(EmMode::Naive),
            "genie" => Ok(EmMode::Genie),
            _ => Err(Error::Config(format!("unknown EM mode `{s}`"))),
        }
    }
}

impl FromStr for EmInitCase {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "a" | "poor_a" => Ok(EmInitCase::PoorA),
            "b" | "good_b" => Ok(EmInitCase::GoodB),
            "genie" => Ok(EmInitCase::Genie),
            "custom" => Ok(EmInitCase::Custom),
            _ => Err(Error::Config(format!("unknown EM init case `{s}`"))),
        }
    }
}

impl EmInitCase {
    pub fn as_str(self) -> &'static str {
        match self {
            EmInitCase::PoorA => "poor_a",
            EmInitCase::GoodB => "good_b",
            EmInitCase::Genie => "genie",
            EmInitCase::Custom => "custom",
        }
    }
}

/// One Monte Carlo scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub name: String,
    pub algorithm: Algorithm,
    pub em_mode: EmMode,
    pub n_nodes: usize,
    pub connectivity: f64,
    pub directed: bool,
    pub snr_db: f64,
    pub t_s: f64,
    pub f_s_hz: f64,
    pub f_c_hz: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub a_dbc: f64,
    pub sigma_init_ppm: f64,
    pub alpha_em: f64,
    pub em_init_case: EmInitCase,
    pub custom_theta: Option<ThetaEstimate>,
    pub n_iterations: u64,
    pub n_trials: u64,
    pub base_seed: u64,
    pub output_path: PathBuf,
    /// Switch off drift, jitter and estimation noise.
    pub zero_noise: bool,
    pub trace_nodes: bool,
    pub topology_file: Option<PathBuf>,
    pub parallel: bool,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            name: "scenario".into(),
            algorithm: Algorithm::Psfpc,
            em_mode: EmMode::Em,
            n_nodes: 20,
            connectivity: 0.2,
            directed: true,
            snr_db: 30.0,
            t_s: 1e-4,
            f_s_hz: 1e7,
            f_c_hz: 1e9,
            beta1: 5e-19,
            beta2: 5e-19,
            a_dbc: -53.46,
            sigma_init_ppm: 100.0,
            alpha_em: DEFAULT_ALPHA,
            em_init_case: EmInitCase::GoodB,
            custom_theta: None,
            n_iterations: 100,
            n_trials: 100,
            base_seed: 1,
            output_path: PathBuf::from("out"),
            zero_noise: false,
            trace_nodes: false,
            topology_file: None,
            parallel: true,
        }
    }
}

impl ScenarioConfig {
    pub fn oscillator_params(&self) -> OscillatorParams {
        let p = OscillatorParams {
            f_c: self.f_c_hz,
            beta1: self.beta1,
            beta2: self.beta2,
            a_dbc: self.a_dbc,
            sigma_init_ppm: self.sigma_init_ppm,
            t: self.t_s,
            f_s: self.f_s_hz,
            snr_linear: db_to_linear(self.snr_db),
            initial_phase: None,
        };
        if self.zero_noise {
            p.noiseless()
        } else {
            p
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.n_trials < 1 {
            return bad("n_trials must be at least 1".into());
        }
        if self.n_nodes < 2 {
            return bad("n_nodes must be at least 2".into());
        }
        if !(0.0..=1.0).contains(&self.connectivity) {
            return bad(format!("connectivity {} outside [0, 1]", self.connectivity));
        }
        if self.algorithm.mixing() == Mixing::Average && self.directed {
            return bad(format!(
                "{} requires an undirected network",
                self.algorithm.as_str()
            ));
        }
        if self.algorithm.filtered() {
            match (self.algorithm.learns_noise(), self.em_mode) {
                (true, EmMode::Em) | (false, EmMode::Naive | EmMode::Genie) => {}
                (true, m) => {
                    return bad(format!(
                        "{} needs em_mode = em (got {}); use kf_* for naive/genie",
                        self.algorithm.as_str(),
                        m.as_str()
                    ))
                }
                (false, _) => {
                    return bad(format!(
                        "{} needs em_mode naive or genie; use em_kf_* to learn the noise",
                        self.algorithm.as_str()
                    ))
                }
            }
            if !(self.alpha_em > 0.0 && self.alpha_em < 1.0) {
                return bad(format!("alpha_em {} outside (0, 1)", self.alpha_em));
            }
            if self.em_init_case == EmInitCase::Custom && self.custom_theta.is_none() {
                return bad("em_init_case = custom needs custom_q and custom_sigma".into());
            }
        }
        self.oscillator_params()
            .validate()
            .map_err(|e| Error::Config(e.to_string()))
    }

    /// Simulation settings for one trial.
    pub fn sim_settings(&self, seed: u64, trial: u64) -> Result<SimSettings> {
        let params = self.oscillator_params();
        let filter = if self.algorithm.filtered() {
            let case = match self.em_mode {
                EmMode::Genie => EmInitCase::Genie,
                _ => self.em_init_case,
            };
            let theta0 = init_theta(case, &params, self.custom_theta.as_ref())?;
            let em_alpha = (self.em_mode == EmMode::Em).then_some(self.alpha_em);
            FilterMode::Kalman { theta0, em_alpha }
        } else {
            FilterMode::None
        };
        Ok(SimSettings {
            params,
            mixing: self.algorithm.mixing(),
            filter,
            seed,
            trial,
        })
    }

    /// Applies every field present in `o`.
    pub fn apply(&mut self, o: &ConfigOverrides) -> Result<()> {
        macro_rules! set {
            ($($field:ident),*) => { $( if let Some(v) = &o.$field { self.$field = v.clone(); } )* };
        }
        set!(
            name,
            algorithm,
            em_mode,
            n_nodes,
            connectivity,
            directed,
            snr_db,
            t_s,
            f_s_hz,
            f_c_hz,
            beta1,
            beta2,
            a_dbc,
            sigma_init_ppm,
            alpha_em,
            em_init_case,
            n_iterations,
            n_trials,
            base_seed,
            output_path,
            zero_noise,
            trace_nodes,
            parallel
        );
        if let Some(t) = &o.topology_file {
            self.topology_file = Some(t.clone());
        }
        match (&o.custom_q, &o.custom_sigma) {
            (Some(q), Some(s)) => {
                self.custom_theta = Some(ThetaEstimate {
                    q_hat: Mat2::new(q[0][0], q[0][1], q[1][0], q[1][1]).symmetrize(),
                    sigma_f_sq_hat: s[0],
                    sigma_theta_sq_hat: s[1],
                });
            }
            (None, None) => {}
            _ => {
                return Err(Error::Config(
                    "custom_q and custom_sigma go together".into(),
                ))
            }
        }
        Ok(())
    }
}

/// Optional values for every configurable field; the shape of a config file.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigOverrides {
    pub name: Option<String>,
    pub algorithm: Option<Algorithm>,
    pub em_mode: Option<EmMode>,
    pub n_nodes: Option<usize>,
    pub connectivity: Option<f64>,
    pub directed: Option<bool>,
    pub snr_db: Option<f64>,
    pub t_s: Option<f64>,
    pub f_s_hz: Option<f64>,
    pub f_c_hz: Option<f64>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub a_dbc: Option<f64>,
    pub sigma_init_ppm: Option<f64>,
    pub alpha_em: Option<f64>,
    #[serde(default, deserialize_with = "de_init_case")]
    pub em_init_case: Option<EmInitCase>,
    pub custom_q: Option<[[f64; 2]; 2]>,
    pub custom_sigma: Option<[f64; 2]>,
    pub n_iterations: Option<u64>,
    pub n_trials: Option<u64>,
    pub base_seed: Option<u64>,
    pub output_path: Option<PathBuf>,
    pub zero_noise: Option<bool>,
    pub trace_nodes: Option<bool>,
    pub topology_file: Option<PathBuf>,
    pub parallel: Option<bool>,
}

fn de_init_case<'de, D>(d: D) -> std::result::Result<Option<EmInitCase>, D::Error>
where
    D: serde::Deserializer<'de>,
{
    let s: Option<String> = Option::deserialize(d)?;
    s.map(|s| s.parse().map_err(serde::de::Error::custom))
        .transpose()
}

impl ConfigOverrides {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        ScenarioConfig::default().validate().unwrap();
    }

    #[test]
    fn parses_flat_toml() {
        let o = ConfigOverrides::from_toml_str(
            r#"
            algorithm = "em_kf_psfpc"
            n_nodes = 40
            connectivity = 0.5
            em_init_case = "a"
            alpha_em = 0.95
            "#,
        )
        .unwrap();
        let mut c = ScenarioConfig::default();
        c.apply(&o).unwrap();
        assert_eq!(c.algorithm, Algorithm::EmKfPsfpc);
        assert_eq!(c.n_nodes, 40);
        assert_eq!(c.em_init_case, EmInitCase::PoorA);
        c.validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ConfigOverrides::from_toml_str("n_nodez = 3").is_err());
        assert!(ConfigOverrides::from_toml_str("algorithm = \"hcmci\"").is_err());
    }

    #[test]
    fn dfpc_needs_undirected() {
        let c = ScenarioConfig {
            algorithm: Algorithm::Dfpc,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = ScenarioConfig {
            algorithm: Algorithm::Dfpc,
            directed: false,
            ..Default::default()
        };
        c.validate().unwrap();
    }

    #[test]
    fn em_mode_must_match_algorithm() {
        let c = ScenarioConfig {
            algorithm: Algorithm::KfPsfpc,
            em_mode: EmMode::Em,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = ScenarioConfig {
            algorithm: Algorithm::EmKfPsfpc,
            em_mode: EmMode::Genie,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = ScenarioConfig {
            algorithm: Algorithm::KfPsfpc,
            em_mode: EmMode::Naive,
            ..Default::default()
        };
        c.validate().unwrap();
    }

    #[test]
    fn custom_init_needs_matrices() {
        let mut c = ScenarioConfig {
            algorithm: Algorithm::EmKfPsfpc,
            em_init_case: EmInitCase::Custom,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let o = ConfigOverrides::from_toml_str(
            "custom_q = [[1.0, 0.0], [0.0, 1.0]]\ncustom_sigma = [2.0, 3.0]",
        )
        .unwrap();
        c.apply(&o).unwrap();
        c.validate().unwrap();
        assert_eq!(c.custom_theta.unwrap().sigma_theta_sq_hat, 3.0);
    }

    #[test]
    fn zero_trials_rejected() {
        let c = ScenarioConfig {
            n_trials: 0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn algorithm_names_roundtrip() {
        for a in Algorithm::ALL {
            assert_eq!(a.as_str().parse::<Algorithm>().unwrap(), a);
        }
        assert_eq!(
            "em-kf-dfpc".parse::<Algorithm>().unwrap(),
            Algorithm::EmKfDfpc
        );
    }
}
