//! Monte Carlo driver: seeded trials, aggregation, presets and CSV output.

use std::fmt::Write as _;
use std::io::{self, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::analysis::{
    detect_convergence, mean_std, snapshot, ErrorSnapshot, DEFAULT_REL_TOL, DEFAULT_WINDOW,
};
use crate::config::{Algorithm, EmMode, ScenarioConfig};
use crate::consensus::{Mixing, Simulation};
use crate::error::{Error, Result};
use crate::network::{
    generate, metropolis_weights, push_sum_weights, spectral_info, DirectedNetwork, WeightMatrix,
};
use crate::online_em::EmInitCase;
use crate::rng::{trial_seed, Purpose, StreamKey};

/// Per-iteration summary kept for every trial.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationSummary {
    pub iteration: u64,
    pub std_phase_deg: f64,
    pub std_freq_ppm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub trial: u64,
    pub seed: u64,
    /// Edge-set hash; empty if the network could not be built.
    pub fingerprint: String,
    pub lambda2: f64,
    pub summaries: Vec<IterationSummary>,
    /// Full per-node snapshots, only when tracing.
    pub trace: Option<Vec<ErrorSnapshot>>,
    pub abort_reason: Option<String>,
    pub convergence_iter: Option<u64>,
}

impl TrialRecord {
    pub fn aborted(&self) -> bool {
        self.abort_reason.is_some()
    }

    pub fn final_summary(&self) -> Option<&IterationSummary> {
        self.summaries.last()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateSummary {
    pub completed: usize,
    pub aborted: usize,
    pub mean_final_std_phase_deg: f64,
    pub std_final_std_phase_deg: f64,
    pub mean_final_std_freq_ppm: f64,
    /// Mean over trials of the per-trial detected convergence iteration.
    pub mean_convergence_iter: f64,
    /// Trial-averaged `std_phase_deg` per iteration.
    pub mean_curve: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub config: ScenarioConfig,
    pub records: Vec<TrialRecord>,
    pub summary: AggregateSummary,
}

/// Runs every trial of `config`.
pub fn run(config: &ScenarioConfig) -> Result<RunOutput> {
    config.validate()?;
    let fixed = match &config.topology_file {
        Some(path) => {
            let file = std::fs::File::open(path)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            let net = DirectedNetwork::from_adjacency_list(io::BufReader::new(file), None)?;
            if net.n_nodes() != config.n_nodes {
                return Err(Error::NodeCount {
                    expected: config.n_nodes,
                    got: net.n_nodes(),
                });
            }
            let weights = build_weights(config, &net)?;
            Some((net, weights))
        }
        None => None,
    };
    let trials: Vec<u64> = (0..config.n_trials).collect();
    let one = |t: &u64| run_trial(config, *t, fixed.as_ref());
    let records: Vec<TrialRecord> = if config.parallel {
        trials.par_iter().map(one).collect()
    } else {
        trials.iter().map(one).collect()
    };
    let summary = aggregate(&records);
    Ok(RunOutput {
        config: config.clone(),
        records,
        summary,
    })
}

fn build_weights(config: &ScenarioConfig, net: &DirectedNetwork) -> Result<WeightMatrix> {
    match config.algorithm.mixing() {
        Mixing::PushSum => push_sum_weights(net),
        Mixing::Average => metropolis_weights(net),
    }
}

fn run_trial(
    config: &ScenarioConfig,
    trial: u64,
    fixed: Option<&(DirectedNetwork, WeightMatrix)>,
) -> TrialRecord {
    let seed = trial_seed(config.base_seed, trial);
    let mut record = TrialRecord {
        trial,
        seed,
        fingerprint: String::new(),
        lambda2: f64::NAN,
        summaries: Vec::with_capacity(config.n_iterations as usize + 1),
        trace: config.trace_nodes.then(Vec::new),
        abort_reason: None,
        convergence_iter: None,
    };
    if let Err(e) = trial_body(config, trial, seed, fixed, &mut record) {
        record.abort_reason = Some(e.to_string());
    }
    record
}

fn trial_body(
    config: &ScenarioConfig,
    trial: u64,
    seed: u64,
    fixed: Option<&(DirectedNetwork, WeightMatrix)>,
    record: &mut TrialRecord,
) -> Result<()> {
    let generated;
    let (net, weights) = match fixed {
        Some((n, w)) => (n, w),
        None => {
            let mut rng = StreamKey::new(seed, trial, 0, 0, Purpose::Network).rng();
            let net = generate(
                config.n_nodes,
                config.connectivity,
                config.directed,
                &mut rng,
            )?;
            let w = build_weights(config, &net)?;
            generated = (net, w);
            (&generated.0, &generated.1)
        }
    };
    record.fingerprint = net.fingerprint();
    record.lambda2 = spectral_info(weights)?.lambda2;

    let settings = config.sim_settings(seed, trial)?;
    let params = settings.params;
    let mut sim = Simulation::new(settings, weights)?;
    let push = |sim: &Simulation, record: &mut TrialRecord| {
        let snap = snapshot(sim.state(), &params, sim.iteration());
        record.summaries.push(IterationSummary {
            iteration: snap.iteration,
            std_phase_deg: snap.std_phase_deg,
            std_freq_ppm: snap.std_freq_ppm,
        });
        if let Some(trace) = record.trace.as_mut() {
            trace.push(snap);
        }
    };
    push(&sim, record);
    for _ in 0..config.n_iterations {
        sim.step()?;
        push(&sim, record);
    }
    let phase: Vec<f64> = record.summaries.iter().map(|s| s.std_phase_deg).collect();
    record.convergence_iter = detect_convergence(&phase, DEFAULT_WINDOW, DEFAULT_REL_TOL)
        .map(|k| record.summaries[k].iteration);
    Ok(())
}

/// Mean and spread over completed trials.
pub fn aggregate(records: &[TrialRecord]) -> AggregateSummary {
    let done: Vec<&TrialRecord> = records.iter().filter(|r| !r.aborted()).collect();
    let finals: Vec<f64> = done
        .iter()
        .filter_map(|r| r.final_summary())
        .map(|s| s.std_phase_deg)
        .collect();
    let freqs: Vec<f64> = done
        .iter()
        .filter_map(|r| r.final_summary())
        .map(|s| s.std_freq_ppm)
        .collect();
    let conv: Vec<f64> = done
        .iter()
        .filter_map(|r| r.convergence_iter)
        .map(|k| k as f64)
        .collect();
    let len = done.iter().map(|r| r.summaries.len()).min().unwrap_or(0);
    let mean_curve = (0..len)
        .map(|k| {
            done.iter()
                .map(|r| r.summaries[k].std_phase_deg)
                .sum::<f64>()
                / done.len() as f64
        })
        .collect();
    let (mean_final, std_final) = mean_std(&finals);
    AggregateSummary {
        completed: done.len(),
        aborted: records.len() - done.len(),
        mean_final_std_phase_deg: mean_final,
        std_final_std_phase_deg: std_final,
        mean_final_std_freq_ppm: mean_std(&freqs).0,
        mean_convergence_iter: mean_std(&conv).0,
        mean_curve,
    }
}

/// Convergence iteration of the trial-averaged curve.
pub fn mean_curve_convergence(summary: &AggregateSummary) -> Option<usize> {
    detect_convergence(&summary.mean_curve, DEFAULT_WINDOW, DEFAULT_REL_TOL)
}

/// Shortest round-tripping form; NaN is written as `nan`.
fn num(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else {
        format!("{v:e}")
    }
}

pub const TRIAL_HEADER: &str = "trial,iteration,std_phase_deg,std_freq_ppm,lambda2,aborted";
pub const AGGREGATE_HEADER: &str = "scenario,N,c,snr_db,algorithm,em_mode,mean_final_std_phase_deg,std_final_std_phase_deg,mean_convergence_iter";
pub const TRACE_HEADER: &str = "trial,iteration,node,freq_error_ppm,phase_error_deg";

fn header_line(timestamp: Option<&str>) -> String {
    timestamp
        .map(|t| format!("# generated {t}\n"))
        .unwrap_or_default()
}

/// One row per trial per iteration. Aborted trials keep the rows they
/// produced, or a single iteration-0 row if none.
pub fn trials_csv(records: &[TrialRecord], timestamp: Option<&str>) -> String {
    let mut out = header_line(timestamp);
    out.push_str(TRIAL_HEADER);
    out.push('\n');
    for r in records {
        let aborted = u8::from(r.aborted());
        if r.summaries.is_empty() {
            let _ = writeln!(out, "{},0,nan,nan,{},{aborted}", r.trial, num(r.lambda2));
        }
        for s in &r.summaries {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{aborted}",
                r.trial,
                s.iteration,
                num(s.std_phase_deg),
                num(s.std_freq_ppm),
                num(r.lambda2)
            );
        }
    }
    out
}

pub fn trace_csv(records: &[TrialRecord], timestamp: Option<&str>) -> String {
    let mut out = header_line(timestamp);
    out.push_str(TRACE_HEADER);
    out.push('\n');
    for r in records {
        for snap in r.trace.iter().flatten() {
            for (node, (f, p)) in snap
                .freq_errors_ppm
                .iter()
                .zip(&snap.phase_errors_deg)
                .enumerate()
            {
                let _ = writeln!(
                    out,
                    "{},{},{node},{},{}",
                    r.trial,
                    snap.iteration,
                    num(*f),
                    num(*p)
                );
            }
        }
    }
    out
}

pub fn aggregate_row(run: &RunOutput) -> String {
    let c = &run.config;
    let s = &run.summary;
    format!(
        "{},{},{},{},{},{},{},{},{}",
        c.name,
        c.n_nodes,
        c.connectivity,
        c.snr_db,
        c.algorithm.as_str(),
        mode_label(c),
        num(s.mean_final_std_phase_deg),
        num(s.std_final_std_phase_deg),
        num(s.mean_convergence_iter)
    )
}

fn mode_label(c: &ScenarioConfig) -> &'static str {
    if c.algorithm.filtered() {
        c.em_mode.as_str()
    } else {
        "none"
    }
}

pub fn aggregate_csv(runs: &[RunOutput], timestamp: Option<&str>) -> String {
    let mut out = header_line(timestamp);
    out.push_str(AGGREGATE_HEADER);
    out.push('\n');
    for r in runs {
        out.push_str(&aggregate_row(r));
        out.push('\n');
    }
    out
}

/// Writes `<name>.csv`, optional `<name>_nodes.csv`, and `aggregate.csv`
/// into `dir`.
pub fn write_outputs(dir: &Path, runs: &[RunOutput], timestamp: Option<&str>) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for r in runs {
        write_file(
            &dir.join(format!("{}.csv", r.config.name)),
            &trials_csv(&r.records, timestamp),
        )?;
        if r.config.trace_nodes {
            let path = dir.join(format!("{}_nodes.csv", r.config.name));
            write_file(&path, &trace_csv(&r.records, timestamp))?;
        }
    }
    write_file(&dir.join("aggregate.csv"), &aggregate_csv(runs, timestamp))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    let mut f = io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(text.as_bytes())?;
    f.flush()?;
    Ok(())
}

/// Figure presets.
pub const PRESETS: [&str; 10] = [
    "fig1a", "fig1b", "fig1c", "fig2a", "fig2b", "fig2c", "fig3", "fig4", "fig5", "fig6",
];

const PAPER_TRIALS: u64 = 1000;

/// Scenario sweep reproducing one figure.
pub fn preset(name: &str) -> Result<Vec<ScenarioConfig>> {
    let base = ScenarioConfig {
        n_trials: PAPER_TRIALS,
        ..ScenarioConfig::default()
    };
    let single = |n: usize, snr: f64| {
        vec![ScenarioConfig {
            name: name.to_string(),
            n_nodes: n,
            connectivity: 0.2,
            snr_db: snr,
            n_trials: 1,
            trace_nodes: true,
            ..base.clone()
        }]
    };
    let sweep = |algs: &[Algorithm], ns: &[usize], cs: &[f64]| {
        let mut v = Vec::new();
        for &alg in algs {
            for &n in ns {
                for &c in cs {
                    v.push(scenario(&base, name, alg, EmMode::Em, n, c));
                }
            }
        }
        v
    };
    let out = match name {
        "fig1a" | "fig2a" => single(20, 0.0),
        "fig1b" | "fig2b" => single(100, 0.0),
        "fig1c" | "fig2c" => single(100, 30.0),
        "fig3" => sweep(
            &[Algorithm::Psfpc, Algorithm::Dfpc],
            &[20, 60, 100],
            &[0.2, 0.35, 0.5],
        ),
        "fig4" => sweep(
            &[Algorithm::Psfpc, Algorithm::Dfpc],
            &[20, 100],
            &[0.2, 0.5],
        ),
        "fig5" => {
            let mut v = Vec::new();
            for case in [EmInitCase::PoorA, EmInitCase::GoodB] {
                for mode in [EmMode::Em, EmMode::Naive, EmMode::Genie] {
                    for n in [20, 40] {
                        let alg = if mode == EmMode::Em {
                            Algorithm::EmKfPsfpc
                        } else {
                            Algorithm::KfPsfpc
                        };
                        let mut s = scenario(&base, name, alg, mode, n, 0.2);
                        s.em_init_case = case;
                        s.n_iterations = 200;
                        s.name = format!(
                            "{}_{}",
                            s.name,
                            if case == EmInitCase::PoorA { "a" } else { "b" }
                        );
                        v.push(s);
                    }
                }
            }
            v
        }
        "fig6" => {
            let combos = [
                (Algorithm::EmKfPsfpc, EmMode::Em),
                (Algorithm::KfPsfpc, EmMode::Naive),
                (Algorithm::KfPsfpc, EmMode::Genie),
                (Algorithm::EmKfDfpc, EmMode::Em),
                (Algorithm::KfDfpc, EmMode::Naive),
                (Algorithm::KfDfpc, EmMode::Genie),
            ];
            let mut v = Vec::new();
            for (alg, mode) in combos {
                for n in [20, 40, 60, 80, 100] {
                    for c in [0.2, 0.5] {
                        v.push(scenario(&base, name, alg, mode, n, c));
                    }
                }
            }
            v
        }
        _ => return Err(Error::UnknownPreset(name.to_string())),
    };
    Ok(out)
}

fn scenario(
    base: &ScenarioConfig,
    prefix: &str,
    algorithm: Algorithm,
    em_mode: EmMode,
    n: usize,
    c: f64,
) -> ScenarioConfig {
    let directed = algorithm.mixing() == Mixing::PushSum;
    let mode = if algorithm.filtered() {
        format!("_{}", em_mode.as_str())
    } else {
        String::new()
    };
    ScenarioConfig {
        name: format!("{prefix}_{}{mode}_N{n}_c{c}", algorithm.as_str()),
        algorithm,
        em_mode,
        n_nodes: n,
        connectivity: c,
        directed,
        ..base.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ScenarioConfig {
        ScenarioConfig {
            n_nodes: 8,
            connectivity: 0.4,
            n_trials: 3,
            n_iterations: 20,
            ..Default::default()
        }
    }

    #[test]
    fn rows_match_trials_and_iterations() {
        let out = run(&small()).unwrap();
        let csv = trials_csv(&out.records, None);
        assert_eq!(csv.lines().count(), 1 + 3 * 21);
        assert!(csv.starts_with(TRIAL_HEADER));
        assert_eq!(out.summary.completed, 3);
    }

    #[test]
    fn timestamp_line_is_optional() {
        let out = run(&small()).unwrap();
        let with = trials_csv(&out.records, Some("x"));
        assert!(with.starts_with("# generated x\n"));
        assert_eq!(
            &with["# generated x\n".len()..],
            trials_csv(&out.records, None)
        );
    }

    #[test]
    fn parallel_matches_sequential() {
        let a = run(&small()).unwrap();
        let b = run(&ScenarioConfig {
            parallel: false,
            ..small()
        })
        .unwrap();
        assert_eq!(trials_csv(&a.records, None), trials_csv(&b.records, None));
    }

    #[test]
    fn zero_noise_single_trial_collapses() {
        let c = ScenarioConfig {
            n_trials: 1,
            n_iterations: 300,
            zero_noise: true,
            ..small()
        };
        let out = run(&c).unwrap();
        let r = &out.records[0];
        assert!(!r.aborted(), "{:?}", r.abort_reason);
        let last = r.final_summary().unwrap();
        assert!(last.std_phase_deg < 1e-9, "{last:?} {}", r.lambda2);
    }

    #[test]
    fn impossible_network_aborts_trial_not_run() {
        // Budget below a spanning cycle cannot be strongly connected.
        let c = ScenarioConfig {
            connectivity: 0.01,
            ..small()
        };
        let out = run(&c).unwrap();
        assert_eq!(out.summary.aborted, 3);
        assert!(trials_csv(&out.records, None)
            .lines()
            .skip(1)
            .all(|l| l.ends_with(",1")));
    }

    #[test]
    fn presets_match_captions() {
        let f = &preset("fig1a").unwrap()[0];
        assert_eq!(
            (f.algorithm, f.n_nodes, f.connectivity, f.snr_db, f.directed),
            (Algorithm::Psfpc, 20, 0.2, 0.0, true)
        );
        assert!(preset("fig3").unwrap().iter().all(|s| s.n_trials == 1000));
        assert_eq!(preset("fig4").unwrap().len(), 8);
        let fig5 = preset("fig5").unwrap();
        assert_eq!(fig5.len(), 12);
        assert!(fig5.iter().any(|s| s.em_init_case == EmInitCase::PoorA));
        assert_eq!(preset("fig6").unwrap().len(), 60);
        for name in PRESETS {
            for s in preset(name).unwrap() {
                s.validate().unwrap();
                assert_eq!((s.f_c_hz, s.f_s_hz, s.t_s), (1e9, 1e7, 1e-4));
            }
        }
        assert!(matches!(preset("fig7"), Err(Error::UnknownPreset(_))));
    }

    #[test]
    fn aggregate_has_one_row_per_run() {
        let out = run(&small()).unwrap();
        let csv = aggregate_csv(&[out.clone(), out], None);
        assert_eq!(csv.lines().count(), 3);
        assert!(csv
            .lines()
            .nth(1)
            .unwrap()
            .starts_with("scenario,8,0.4,30,psfpc,none,"));
    }
}
