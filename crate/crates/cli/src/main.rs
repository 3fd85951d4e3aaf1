//! `psfpc-sim`: Monte Carlo runs of push-sum frequency/phase consensus.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use psfpc_core::config::{Algorithm, ConfigOverrides, EmMode, ScenarioConfig};
use psfpc_core::harness::{self, RunOutput};
use psfpc_core::network::generate;
use psfpc_core::{EmInitCase, Purpose, StreamKey};

#[derive(Parser)]
#[command(
    name = "psfpc-sim",
    version,
    about = "Frequency/phase consensus simulator for distributed phased arrays"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario, a config file or a figure preset and write CSV files.
    Run(Box<RunArgs>),
    /// List the figure presets.
    Presets,
    /// Generate a random network and print it as an adjacency list.
    Topology(TopologyArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Flat TOML file with scenario keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Figure preset; config-file keys and flags are applied on top of
    /// every scenario in it.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    n_nodes: Option<usize>,
    #[arg(long)]
    connectivity: Option<f64>,
    #[arg(long)]
    snr_db: Option<f64>,
    /// psfpc, dfpc, kf_psfpc, kf_dfpc, em_kf_psfpc or em_kf_dfpc.
    #[arg(long)]
    algorithm: Option<String>,
    /// em, naive or genie.
    #[arg(long)]
    em_mode: Option<String>,
    /// a, b, genie or custom.
    #[arg(long)]
    em_init_case: Option<String>,
    #[arg(long)]
    alpha_em: Option<f64>,
    /// Use bidirectional links (required by the dfpc variants).
    #[arg(long)]
    undirected: bool,
    #[arg(long)]
    trials: Option<u64>,
    #[arg(long)]
    iterations: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Omit the `# generated` header line so output is byte-reproducible.
    #[arg(long)]
    no_timestamp: bool,
    /// Also write per-node error traces.
    #[arg(long)]
    trace_nodes: bool,
    /// Use this network for every trial instead of generating one.
    #[arg(long)]
    topology_file: Option<PathBuf>,
    /// Switch off all noise sources.
    #[arg(long)]
    zero_noise: bool,
    /// Run trials on one thread.
    #[arg(long)]
    sequential: bool,
}

#[derive(Args)]
struct TopologyArgs {
    #[arg(long)]
    n_nodes: usize,
    #[arg(long)]
    connectivity: f64,
    #[arg(long)]
    undirected: bool,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Write here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Failures that are the caller's fault exit with 2.
struct ConfigError(anyhow::Error);

impl<E: Into<anyhow::Error>> From<E> for ConfigError {
    fn from(e: E) -> Self {
        ConfigError(e.into())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(*args),
        Command::Presets => {
            for name in harness::PRESETS {
                let n = harness::preset(name).map(|v| v.len()).unwrap_or(0);
                println!("{name}\t{n} scenario(s)");
            }
            Ok(Ok(()))
        }
        Command::Topology(args) => topology(args),
    };
    match result {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
        Err(ConfigError(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn overrides(args: &RunArgs) -> Result<ConfigOverrides, ConfigError> {
    let mut o = match &args.config {
        Some(path) => ConfigOverrides::from_file(path)?,
        None => ConfigOverrides::default(),
    };
    macro_rules! flag {
        ($($field:ident <- $value:expr),* $(,)?) => { $( if let Some(v) = $value { o.$field = Some(v); } )* };
    }
    flag!(
        n_nodes <- args.n_nodes,
        connectivity <- args.connectivity,
        snr_db <- args.snr_db,
        alpha_em <- args.alpha_em,
        n_trials <- args.trials,
        n_iterations <- args.iterations,
        base_seed <- args.seed,
        output_path <- args.out.clone(),
        topology_file <- args.topology_file.clone(),
        algorithm <- args.algorithm.as_deref().map(str::parse::<Algorithm>).transpose()?,
        em_mode <- args.em_mode.as_deref().map(str::parse::<EmMode>).transpose()?,
        em_init_case <- args.em_init_case.as_deref().map(str::parse::<EmInitCase>).transpose()?,
    );
    if args.undirected {
        o.directed = Some(false);
    }
    if args.trace_nodes {
        o.trace_nodes = Some(true);
    }
    if args.zero_noise {
        o.zero_noise = Some(true);
    }
    if args.sequential {
        o.parallel = Some(false);
    }
    Ok(o)
}

fn run(args: RunArgs) -> Result<anyhow::Result<()>, ConfigError> {
    let o = overrides(&args)?;
    let mut scenarios = match &args.preset {
        Some(name) => harness::preset(name)?,
        None => vec![ScenarioConfig::default()],
    };
    for s in &mut scenarios {
        s.apply(&o)?;
        s.validate()?;
    }
    let out_dir = scenarios[0].output_path.clone();
    let timestamp = (!args.no_timestamp).then(|| {
        let secs = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        format!("unix={secs}")
    });

    let mut runs: Vec<RunOutput> = Vec::with_capacity(scenarios.len());
    for s in &scenarios {
        runs.push(harness::run(s)?);
    }
    let mut aborted = 0;
    for r in &runs {
        let s = &r.summary;
        aborted += s.aborted;
        eprintln!(
            "{}: {} trials, {} aborted, mean final phase std {:.4} deg",
            r.config.name,
            s.completed + s.aborted,
            s.aborted,
            s.mean_final_std_phase_deg
        );
        for rec in r.records.iter().filter(|t| t.aborted()) {
            eprintln!(
                "  trial {} aborted: {}",
                rec.trial,
                rec.abort_reason.as_deref().unwrap_or("")
            );
        }
    }
    eprintln!("total aborted trials: {aborted}");
    Ok(
        harness::write_outputs(&out_dir, &runs, timestamp.as_deref())
            .with_context(|| format!("writing {}", out_dir.display())),
    )
}

fn topology(args: TopologyArgs) -> Result<anyhow::Result<()>, ConfigError> {
    let mut rng = StreamKey::new(args.seed, 0, 0, 0, Purpose::Network).rng();
    let net = generate(args.n_nodes, args.connectivity, !args.undirected, &mut rng)?;
    let text = net.to_adjacency_list();
    Ok(match args.out {
        Some(path) => {
            std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
        }
        None => {
            print!("{text}");
            Ok(())
        }
    })
}
