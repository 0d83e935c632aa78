//! `streamres`: verification suite, simulators and probing front end.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::Config;

/// Bad input: reported on stderr with exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Records,
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        <Format as ValueEnum>::from_str(s, true)
    }
}

#[derive(Debug, Parser)]
#[command(name = "streamres", version, about = "Streaming reservoir verification and simulation")]
pub struct Cli {
    /// Root RNG seed [default: 42]
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Monte Carlo trials [default: 5000]
    #[arg(long, global = true)]
    pub trials: Option<u32>,
    /// Output format [default: text]
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    /// key=value file of defaults; flags override it
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the verification registry; exit 1 if any hard check fails
    Verify,
    /// Run one of the simulators
    #[command(subcommand)]
    Simulate(Simulate),
    /// Prospect switch score for one upgrade decision
    Score(ScoreArgs),
    /// Concurrent vs. batched acquisition times
    Speedup(SpeedupArgs),
    /// Data points for the value, weight and uptime curves
    Curves(CurvesArgs),
    /// Probe candidate URLs and build a reservoir from the results
    Probe(ProbeArgs),
}

#[derive(Debug, Subcommand)]
pub enum Simulate {
    /// Mean time to reservoir depletion
    Depletion(DepletionArgs),
    /// Lazy-refill quality trajectory over a seed sweep
    Monotonicity(MonotonicityArgs),
    /// Switch count among closely spaced quality levels
    Thrash(ThrashArgs),
}

#[derive(Debug, Args)]
pub struct DepletionArgs {
    /// Reservoir size [default: number of rates, or 1]
    #[arg(long)]
    pub k: Option<usize>,
    /// Per-step failure rates; a single value is used for every slot [default: 0.10]
    #[arg(long, value_delimiter = ',')]
    pub lambdas: Option<Vec<f64>>,
    /// Steps before censoring [default: 100]
    #[arg(long)]
    pub horizon: Option<u32>,
    /// Disable lazy refill
    #[arg(long)]
    pub no_refill: bool,
    /// Failure model [default: per-step]
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    PerStep,
    Exponential,
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        <Mode as ValueEnum>::from_str(s, true)
    }
}

#[derive(Debug, Args)]
pub struct MonotonicityArgs {
    /// Availability threshold for probing a provider [default: 0.3]
    #[arg(long)]
    pub tau: Option<f64>,
    /// Steps per session [default: 100]
    #[arg(long)]
    pub steps: Option<u32>,
    /// Reservoir size [default: 3]
    #[arg(long)]
    pub k: Option<usize>,
    /// Sessions in the sweep [default: 100]
    #[arg(long)]
    pub sessions: Option<u32>,
    /// Probe rounds a refill may spend per step [default: 5]
    #[arg(long)]
    pub refill_rounds: Option<u32>,
    /// Print the event log of the first session
    #[arg(long)]
    pub trace: bool,
}

#[derive(Debug, Args)]
pub struct ThrashArgs {
    /// Quality levels; the first is the initial active [default: 1080,1060,1040,1020,1000]
    #[arg(long, value_delimiter = ',')]
    pub levels: Option<Vec<u32>>,
    /// Upgrade evaluations [default: 100]
    #[arg(long)]
    pub steps: Option<u32>,
    /// Starting verification count of every stream [default: 1]
    #[arg(long)]
    pub initial_verifications: Option<u32>,
    /// Print the reservoir event log
    #[arg(long)]
    pub trace: bool,
}

#[derive(Debug, Args, Default)]
pub struct ParamArgs {
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub lambda_la: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub c_switch: Option<f64>,
    #[arg(long)]
    pub q_max: Option<f64>,
    #[arg(long)]
    pub confidence_base: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// Active stream quality (vertical pixels)
    pub q_active: f64,
    /// Candidate stream quality
    pub q_candidate: f64,
    /// Candidate verification count [default: 1]
    #[arg(long)]
    pub n: Option<u32>,
    #[command(flatten)]
    pub params: ParamArgs,
}

#[derive(Debug, Args)]
pub struct SpeedupArgs {
    /// Providers
    #[arg(long)]
    pub n: u32,
    /// Batch size
    #[arg(long)]
    pub b: u32,
    /// Per-provider failure probability
    #[arg(long)]
    pub f: f64,
}

#[derive(Debug, Args)]
pub struct CurvesArgs {
    pub kind: Curve,
    /// Failure rate for the uptime curve [default: 0.1]
    #[arg(long)]
    pub lambda: Option<f64>,
    #[command(flatten)]
    pub params: ParamArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Curve {
    Value,
    Weight,
    Uptime,
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    /// File with one URL per line, optionally followed by its quality
    #[arg(long)]
    pub urls: PathBuf,
    /// Per-probe timeout [default: 3000]
    #[arg(long)]
    pub timeout_ms: Option<u64>,
    /// Reservoir size [default: 3]
    #[arg(long)]
    pub k: Option<usize>,
    /// Probes in flight at once [default: all]
    #[arg(long)]
    pub max_in_flight: Option<usize>,
    /// Use the seeded simulated transport instead of the network
    #[arg(long)]
    pub sim: bool,
    /// Failure probability of the simulated transport
    #[arg(long, default_value_t = 0.2)]
    pub fail_prob: f64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(code) => code,
        Err(e) if is_broken_pipe(&e) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let usage = e.downcast_ref::<UsageError>().is_some()
                || matches!(e.downcast_ref::<stream_reservoir::Error>(), Some(stream_reservoir::Error::Domain(_)));
            ExitCode::from(if usage { 2 } else { 1 })
        }
    }
}

fn is_broken_pipe(e: &anyhow::Error) -> bool {
    e.chain()
        .filter_map(|c| c.downcast_ref::<std::io::Error>())
        .any(|io| io.kind() == std::io::ErrorKind::BrokenPipe)
}

pub(crate) fn load_config(cli: &Cli) -> anyhow::Result<Config> {
    match &cli.config {
        Some(path) => Config::load(path),
        None => Ok(Config::default()),
    }
}
