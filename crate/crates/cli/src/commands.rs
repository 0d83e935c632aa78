use std::io::{self, Write};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use stream_reservoir::analytics::{self, SpeedupScenario};
use stream_reservoir::probe::{probe_all, sort_results, ProbeResult};
use stream_reservoir::prospect::{self, ProspectParams};
use stream_reservoir::simulator::{
    run_depletion, run_monotonicity_sweep, run_thrash, trace_monotonicity, DepletionConfig, FailureModel,
    MonotonicityConfig, VerificationPolicy,
};
use stream_reservoir::verify::{verify, MIN_TRIALS};
use stream_reservoir::{Reservoir, Seed, SimTransport, StreamCandidate};

use crate::config::{parse_list, Config};
use crate::{
    load_config, Cli, Command, Curve, CurvesArgs, DepletionArgs, Format, Mode, MonotonicityArgs, ParamArgs, ProbeArgs,
    ScoreArgs, Simulate, SpeedupArgs, ThrashArgs, UsageError,
};

const DEFAULT_SEED: u64 = 42;
const DEFAULT_TRIALS: u32 = 5000;
const DEFAULT_THRASH_LEVELS: [u32; 5] = [1080, 1060, 1040, 1020, 1000];
const DEFAULT_QUALITY: u32 = 720;

struct Globals {
    seed: u64,
    trials: u32,
    format: Format,
}

pub fn run(cli: Cli) -> Result<ExitCode> {
    let config = load_config(&cli)?;
    let globals = Globals {
        seed: config.pick(cli.seed, "seed", DEFAULT_SEED)?,
        trials: config.pick(cli.trials, "trials", DEFAULT_TRIALS)?,
        format: config.pick(cli.format, "format", Format::Text)?,
    };
    let mut out = io::stdout().lock();
    match cli.command {
        Command::Verify => cmd_verify(&globals, &mut out),
        Command::Simulate(Simulate::Depletion(a)) => cmd_depletion(&globals, &config, a, &mut out),
        Command::Simulate(Simulate::Monotonicity(a)) => cmd_monotonicity(&globals, &config, a, &mut out),
        Command::Simulate(Simulate::Thrash(a)) => cmd_thrash(&globals, &config, a, &mut out),
        Command::Score(a) => cmd_score(&globals, &config, a, &mut out),
        Command::Speedup(a) => cmd_speedup(&globals, a, &mut out),
        Command::Curves(a) => cmd_curves(&config, a, &mut out),
        Command::Probe(a) => cmd_probe(&globals, &config, a, &mut out),
    }
}

fn cmd_verify(g: &Globals, out: &mut impl Write) -> Result<ExitCode> {
    if g.trials < MIN_TRIALS {
        bail!(UsageError(format!("--trials must be at least {MIN_TRIALS}; got {}", g.trials)));
    }
    let report = verify(g.seed, g.trials)?;
    match g.format {
        Format::Text => write!(out, "{}", report.to_text())?,
        Format::Records => write!(out, "{}", report.to_records())?,
    }
    Ok(if report.all_passed { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn cmd_depletion(g: &Globals, config: &Config, a: DepletionArgs, out: &mut impl Write) -> Result<ExitCode> {
    let lambdas = match a.lambdas {
        Some(l) => l,
        None => match config.get::<String>("lambdas")? {
            Some(s) => parse_list(&s).map_err(|e| UsageError(format!("config key lambdas: {e}")))?,
            None => vec![0.10],
        },
    };
    let k = config.pick(a.k, "k", lambdas.len())?;
    let lambdas = match lambdas.len() {
        n if n == k => lambdas,
        1 => vec![lambdas[0]; k],
        n => bail!(UsageError(format!("--lambdas has {n} rates but --k is {k}"))),
    };
    let refill = !a.no_refill && config.get::<bool>("refill")?.unwrap_or(true);
    let model = match config.pick(a.mode, "mode", Mode::PerStep)? {
        Mode::PerStep => FailureModel::PerStep,
        Mode::Exponential => FailureModel::Exponential,
    };
    let horizon = config.pick(a.horizon, "horizon", 100)?;
    let cfg = DepletionConfig::new(lambdas, horizon, g.trials, refill).with_model(model);
    let est = run_depletion(&cfg, Seed(g.seed))?;
    match g.format {
        Format::Text => writeln!(
            out,
            "mean {:.2} ± {:.2}  (k={k}, horizon={horizon}, trials={}, refill={})",
            est.mean,
            est.stderr,
            est.n,
            if refill { "on" } else { "off" }
        )?,
        Format::Records => writeln!(out, "depletion\t{:.6}\t{:.6}\t{}", est.mean, est.stderr, est.n)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_monotonicity(g: &Globals, config: &Config, a: MonotonicityArgs, out: &mut impl Write) -> Result<ExitCode> {
    let mut cfg = MonotonicityConfig::four_tier(config.pick(a.tau, "tau", 0.3)?);
    cfg.steps = config.pick(a.steps, "steps", cfg.steps)?;
    cfg.k = config.pick(a.k, "k", cfg.k)?;
    cfg.refill_rounds = config.pick(a.refill_rounds, "refill_rounds", cfg.refill_rounds)?;
    let sessions = config.pick(a.sessions, "sessions", 100)?;
    if sessions == 0 {
        bail!(UsageError("--sessions must be >= 1".into()));
    }
    let seed = Seed(g.seed);
    let sweep = run_monotonicity_sweep(&cfg, sessions, seed)?;
    let conv = sweep.convergence();
    let demotions: u64 = sweep.runs.iter().map(|r| r.demotions as u64).sum();
    match g.format {
        Format::Text => {
            writeln!(out, "sessions: {sessions}  steps: {}  tau: {}", cfg.steps, cfg.tau)?;
            writeln!(out, "violations: {}", sweep.total_violations())?;
            writeln!(out, "demotions: {demotions}")?;
            writeln!(out, "final quality: min {} max {}", sweep.min_final_quality(), sweep.max_final_quality())?;
            writeln!(out, "convergence step: mean {:.2} ± {:.2}", conv.mean, conv.stderr)?;
        }
        Format::Records => {
            for (i, r) in sweep.runs.iter().enumerate() {
                writeln!(
                    out,
                    "{i}\t{}\t{}\t{}\t{}\t{}",
                    r.monotone_violations, r.demotions, r.final_quality, r.convergence_step, r.switch_count
                )?;
            }
        }
    }
    if a.trace {
        let (_, reservoir) = trace_monotonicity(&cfg, seed.derive(0))?;
        if let Some(r) = reservoir {
            r.write_trace(&mut *out)?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_thrash(g: &Globals, config: &Config, a: ThrashArgs, out: &mut impl Write) -> Result<ExitCode> {
    let levels = match a.levels {
        Some(l) => l,
        None => match config.get::<String>("levels")? {
            Some(s) => parse_list(&s).map_err(|e| UsageError(format!("config key levels: {e}")))?,
            None => DEFAULT_THRASH_LEVELS.to_vec(),
        },
    };
    let steps = config.pick(a.steps, "steps", 100)?;
    let policy = VerificationPolicy {
        initial: config.pick(a.initial_verifications, "initial_verifications", 1)?,
        grow_per_cycle: true,
    };
    let (summary, reservoir) = run_thrash(&levels, steps, policy, ProspectParams::default())?;
    match g.format {
        Format::Text => {
            writeln!(out, "switches: {}", summary.switch_count)?;
            writeln!(out, "final active quality: {}", summary.final_active_quality)?;
        }
        Format::Records => writeln!(out, "thrash\t{}\t{}", summary.switch_count, summary.final_active_quality)?,
    }
    if a.trace {
        reservoir.write_trace(&mut *out)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn params(config: &Config, a: &ParamArgs) -> Result<ProspectParams> {
    let d = ProspectParams::default();
    let p = ProspectParams {
        alpha: config.pick(a.alpha, "alpha", d.alpha)?,
        beta: config.pick(a.beta, "beta", d.beta)?,
        lambda_la: config.pick(a.lambda_la, "lambda_la", d.lambda_la)?,
        gamma: config.pick(a.gamma, "gamma", d.gamma)?,
        c_switch: config.pick(a.c_switch, "c_switch", d.c_switch)?,
        q_max: config.pick(a.q_max, "q_max", d.q_max)?,
        confidence_base: config.pick(a.confidence_base, "confidence_base", d.confidence_base)?,
    };
    p.validate()?;
    Ok(p)
}

fn cmd_score(g: &Globals, config: &Config, a: ScoreArgs, out: &mut impl Write) -> Result<ExitCode> {
    let p = params(config, &a.params)?;
    if !(a.q_active > 0.0 && a.q_candidate > 0.0 && a.q_active.is_finite() && a.q_candidate.is_finite()) {
        bail!(UsageError("qualities must be positive".into()));
    }
    let n = a.n.unwrap_or(1);
    let score = prospect::switch_score(a.q_active, a.q_candidate, n, &p);
    let decision = if score > 0.0 { "SWITCH" } else { "HOLD" };
    match g.format {
        Format::Text => writeln!(out, "{score:.3} {decision}")?,
        Format::Records => writeln!(out, "{}\t{}\t{n}\t{score:.6}\t{decision}", a.q_active, a.q_candidate)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_speedup(g: &Globals, a: SpeedupArgs, out: &mut impl Write) -> Result<ExitCode> {
    let s = SpeedupScenario::new(a.n, a.b, a.f)?;
    let con = analytics::expected_time_concurrent(s)?;
    let bat = analytics::expected_time_batched(s)?;
    let ratio = analytics::speedup(s)?;
    match g.format {
        Format::Text => {
            writeln!(out, "{:>4} {:>4} {:>6} {:>10} {:>10} {:>8}", "N", "b", "F", "E[T_con]", "E[T_bat]", "S")?;
            writeln!(out, "{:>4} {:>4} {:>6.2} {:>10.2} {:>10.2} {:>7.2}x", a.n, a.b, a.f, con, bat, ratio)?;
        }
        Format::Records => writeln!(out, "{}\t{}\t{}\t{con:.6}\t{bat:.6}\t{ratio:.6}", a.n, a.b, a.f)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_curves(config: &Config, a: CurvesArgs, out: &mut impl Write) -> Result<ExitCode> {
    let p = params(config, &a.params)?;
    match a.kind {
        Curve::Value => {
            for dq in (-1000..=1000).step_by(50) {
                let y = prospect::value(dq as f64 / p.q_max, &p)?;
                writeln!(out, "{dq}\t{y:.6}")?;
            }
        }
        Curve::Weight => {
            for i in 0..=100 {
                let x = i as f64 / 100.0;
                writeln!(out, "{x:.2}\t{:.6}", prospect::weight(x, &p)?)?;
            }
        }
        Curve::Uptime => {
            let lambda = a.lambda.unwrap_or(0.1);
            if !(lambda > 0.0 && lambda.is_finite()) {
                bail!(UsageError(format!("--lambda must be positive; got {lambda}")));
            }
            for k in 1..=8 {
                writeln!(out, "{k}\t{:.6}", analytics::utility_estimate(k, lambda)?)?;
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn read_candidates(path: &std::path::Path) -> Result<Vec<StreamCandidate>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split_whitespace();
        let url = fields.next().expect("non-empty line");
        let quality = match fields.next() {
            Some(q) => q
                .parse()
                .map_err(|e| UsageError(format!("{}:{}: bad quality {q:?}: {e}", path.display(), i + 1)))?,
            None => DEFAULT_QUALITY,
        };
        let id = out.len() as u64;
        out.push(StreamCandidate::new(id, id as u32, quality, url)?);
    }
    if out.is_empty() {
        bail!(UsageError(format!("{}: no URLs", path.display())));
    }
    Ok(out)
}

fn cmd_probe(g: &Globals, config: &Config, a: ProbeArgs, out: &mut impl Write) -> Result<ExitCode> {
    let candidates = read_candidates(&a.urls)?;
    let timeout = Duration::from_millis(config.pick(a.timeout_ms, "timeout_ms", 3000)?);
    let k = config.pick(a.k, "k", 3)?;
    let max_in_flight = config.pick(a.max_in_flight, "max_in_flight", candidates.len())?;
    if k == 0 || max_in_flight == 0 {
        bail!(UsageError("--k and --max-in-flight must be >= 1".into()));
    }
    let rt = tokio::runtime::Builder::new_multi_thread().enable_time().enable_io().build()?;
    let results = if a.sim {
        let transport = SimTransport::new(Seed(g.seed), a.fail_prob)?;
        rt.block_on(probe_all(&candidates, &transport, timeout, max_in_flight))?
    } else {
        rt.block_on(probe_http(&candidates, timeout, max_in_flight))?
    };
    let sorted = sort_results(&results);
    write_probe_table(g.format, &sorted, out)?;

    match Reservoir::sprint(&sorted, k, ProspectParams::default(), 0.0) {
        Ok(r) => {
            let ids: Vec<String> = r.slots().iter().map(|s| format!("{}({}p)", s.id(), s.quality())).collect();
            writeln!(out, "reservoir: {}", ids.join(" "))?;
            Ok(ExitCode::SUCCESS)
        }
        Err(e) => {
            writeln!(out, "reservoir: none ({e})")?;
            Ok(ExitCode::FAILURE)
        }
    }
}

fn write_probe_table(format: Format, sorted: &[ProbeResult], out: &mut impl Write) -> Result<()> {
    if format == Format::Text {
        writeln!(out, "{:>4} {:>4} {:>7} {:>7} {:>10}  locator", "rank", "id", "quality", "viable", "latency_ms")?;
    }
    for (rank, r) in sorted.iter().enumerate() {
        let ms = r.latency.as_secs_f64() * 1e3;
        let verdict = match (r.viable, r.timed_out) {
            (true, _) => "yes",
            (false, true) => "timeout",
            (false, false) => "no",
        };
        match format {
            Format::Text => writeln!(
                out,
                "{:>4} {:>4} {:>7} {:>7} {:>10.1}  {}",
                rank + 1,
                r.candidate.id,
                r.candidate.quality,
                verdict,
                ms,
                r.candidate.locator
            )?,
            Format::Records => writeln!(
                out,
                "{}\t{}\t{}\t{:.3}\t{}\t{}",
                r.candidate.id, r.candidate.quality, r.viable, ms, r.timed_out, r.candidate.locator
            )?,
        }
    }
    Ok(())
}

#[cfg(feature = "http")]
async fn probe_http(candidates: &[StreamCandidate], timeout: Duration, max_in_flight: usize) -> Result<Vec<ProbeResult>> {
    let transport = stream_reservoir::probe::HttpTransport::new(timeout).map_err(|e| anyhow::anyhow!(e.0))?;
    Ok(probe_all(candidates, &transport, timeout, max_in_flight).await?)
}

#[cfg(not(feature = "http"))]
async fn probe_http(_: &[StreamCandidate], _: Duration, _: usize) -> Result<Vec<ProbeResult>> {
    bail!(UsageError("built without network support; use --sim".into()))
}
