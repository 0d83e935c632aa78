//! Concurrent acquisition: fan out one viability probe per candidate,
//! bounded by a timeout and an in-flight limit, and collect every verdict.
//!
//! Probing never stops early on the first success; the reservoir needs `k`
//! streams, so the full result set is gathered and then sorted.

use std::collections::HashMap;
use std::future::Future;
use std::time::Duration;

use futures::stream::{self, StreamExt};
use rand::Rng;
use rand_distr::{Distribution, LogNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytics::SpeedupScenario;
use crate::error::{domain, Result};
use crate::reservoir::{StreamCandidate, StreamId};
use crate::viability::{MeanEstimate, Seed};

#[cfg(feature = "http")]
mod http;
#[cfg(feature = "http")]
pub use http::HttpTransport;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_millis(3000);

/// Verdict of one probe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub candidate: StreamCandidate,
    pub viable: bool,
    /// Time to verdict; equals the timeout when `timed_out`.
    pub latency: Duration,
    pub timed_out: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("transport fault: {0}")]
pub struct TransportError(pub String);

/// A way of checking whether a candidate stream is reachable.
///
/// Implementations must tolerate concurrent calls.
pub trait Transport: Sync {
    fn probe(&self, candidate: &StreamCandidate) -> impl Future<Output = Result<bool, TransportError>> + Send;
}

/// Latency distribution of simulated probes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatencyModel {
    pub median: Duration,
    pub sigma: f64,
}

impl Default for LatencyModel {
    fn default() -> Self {
        Self { median: Duration::from_millis(300), sigma: 0.6 }
    }
}

/// Simulated transport. Each candidate draws its verdict and latency from its
/// own substream of `(seed, round, candidate id)`, so results do not depend
/// on completion order.
#[derive(Debug, Clone)]
pub struct SimTransport {
    seed: Seed,
    round: u64,
    failure_prob: f64,
    latency: LatencyModel,
    failure_overrides: HashMap<StreamId, f64>,
    latency_overrides: HashMap<StreamId, Duration>,
}

impl SimTransport {
    pub fn new(seed: Seed, failure_prob: f64) -> Result<Self> {
        check_prob(failure_prob)?;
        Ok(Self {
            seed,
            round: 0,
            failure_prob,
            latency: LatencyModel::default(),
            failure_overrides: HashMap::new(),
            latency_overrides: HashMap::new(),
        })
    }

    pub fn with_latency_model(mut self, model: LatencyModel) -> Result<Self> {
        if !(model.sigma >= 0.0) || model.median.is_zero() {
            return Err(domain("latency model needs median > 0 and sigma >= 0"));
        }
        self.latency = model;
        Ok(self)
    }

    pub fn with_failure_prob(mut self, id: StreamId, p: f64) -> Result<Self> {
        check_prob(p)?;
        self.failure_overrides.insert(id, p);
        Ok(self)
    }

    pub fn with_latency(mut self, id: StreamId, latency: Duration) -> Self {
        self.latency_overrides.insert(id, latency);
        self
    }

    /// Transport for a later probing round: same configuration, fresh draws.
    pub fn round(&self, round: u64) -> Self {
        Self { round, ..self.clone() }
    }

    /// The verdict and latency this transport will report for `candidate`.
    pub fn outcome(&self, candidate: &StreamCandidate) -> (bool, Duration) {
        let mut rng = self.seed.derive_path(&[self.round, candidate.id.0]).rng();
        let p_fail = self.failure_overrides.get(&candidate.id).copied().unwrap_or(self.failure_prob);
        let viable = rng.random::<f64>() >= p_fail;
        let latency = match self.latency_overrides.get(&candidate.id) {
            Some(&d) => d,
            None => {
                let mu = self.latency.median.as_secs_f64().ln();
                // sigma validated on construction
                let dist = LogNormal::new(mu, self.latency.sigma).expect("valid lognormal");
                Duration::from_secs_f64(dist.sample(&mut rng))
            }
        };
        (viable, latency)
    }
}

impl Transport for SimTransport {
    fn probe(&self, candidate: &StreamCandidate) -> impl Future<Output = Result<bool, TransportError>> + Send {
        let (viable, latency) = self.outcome(candidate);
        async move {
            tokio::time::sleep(latency).await;
            Ok(viable)
        }
    }
}

fn check_prob(p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(domain(format!("probability must lie in [0, 1]; got {p}")));
    }
    Ok(())
}

/// Probe every candidate with at most `max_in_flight` probes outstanding.
///
/// Results come back in candidate order. Transport faults are reported as
/// non-viable; probes exceeding `timeout` are reported as timed out.
pub async fn probe_all<T: Transport>(
    candidates: &[StreamCandidate],
    transport: &T,
    timeout: Duration,
    max_in_flight: usize,
) -> Result<Vec<ProbeResult>> {
    if candidates.is_empty() {
        return Err(domain("probe_all: no candidates"));
    }
    if timeout.is_zero() {
        return Err(domain("probe_all: timeout must be > 0"));
    }
    if max_in_flight == 0 {
        return Err(domain("probe_all: max_in_flight must be >= 1"));
    }
    let mut indexed: Vec<(usize, ProbeResult)> = stream::iter(candidates.iter().enumerate())
        .map(|(i, c)| async move {
            let start = tokio::time::Instant::now();
            let verdict = tokio::time::timeout(timeout, transport.probe(c)).await;
            let elapsed = start.elapsed();
            let (viable, timed_out) = match verdict {
                Ok(Ok(v)) => (v, false),
                Ok(Err(_)) => (false, false),
                Err(_) => (false, true),
            };
            let latency = if timed_out { timeout } else { elapsed.min(timeout) };
            (i, ProbeResult { candidate: c.clone(), viable, latency, timed_out })
        })
        .buffer_unordered(max_in_flight)
        .collect()
        .await;
    indexed.sort_by_key(|(i, _)| *i);
    Ok(indexed.into_iter().map(|(_, r)| r).collect())
}

/// Viable results first, fastest first; non-viable results keep input order.
pub fn sort_results(results: &[ProbeResult]) -> Vec<ProbeResult> {
    let mut sorted = results.to_vec();
    sorted.sort_by(|a, b| match (a.viable, b.viable) {
        (true, true) => a.latency.cmp(&b.latency),
        (true, false) => std::cmp::Ordering::Less,
        (false, true) => std::cmp::Ordering::Greater,
        (false, false) => std::cmp::Ordering::Equal,
    });
    sorted
}

/// Mean rounds to the first working stream under both probing schemes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FirstSuccessRounds {
    /// Batched cost in probe rounds, including the N/b round factor.
    pub batched: MeanEstimate,
    pub concurrent: MeanEstimate,
}

impl FirstSuccessRounds {
    pub fn speedup(&self) -> f64 {
        self.batched.mean / self.concurrent.mean
    }
}

/// Highest failure probability accepted by the round model.
pub const MAX_ROUND_FAILURE_PROB: f64 = 0.999;

/// Monte Carlo estimate of time-to-first-working-stream in the round model:
/// a batch of `b` succeeds when any of its probes does, and batched probing
/// pays `N/b` probe times per round.
pub fn empirical_first_success_rounds(scenario: SpeedupScenario, trials: u32, seed: Seed) -> Result<FirstSuccessRounds> {
    scenario.validate()?;
    if trials == 0 {
        return Err(domain("empirical_first_success_rounds: trials must be >= 1"));
    }
    if scenario.failure_prob >= MAX_ROUND_FAILURE_PROB {
        return Err(domain(format!(
            "failure probability {} too close to 1 (expected rounds diverge)",
            scenario.failure_prob
        )));
    }
    let n = scenario.n_providers;
    let b = scenario.batch_size;
    let f = scenario.failure_prob;
    let rounds_until = |width: u32, rng: &mut crate::viability::SimRng| -> u64 {
        let mut rounds = 0u64;
        loop {
            rounds += 1;
            if (0..width).any(|_| rng.random::<f64>() >= f) {
                return rounds;
            }
        }
    };
    let samples: Vec<(f64, f64)> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut batched_rng = seed.derive_path(&[t as u64, 0]).rng();
            let mut concurrent_rng = seed.derive_path(&[t as u64, 1]).rng();
            let batched = (n as f64 / b as f64) * rounds_until(b, &mut batched_rng) as f64;
            let concurrent = rounds_until(n, &mut concurrent_rng) as f64;
            (batched, concurrent)
        })
        .collect();
    let (batched, concurrent): (Vec<f64>, Vec<f64>) = samples.into_iter().unzip();
    Ok(FirstSuccessRounds {
        batched: MeanEstimate::from_samples(&batched),
        concurrent: MeanEstimate::from_samples(&concurrent),
    })
}
