//! Property definitions shared by the proptest suite and the acceptance
//! runner. Each `check_*` takes a generated input and asserts one invariant.

#![allow(dead_code)]

use std::collections::HashSet;
use std::time::Duration;

use proptest::prelude::*;
use proptest::test_runner::TestCaseError;
use stream_reservoir::analytics::expected_max_exponential;
use stream_reservoir::probe::{sort_results, ProbeResult};
use stream_reservoir::simulator::{run_thrash, VerificationPolicy};
use stream_reservoir::viability::{sample_failure_time, MeanEstimate};
use stream_reservoir::{ProspectParams, Reservoir, Seed, State, StreamCandidate};

pub const QUALITIES: [u32; 6] = [360, 480, 720, 1080, 1440, 2160];

#[derive(Debug, Clone)]
pub struct Fresh {
    pub id: u64,
    pub quality: u32,
    pub latency_ms: u64,
    pub viable: bool,
}

impl Fresh {
    pub fn result(&self) -> ProbeResult {
        ProbeResult {
            candidate: StreamCandidate::new(self.id, self.id as u32, self.quality, format!("sim://{}", self.id))
                .expect("quality > 0"),
            viable: self.viable,
            latency: Duration::from_millis(self.latency_ms),
            timed_out: false,
        }
    }
}

pub fn results(batch: &[Fresh]) -> Vec<ProbeResult> {
    batch.iter().map(Fresh::result).collect()
}

pub fn fresh() -> impl Strategy<Value = Fresh> {
    (0u64..40, prop::sample::select(QUALITIES.to_vec()), 1u64..4000, prop::bool::weighted(0.8))
        .prop_map(|(id, quality, latency_ms, viable)| Fresh { id, quality, latency_ms, viable })
}

pub fn batch(max: usize) -> impl Strategy<Value = Vec<Fresh>> {
    prop::collection::vec(fresh(), 1..=max)
}

#[derive(Debug, Clone)]
pub enum Op {
    Health { index: usize, viable: bool },
    Refill(Vec<Fresh>),
    ActiveFailure,
    Upgrade,
    Cycle(Vec<bool>),
    Reacquire(Vec<Fresh>),
}

pub fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        3 => (0usize..6, prop::bool::weighted(0.7)).prop_map(|(index, viable)| Op::Health { index, viable }),
        3 => batch(6).prop_map(Op::Refill),
        2 => Just(Op::ActiveFailure),
        3 => Just(Op::Upgrade),
        2 => prop::collection::vec(prop::bool::weighted(0.8), 0..6).prop_map(Op::Cycle),
        1 => batch(6).prop_map(Op::Reacquire),
    ]
}

#[derive(Debug, Clone)]
pub struct Session {
    pub capacity: usize,
    pub initial: Vec<Fresh>,
    pub ops: Vec<Op>,
}

pub fn session() -> impl Strategy<Value = Session> {
    (1usize..=5, batch(8), prop::collection::vec(op(), 1..40))
        .prop_map(|(capacity, initial, ops)| Session { capacity, initial, ops })
}

fn apply(r: &mut Reservoir, op: &Op, now: f64) {
    // Operations issued in the wrong state are expected to be rejected; only
    // the invariants afterwards matter here.
    let _ = match op {
        Op::Health { index, viable } => r.on_health_result(*index, *viable, now).map(drop),
        Op::Refill(b) => r.refill(&results(b), now).map(drop),
        Op::ActiveFailure => r.on_active_failure(now).map(drop),
        Op::Upgrade => r.evaluate_upgrade(now).map(drop),
        Op::Cycle(verdicts) => {
            let mut it = verdicts.iter().copied();
            r.run_health_cycle(|_| it.next().unwrap_or(true), now).map(drop)
        }
        Op::Reacquire(b) => r.reacquire(&results(b), now),
    };
}

pub fn assert_invariants(r: &Reservoir) -> Result<(), TestCaseError> {
    for &(from, to) in r.transitions() {
        prop_assert!(from.can_transition_to(to), "illegal transition {from:?} -> {to:?}");
    }
    prop_assert!(r.len() <= r.capacity());
    prop_assert!(matches!(r.state(), State::Maintain | State::Depleted), "resting in {:?}", r.state());
    prop_assert_eq!(r.state() == State::Depleted, r.is_empty());

    let standbys: Vec<u32> = r.standbys().iter().map(|s| s.quality()).collect();
    prop_assert!(standbys.windows(2).all(|w| w[0] >= w[1]), "standbys out of order: {standbys:?}");

    let ids: HashSet<_> = r.slots().iter().map(|s| s.id()).collect();
    prop_assert_eq!(ids.len(), r.len());
    for (i, s) in r.slots().iter().enumerate() {
        prop_assert_eq!(s.prefetched, i > 0);
    }
    for w in r.events().windows(2) {
        prop_assert!(w[0].seq < w[1].seq);
        prop_assert!(w[0].timestamp <= w[1].timestamp);
    }
    Ok(())
}

/// Arbitrary operation sequences never leave the lifecycle graph or break
/// the slot invariants.
pub fn check_operation_fuzz(s: Session) -> Result<(), TestCaseError> {
    let Ok(mut r) = Reservoir::sprint(&results(&s.initial), s.capacity, ProspectParams::default(), 0.0) else {
        prop_assert!(s.initial.iter().all(|f| !f.viable));
        return Ok(());
    };
    assert_invariants(&r)?;
    for (step, op) in s.ops.iter().enumerate() {
        apply(&mut r, op, (step + 1) as f64);
        assert_invariants(&r)?;
    }
    Ok(())
}

/// Standbys stay sorted by quality after a fill from any probe set.
pub fn check_quality_ordering(capacity: usize, initial: Vec<Fresh>, later: Vec<Fresh>) -> Result<(), TestCaseError> {
    let Ok(mut r) = Reservoir::sprint(&results(&initial), capacity, ProspectParams::default(), 0.0) else {
        return Ok(());
    };
    assert_invariants(&r)?;
    r.refill(&results(&later), 1.0).map_err(|e| TestCaseError::fail(e.to_string()))?;
    assert_invariants(&r)
}

/// A refill never lowers the quality held at any standby rank, never evicts
/// the active stream and admits only viable results.
pub fn check_refill_admission(capacity: usize, initial: Vec<Fresh>, later: Vec<Fresh>) -> Result<(), TestCaseError> {
    let Ok(mut r) = Reservoir::sprint(&results(&initial), capacity, ProspectParams::default(), 0.0) else {
        return Ok(());
    };
    let before: Vec<u32> = r.standbys().iter().map(|s| s.quality()).collect();
    let active = r.active().map(|s| s.id());
    let summary = r.refill(&results(&later), 1.0).map_err(|e| TestCaseError::fail(e.to_string()))?;
    let after: Vec<u32> = r.standbys().iter().map(|s| s.quality()).collect();

    prop_assert_eq!(r.active().map(|s| s.id()), active);
    prop_assert!(after.len() >= before.len());
    for (b, a) in before.iter().zip(&after) {
        prop_assert!(a >= b, "rank quality fell: {before:?} -> {after:?}");
    }
    let viable: HashSet<u64> = later.iter().filter(|f| f.viable).map(|f| f.id).collect();
    for id in &summary.admitted {
        prop_assert!(viable.contains(&id.0));
    }
    Ok(())
}

/// Equal-quality fleets never switch, however verification counts evolve.
pub fn check_no_thrash_equal(quality: u32, n: usize, steps: u32, initial: u32) -> Result<(), TestCaseError> {
    let levels = vec![quality; n];
    let policy = VerificationPolicy { initial, grow_per_cycle: true };
    let (summary, _) = run_thrash(&levels, steps, policy, ProspectParams::default())
        .map_err(|e| TestCaseError::fail(e.to_string()))?;
    prop_assert_eq!(summary.switch_count, 0);
    Ok(())
}

/// Reference ordering: viable results by latency (earliest input first on
/// ties) by repeated minimum extraction, then non-viable in input order.
fn brute_force_sort(input: &[ProbeResult]) -> Vec<ProbeResult> {
    let mut pending: Vec<&ProbeResult> = input.iter().filter(|r| r.viable).collect();
    let mut out = Vec::with_capacity(input.len());
    while !pending.is_empty() {
        let mut best = 0;
        for i in 1..pending.len() {
            if pending[i].latency < pending[best].latency {
                best = i;
            }
        }
        out.push(pending.remove(best).clone());
    }
    out.extend(input.iter().filter(|r| !r.viable).cloned());
    out
}

pub fn check_probe_sort(batch: Vec<Fresh>) -> Result<(), TestCaseError> {
    let input = results(&batch);
    prop_assert_eq!(sort_results(&input), brute_force_sort(&input));
    Ok(())
}

/// Inclusion-exclusion E[max] agrees with a direct Monte Carlo mean of the
/// maximum of independent exponential lifetimes.
pub fn check_expected_max_mc(rates: Vec<f64>, seed: u64) -> Result<(), TestCaseError> {
    const DRAWS: usize = 20_000;
    let mut rng = Seed(seed).rng();
    let samples: Vec<f64> = (0..DRAWS)
        .map(|_| {
            rates
                .iter()
                .map(|&l| sample_failure_time(l, &mut rng).expect("positive rate"))
                .fold(0.0, f64::max)
        })
        .collect();
    let est = MeanEstimate::from_samples(&samples);
    let exact = expected_max_exponential(&rates).map_err(|e| TestCaseError::fail(e.to_string()))?;
    prop_assert!(
        (est.mean - exact).abs() <= 4.0 * est.stderr,
        "mc {} ± {} vs exact {exact}",
        est.mean,
        est.stderr
    );
    Ok(())
}

pub fn rates() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.02f64..1.0, 1..=5)
}
