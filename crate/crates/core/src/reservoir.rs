//! The k-slot reservoir state machine.
//!
//! Slot 0 is the active stream; slots `1..` are warm standbys kept in
//! descending quality order (ties: more verifications first, then earlier
//! arrival). The active slot is placed at the top by sprint and by promotion,
//! but a refill may admit a standby that outranks it; such a standby only
//! becomes active through [`Reservoir::evaluate_upgrade`] once its switch
//! score turns positive.
//!
//! States move along four edges out of the happy path:
//!
//! ```text
//! Sprint --filled--> Maintain --failure--> Transition --new active--> Maintain
//!                        |                     |
//!                        +------all dead-------+--> Depleted --re-acquire--> Sprint
//! ```

use std::fmt;
use std::io::{self, Write};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{contract, domain, Error, Result};
use crate::probe::{sort_results, ProbeResult};
use crate::prospect::{switch_score, ProspectParams};

/// Cap on the verification count accrued by the active slot during health cycles.
pub const ACTIVE_VERIFICATION_CAP: u32 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StreamId(pub u64);

impl fmt::Display for StreamId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ProviderId(pub u32);

/// One stream produced by a provider.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StreamCandidate {
    pub id: StreamId,
    pub provider_id: ProviderId,
    /// Vertical resolution in pixels.
    pub quality: u32,
    /// Opaque resource reference, e.g. a manifest URL.
    pub locator: String,
}

impl StreamCandidate {
    pub fn new(id: u64, provider_id: u32, quality: u32, locator: impl Into<String>) -> Result<Self> {
        if quality == 0 {
            return Err(domain(format!("candidate {id}: quality must be > 0")));
        }
        Ok(Self { id: StreamId(id), provider_id: ProviderId(provider_id), quality, locator: locator.into() })
    }
}

/// A verified stream held by the reservoir.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Slot {
    pub candidate: StreamCandidate,
    pub verified_count: u32,
    pub last_verified: f64,
    pub prefetched: bool,
    pub probe_latency: Duration,
}

impl Slot {
    /// A slot admitted on the strength of one successful probe.
    pub fn admitted(candidate: StreamCandidate, probe_latency: Duration, now: f64) -> Self {
        Self { candidate, verified_count: 1, last_verified: now, prefetched: false, probe_latency }
    }

    pub fn with_verifications(mut self, n: u32) -> Self {
        self.verified_count = n.max(1);
        self
    }

    pub fn id(&self) -> StreamId {
        self.candidate.id
    }

    pub fn quality(&self) -> u32 {
        self.candidate.quality
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum State {
    Sprint,
    Maintain,
    Transition,
    Depleted,
}

impl State {
    /// Whether `self -> next` is an edge of the machine.
    pub fn can_transition_to(self, next: State) -> bool {
        use State::*;
        matches!(
            (self, next),
            (Sprint, Maintain)
                | (Maintain, Transition)
                | (Maintain, Depleted)
                | (Transition, Maintain)
                | (Transition, Depleted)
                | (Depleted, Sprint)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Filled,
    HealthPass,
    HealthFail,
    Refill,
    Failover,
    Upgrade,
    Depleted,
    Reacquire,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Filled => "filled",
            EventKind::HealthPass => "health_pass",
            EventKind::HealthFail => "health_fail",
            EventKind::Refill => "refill",
            EventKind::Failover => "failover",
            EventKind::Upgrade => "upgrade",
            EventKind::Depleted => "depleted",
            EventKind::Reacquire => "reacquire",
        }
    }
}

/// One entry of the append-only event log. `seq` orders events strictly;
/// timestamps are non-decreasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReservoirEvent {
    pub seq: u64,
    pub timestamp: f64,
    pub kind: EventKind,
    pub slot_id: Option<StreamId>,
    pub score: Option<f64>,
}

impl ReservoirEvent {
    /// Tab-separated trace record: timestamp, kind, slot id, score.
    pub fn to_record(&self) -> String {
        let slot = self.slot_id.map_or_else(|| "-".to_string(), |id| id.to_string());
        let score = self.score.map_or_else(|| "-".to_string(), |s| format!("{s:.6}"));
        format!("{:.3}\t{}\t{}\t{}", self.timestamp, self.kind.as_str(), slot, score)
    }
}

/// Work the reservoir asks its owner to perform.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Request {
    /// Probe all providers and hand the results to [`Reservoir::refill`].
    Refill,
    /// The reservoir is depleted; probe all providers and call [`Reservoir::reacquire`].
    Reacquire,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailoverOutcome {
    Promoted { new_active: StreamId },
    Depleted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Failover {
    pub outcome: FailoverOutcome,
    pub request: Request,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SwitchDecision {
    None,
    Swap { slot_index: usize, score: f64 },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RefillSummary {
    pub admitted: Vec<StreamId>,
    /// `(evicted, admitted)` pairs.
    pub replaced: Vec<(StreamId, StreamId)>,
}

#[derive(Debug, Clone)]
pub struct Reservoir {
    slots: Vec<Slot>,
    capacity: usize,
    state: State,
    params: ProspectParams,
    switch_count: u64,
    events: Vec<ReservoirEvent>,
    transitions: Vec<(State, State)>,
    clock: f64,
}

impl Reservoir {
    /// Sprint acquisition: admit the fastest `capacity` viable candidates,
    /// then order them by quality so the best becomes active.
    pub fn sprint(results: &[ProbeResult], capacity: usize, params: ProspectParams, now: f64) -> Result<Self> {
        if results.is_empty() {
            return Err(domain("sprint: no probe results"));
        }
        let mut r = Self::empty(capacity, params, State::Sprint, now)?;
        r.fill_from_sprint(results, now)?;
        Ok(r)
    }

    /// Build a reservoir around a chosen active stream, e.g. to resume a
    /// session or to stage a specific configuration.
    pub fn with_slots(
        active: Slot,
        standbys: Vec<Slot>,
        capacity: usize,
        params: ProspectParams,
        now: f64,
    ) -> Result<Self> {
        let mut r = Self::empty(capacity, params, State::Sprint, now)?;
        if 1 + standbys.len() > capacity {
            return Err(domain(format!("{} slots exceed capacity {capacity}", 1 + standbys.len())));
        }
        let mut ids: Vec<StreamId> = standbys.iter().map(Slot::id).chain([active.id()]).collect();
        ids.sort();
        ids.dedup();
        if ids.len() != 1 + standbys.len() {
            return Err(domain("duplicate stream id in reservoir slots"));
        }
        r.slots.push(active);
        r.slots.extend(standbys);
        for s in &mut r.slots {
            s.verified_count = s.verified_count.max(1);
        }
        r.order_standbys();
        for id in r.slots.iter().map(Slot::id).collect::<Vec<_>>() {
            r.log(EventKind::Filled, Some(id), None);
        }
        r.set_state(State::Maintain);
        Ok(r)
    }

    fn empty(capacity: usize, params: ProspectParams, state: State, now: f64) -> Result<Self> {
        if capacity == 0 {
            return Err(domain("reservoir capacity must be >= 1"));
        }
        params.validate()?;
        if !now.is_finite() {
            return Err(domain(format!("timestamp must be finite; got {now}")));
        }
        Ok(Self {
            slots: Vec::with_capacity(capacity),
            capacity,
            state,
            params,
            switch_count: 0,
            events: Vec::new(),
            transitions: Vec::new(),
            clock: now,
        })
    }

    fn fill_from_sprint(&mut self, results: &[ProbeResult], now: f64) -> Result<()> {
        let sorted = sort_results(results);
        let mut chosen: Vec<Slot> = Vec::with_capacity(self.capacity);
        for r in sorted.iter().filter(|r| r.viable) {
            if chosen.len() == self.capacity {
                break;
            }
            if chosen.iter().any(|s| s.id() == r.candidate.id) {
                continue;
            }
            chosen.push(Slot::admitted(r.candidate.clone(), r.latency, now));
        }
        if chosen.is_empty() {
            return Err(Error::AcquisitionFailure { probed: results.len() });
        }
        // Stable: equal qualities keep latency order.
        chosen.sort_by_key(|s| std::cmp::Reverse(s.quality()));
        self.slots = chosen;
        self.refresh_prefetch();
        for id in self.slots.iter().map(Slot::id).collect::<Vec<_>>() {
            self.log(EventKind::Filled, Some(id), None);
        }
        self.set_state(State::Maintain);
        Ok(())
    }

    pub fn slots(&self) -> &[Slot] {
        &self.slots
    }

    pub fn active(&self) -> Option<&Slot> {
        self.slots.first()
    }

    pub fn standbys(&self) -> &[Slot] {
        self.slots.get(1..).unwrap_or(&[])
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.slots.len() >= self.capacity
    }

    pub fn state(&self) -> State {
        self.state
    }

    pub fn params(&self) -> &ProspectParams {
        &self.params
    }

    pub fn switch_count(&self) -> u64 {
        self.switch_count
    }

    pub fn events(&self) -> &[ReservoirEvent] {
        &self.events
    }

    /// Every state change so far, in order.
    pub fn transitions(&self) -> &[(State, State)] {
        &self.transitions
    }

    pub fn contains(&self, id: StreamId) -> bool {
        self.slots.iter().any(|s| s.id() == id)
    }

    /// Write the event log as line-delimited trace records.
    pub fn write_trace<W: Write>(&self, mut w: W) -> io::Result<()> {
        for e in &self.events {
            writeln!(w, "{}", e.to_record())?;
        }
        Ok(())
    }

    /// Health-check verdict for standby `slot_index`.
    pub fn on_health_result(&mut self, slot_index: usize, viable: bool, now: f64) -> Result<Option<Request>> {
        self.require(State::Maintain, "on_health_result")?;
        if slot_index == 0 {
            return Err(contract("the active slot is verified by playback, not by health checks"));
        }
        if slot_index >= self.slots.len() {
            return Err(contract(format!("slot index {slot_index} out of range ({} slots)", self.slots.len())));
        }
        self.advance_clock(now)?;
        if viable {
            let slot = &mut self.slots[slot_index];
            slot.verified_count = slot.verified_count.saturating_add(1);
            slot.last_verified = now;
            let id = slot.id();
            self.order_standbys();
            self.log(EventKind::HealthPass, Some(id), None);
            Ok(None)
        } else {
            let removed = self.slots.remove(slot_index);
            self.log(EventKind::HealthFail, Some(removed.id()), None);
            Ok(Some(Request::Refill))
        }
    }

    /// Lazy refill from freshly probed candidates.
    ///
    /// Vacancies are filled unconditionally, best quality first. Once full,
    /// a fresh candidate replaces the weakest standby only if its switch
    /// score against that standby, at one verification, is positive.
    pub fn refill(&mut self, fresh: &[ProbeResult], now: f64) -> Result<RefillSummary> {
        self.require(State::Maintain, "refill")?;
        self.advance_clock(now)?;
        let mut pool: Vec<&ProbeResult> = fresh.iter().filter(|r| r.viable).collect();
        // Stable sort keeps latency order, then arrival order, among equal qualities.
        pool.sort_by(|a, b| b.candidate.quality.cmp(&a.candidate.quality).then(a.latency.cmp(&b.latency)));

        let mut summary = RefillSummary::default();
        for r in pool {
            if self.contains(r.candidate.id) {
                continue;
            }
            let slot = Slot::admitted(r.candidate.clone(), r.latency, now);
            if !self.is_full() {
                self.slots.push(slot);
                summary.admitted.push(r.candidate.id);
                self.order_standbys();
                self.log(EventKind::Refill, Some(r.candidate.id), None);
                continue;
            }
            let Some(worst) = self.standbys().last() else {
                continue;
            };
            let score = switch_score(worst.quality() as f64, r.candidate.quality as f64, 1, &self.params);
            if score > 0.0 {
                let last = self.slots.len() - 1;
                let evicted = std::mem::replace(&mut self.slots[last], slot);
                summary.replaced.push((evicted.id(), r.candidate.id));
                self.order_standbys();
                self.log(EventKind::Refill, Some(r.candidate.id), Some(score));
            }
        }
        Ok(summary)
    }

    /// The active stream failed: drop it and promote the best standby.
    pub fn on_active_failure(&mut self, now: f64) -> Result<Failover> {
        self.require(State::Maintain, "on_active_failure")?;
        if self.slots.is_empty() {
            return Err(contract("on_active_failure: no active slot"));
        }
        self.advance_clock(now)?;
        let failed = self.slots.remove(0);
        if self.slots.is_empty() {
            self.set_state(State::Depleted);
            self.log(EventKind::Depleted, Some(failed.id()), None);
            return Ok(Failover { outcome: FailoverOutcome::Depleted, request: Request::Reacquire });
        }
        self.set_state(State::Transition);
        self.order_standbys();
        self.refresh_prefetch();
        let new_active = self.slots[0].id();
        self.log(EventKind::Failover, Some(new_active), None);
        self.set_state(State::Maintain);
        Ok(Failover { outcome: FailoverOutcome::Promoted { new_active }, request: Request::Refill })
    }

    /// Highest-scoring standby whose switch score is positive, without acting on it.
    pub fn best_upgrade(&self) -> SwitchDecision {
        let Some(active) = self.active() else {
            return SwitchDecision::None;
        };
        let q0 = active.quality() as f64;
        let mut best = SwitchDecision::None;
        let mut best_score = f64::NEG_INFINITY;
        for (j, s) in self.slots.iter().enumerate().skip(1) {
            let score = switch_score(q0, s.quality() as f64, s.verified_count, &self.params);
            if score > 0.0 && score > best_score {
                best_score = score;
                best = SwitchDecision::Swap { slot_index: j, score };
            }
        }
        best
    }

    /// Evaluate the upgrade rule and, on a positive score, swap the chosen
    /// standby into the active slot.
    pub fn evaluate_upgrade(&mut self, now: f64) -> Result<SwitchDecision> {
        self.require(State::Maintain, "evaluate_upgrade")?;
        self.advance_clock(now)?;
        let decision = self.best_upgrade();
        if let SwitchDecision::Swap { slot_index, score } = decision {
            self.set_state(State::Transition);
            self.slots.swap(0, slot_index);
            self.order_standbys();
            self.refresh_prefetch();
            self.switch_count += 1;
            let id = self.slots[0].id();
            self.log(EventKind::Upgrade, Some(id), Some(score));
            self.set_state(State::Maintain);
        }
        Ok(decision)
    }

    /// Health-check every standby in index order; the active slot gains one
    /// verification per completed cycle, up to [`ACTIVE_VERIFICATION_CAP`].
    pub fn run_health_cycle<F>(&mut self, mut checker: F, now: f64) -> Result<Vec<Request>>
    where
        F: FnMut(&Slot) -> bool,
    {
        self.require(State::Maintain, "run_health_cycle")?;
        if self.standbys().is_empty() {
            return Ok(Vec::new());
        }
        self.advance_clock(now)?;
        let ids: Vec<StreamId> = self.standbys().iter().map(Slot::id).collect();
        let mut requests = Vec::new();
        for id in ids {
            let Some(idx) = self.slots.iter().position(|s| s.id() == id) else {
                continue;
            };
            let viable = checker(&self.slots[idx]);
            if let Some(req) = self.on_health_result(idx, viable, now)? {
                requests.push(req);
            }
        }
        let active = &mut self.slots[0];
        if active.verified_count < ACTIVE_VERIFICATION_CAP {
            active.verified_count += 1;
        }
        Ok(requests)
    }

    /// Leave `Depleted` by running a fresh sprint over `results`. With no
    /// viable result the reservoir stays depleted.
    pub fn reacquire(&mut self, results: &[ProbeResult], now: f64) -> Result<()> {
        self.require(State::Depleted, "reacquire")?;
        if results.is_empty() {
            return Err(domain("reacquire: no probe results"));
        }
        if !results.iter().any(|r| r.viable) {
            return Err(Error::AcquisitionFailure { probed: results.len() });
        }
        self.advance_clock(now)?;
        self.set_state(State::Sprint);
        self.log(EventKind::Reacquire, None, None);
        self.fill_from_sprint(results, now)
    }

    fn require(&self, state: State, op: &str) -> Result<()> {
        if self.state != state {
            return Err(contract(format!("{op} requires state {state:?}, reservoir is {:?}", self.state)));
        }
        Ok(())
    }

    fn advance_clock(&mut self, now: f64) -> Result<()> {
        if !now.is_finite() || now < self.clock {
            return Err(contract(format!("time went backwards: {now} < {}", self.clock)));
        }
        self.clock = now;
        Ok(())
    }

    fn set_state(&mut self, next: State) {
        debug_assert!(self.state.can_transition_to(next), "illegal transition {:?} -> {next:?}", self.state);
        self.transitions.push((self.state, next));
        self.state = next;
    }

    fn log(&mut self, kind: EventKind, slot_id: Option<StreamId>, score: Option<f64>) {
        let seq = self.events.len() as u64;
        self.events.push(ReservoirEvent { seq, timestamp: self.clock, kind, slot_id, score });
    }

    fn order_standbys(&mut self) {
        if self.slots.len() > 2 {
            self.slots[1..].sort_by(|a, b| {
                b.quality().cmp(&a.quality()).then(b.verified_count.cmp(&a.verified_count))
            });
        }
        self.refresh_prefetch();
    }

    fn refresh_prefetch(&mut self) {
        for (i, s) in self.slots.iter_mut().enumerate() {
            s.prefetched = i > 0;
        }
    }
}
