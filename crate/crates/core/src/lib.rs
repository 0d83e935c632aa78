//! A k-slot reservoir of verified streams: concurrent acquisition, lazy
//! refill, prospect-weighted switching, closed-form reliability analytics and
//! a seeded Monte Carlo harness that checks them.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytics;
pub mod error;
pub mod probe;
pub mod prospect;
pub mod reservoir;
pub mod simulator;
pub mod verify;
pub mod viability;

pub use error::{Error, Result};
pub use probe::{ProbeResult, SimTransport, Transport};
pub use prospect::ProspectParams;
pub use reservoir::{Reservoir, Slot, State, StreamCandidate, StreamId};
pub use viability::Seed;
