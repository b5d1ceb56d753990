//! Deterministic discrete-event simulator and adversary harness for the
//! onion query protocol implemented in `onionq-core`.
//!
//! The crate has three layers:
//!
//! * **World building** — [`topology`] lays sensor fields out as regular
//!   grids or random discs and routes between nodes with deterministic
//!   shortest paths; [`link`] models per-hop transfer time, latency and
//!   optional loss.
//! * **Execution** — [`engine`] issues onion queries over the simulated
//!   network, advances a virtual clock, and records every radio
//!   transmission and every node-local processing step into a [`trace`].
//!   [`metrics`] turns the per-query travel times into CSV records and
//!   grouped summaries, with the small statistics toolbox in [`stats`].
//! * **Analysis** — [`adversary`] replays a recorded trace from the point
//!   of view of an eavesdropper or a set of compromised nodes and reports
//!   what they can (and provably cannot) deduce.
//!
//! Everything is seeded: the same configuration and seed reproduce the
//! same traces, records and findings byte for byte.

pub mod adversary;
pub mod config;
pub mod drive;
pub mod engine;
pub mod link;
pub mod metrics;
pub mod scenario;
pub mod seed;
pub mod stats;
pub mod topology;
pub mod trace;

pub use adversary::{
    disclosure_rate, external_view, internal_findings, verify_findings, Claim, DeductionPolicy,
    Finding,
};
pub use config::SimConfig;
pub use engine::{run_experiment, EngineError, ExperimentOutput};
pub use metrics::{records_to_csv, summarize, QttrRecord, SummaryRow};
pub use scenario::{random_spec, synthesize, ScenarioSpec};
pub use topology::{Topology, TopologyKind};
pub use trace::{Event, EventKind, Trace};
