//! Recorded simulation traces: radio events, node-local processing
//! records, and per-query ground truth.
//!
//! A trace is the single source both adversary analyses replay:
//!
//! * the **radio layer** ([`EventKind::Transmit`], [`EventKind::Deliver`],
//!   [`EventKind::Abort`]) is what an external eavesdropper observes —
//!   timing, sizes, ciphertext digests, and the network-layer endpoints
//!   of each leg;
//! * the **processing records** ([`EventKind::ProcessStart`],
//!   [`EventKind::ProcessEnd`]) are node-private knowledge, available to
//!   an analysis only for nodes the adversary owns;
//! * the **ground truth** ([`QueryGroundTruth`]) is never shown to an
//!   adversary — it exists so the harness can score findings.
//!
//! Traces serialize to JSON Lines: one `meta` line, then one line per
//! event, then one line per query ground-truth record.

use onionq_core::node::Role;
use onionq_core::vm::CarrierString;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::topology::NodeId;

pub type EventId = u64;

/// Carrier accumulator values captured at a point in time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CarrierSnapshot {
    pub acc1: f64,
    pub acc2: f64,
    pub count: u64,
}

impl From<&CarrierString> for CarrierSnapshot {
    fn from(w: &CarrierString) -> CarrierSnapshot {
        CarrierSnapshot { acc1: w.acc1, acc2: w.acc2, count: w.count }
    }
}

impl From<CarrierSnapshot> for CarrierString {
    fn from(s: CarrierSnapshot) -> CarrierString {
        CarrierString { acc1: s.acc1, acc2: s.acc2, count: s.count }
    }
}

/// A node's role in one query, as the node itself experienced it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoleLabel {
    Decoy,
    Target,
}

impl From<Role> for RoleLabel {
    fn from(role: Role) -> RoleLabel {
        match role {
            Role::Decoy => RoleLabel::Decoy,
            Role::Target => RoleLabel::Target,
        }
    }
}

/// One recorded occurrence.
///
/// `query` numbers queries within the trace; `link_*` are the endpoints of
/// one radio hop, while `net_*` are the processing endpoints of the whole
/// leg the frame belongs to (the previous path node or sink, and the next).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    /// One radio hop of a query frame.
    Transmit {
        query: u64,
        link_src: NodeId,
        link_dst: NodeId,
        net_src: NodeId,
        net_dst: NodeId,
        head_bytes: usize,
        body_bytes: usize,
        head_digest: String,
        body_digest: String,
    },
    /// The frame reached the leg's network destination.
    Deliver { query: u64, node: NodeId },
    /// A path node began local processing.
    ProcessStart { query: u64, node: NodeId },
    /// A path node finished local processing and handed the frame on.
    ///
    /// Everything in here is knowledge the node itself holds: its role,
    /// the ciphertexts it saw and produced, and — for targets — the
    /// carrier before and after, the quantities the task reads, and the
    /// reading it contributed (`None` when it did not contribute).
    ProcessEnd {
        query: u64,
        node: NodeId,
        role: RoleLabel,
        head_digest_in: String,
        head_digest_out: String,
        body_digest_in: String,
        body_digest_out: String,
        #[serde(skip_serializing_if = "Option::is_none")]
        carrier_in: Option<CarrierSnapshot>,
        #[serde(skip_serializing_if = "Option::is_none")]
        carrier_out: Option<CarrierSnapshot>,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        quantities: Vec<String>,
        /// Hex of the task bytecode a target saw when it opened the body.
        #[serde(skip_serializing_if = "Option::is_none")]
        task_hex: Option<String>,
        #[serde(skip_serializing_if = "Option::is_none")]
        reading: Option<f64>,
    },
    /// A hop exceeded the abort budget; the query was given up.
    Abort { query: u64, link_src: NodeId, link_dst: NodeId },
}

impl EventKind {
    pub fn query(&self) -> u64 {
        match *self {
            EventKind::Transmit { query, .. }
            | EventKind::Deliver { query, .. }
            | EventKind::ProcessStart { query, .. }
            | EventKind::ProcessEnd { query, .. }
            | EventKind::Abort { query, .. } => query,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub id: EventId,
    pub time: f64,
    #[serde(flatten)]
    pub kind: EventKind,
}

/// What actually happened in one query — for scoring analyses, never
/// shown to them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryGroundTruth {
    pub query: u64,
    /// Path node ids in visiting order (the sink is not listed).
    pub path: Vec<NodeId>,
    /// Aligned with `path`: `true` where the layer carried task keys.
    pub targets: Vec<bool>,
    /// Aligned with `path`: the reading each contributing target folded in.
    pub readings: Vec<Option<f64>>,
    /// Quantity labels the query's task reads.
    pub quantities: Vec<String>,
    /// Whether the initial carrier was masked with random offsets.
    pub masked: bool,
    pub initial_carrier: CarrierSnapshot,
    /// Carrier recovered at the sink; `None` if the query aborted.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_carrier: Option<CarrierSnapshot>,
}

/// A full recording: protocol constants, events, and ground truth.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    /// The sink's node id.
    pub sink: NodeId,
    /// The per-hop hold quantum Δq in seconds (a protocol constant, so
    /// adversaries may use it).
    pub delta_q_s: f64,
    /// Whether path nodes held queries by randomized delays.
    pub delays_enabled: bool,
    pub events: Vec<Event>,
    pub queries: Vec<QueryGroundTruth>,
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("line {line}: {source}")]
    Parse { line: usize, source: serde_json::Error },
    #[error("line {line}: duplicate meta record")]
    DuplicateMeta { line: usize },
    #[error("trace has no meta record")]
    MissingMeta,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum TraceLine {
    Meta { sink: NodeId, delta_q_s: f64, delays_enabled: bool },
    Event(Event),
    Query(QueryGroundTruth),
}

impl Trace {
    pub fn new(sink: NodeId, delta_q_s: f64, delays_enabled: bool) -> Trace {
        Trace { sink, delta_q_s, delays_enabled, events: Vec::new(), queries: Vec::new() }
    }

    /// Append an event, assigning the next event id.
    pub fn push(&mut self, time: f64, kind: EventKind) -> EventId {
        let id = self.events.len() as EventId;
        self.events.push(Event { id, time, kind });
        id
    }

    /// Events belonging to one query, in recording order.
    pub fn events_of(&self, query: u64) -> impl Iterator<Item = &Event> {
        self.events.iter().filter(move |e| e.kind.query() == query)
    }

    /// Serialize as JSON Lines (meta, events, ground truth).
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        let meta = TraceLine::Meta {
            sink: self.sink,
            delta_q_s: self.delta_q_s,
            delays_enabled: self.delays_enabled,
        };
        out.push_str(&serde_json::to_string(&meta).expect("meta serializes"));
        out.push('\n');
        for event in &self.events {
            out.push_str(
                &serde_json::to_string(&TraceLine::Event(event.clone())).expect("event serializes"),
            );
            out.push('\n');
        }
        for query in &self.queries {
            out.push_str(
                &serde_json::to_string(&TraceLine::Query(query.clone())).expect("query serializes"),
            );
            out.push('\n');
        }
        out
    }

    /// Parse the JSON Lines form produced by [`Trace::to_jsonl`].
    pub fn from_jsonl(text: &str) -> Result<Trace, TraceError> {
        let mut meta: Option<(NodeId, f64, bool)> = None;
        let mut events = Vec::new();
        let mut queries = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parsed: TraceLine = serde_json::from_str(line)
                .map_err(|source| TraceError::Parse { line: idx + 1, source })?;
            match parsed {
                TraceLine::Meta { sink, delta_q_s, delays_enabled } => {
                    if meta.is_some() {
                        return Err(TraceError::DuplicateMeta { line: idx + 1 });
                    }
                    meta = Some((sink, delta_q_s, delays_enabled));
                }
                TraceLine::Event(e) => events.push(e),
                TraceLine::Query(q) => queries.push(q),
            }
        }
        let (sink, delta_q_s, delays_enabled) = meta.ok_or(TraceError::MissingMeta)?;
        Ok(Trace { sink, delta_q_s, delays_enabled, events, queries })
    }
}

/// Hex SHA-256 of a byte string; used to fingerprint ciphertexts in traces.
pub fn digest_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
