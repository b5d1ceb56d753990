//! Sink-side request handling: parsing the request language, selecting the
//! target set from the registry, planning randomized query paths with decoys,
//! compiling the aggregation task, and recovering the final answer from the
//! carriers that come back.
//!
//! A request names an operation and target locations. The sink resolves it to
//! a target set `Q`, then plans one or more queries: each walks a random path
//! of `n` distinct nodes where at most `⌊n/2⌋` are targets hidden at random
//! positions among decoys, and the last node is always a decoy. Targets get
//! chained symmetric key pairs so each can re-encrypt the query body for the
//! next; the final chain key doubles as the query identifier the sink uses to
//! match returning queries against its recovery rules.

pub mod compile;
pub mod dsl;

pub use compile::compile_task;
pub use dsl::{parse_request, Aggregation, Condition, DslError, Literal, Request};

use std::collections::{BTreeMap, HashSet};

use rand::{Rng, RngCore};

use crate::envelope::{generate_sym_key, SymKey};
use crate::onion::LayerPlan;
use crate::registry::{Address, Registry, RegistryError};
use crate::vm::CarrierString;

/// The aggregation a request computes. All of them fold through the carrier's
/// additive accumulators, so per-query partial results merge at the sink.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AggKind {
    Sum,
    Avg,
    Max,
    Variance,
    Std,
}

impl AggKind {
    pub fn from_keyword(word: &str) -> Option<Self> {
        Some(match word.to_ascii_uppercase().as_str() {
            "SUM" => AggKind::Sum,
            "AVG" | "AVERAGE" => AggKind::Avg,
            "MAX" => AggKind::Max,
            "VAR" | "VARIANCE" => AggKind::Variance,
            "STD" | "STDDEV" => AggKind::Std,
            _ => return None,
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            AggKind::Sum => "sum",
            AggKind::Avg => "avg",
            AggKind::Max => "max",
            AggKind::Variance => "variance",
            AggKind::Std => "std",
        }
    }
}

impl std::fmt::Display for AggKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Planning failures.
#[derive(Debug, PartialEq, thiserror::Error)]
pub enum PlanError {
    #[error("path length {n} is too short; need at least 2")]
    PathTooShort { n: usize },
    #[error("no registry node matches the requested locations and quantities")]
    NoMatchingNodes,
    #[error("cannot plan a query for an empty target set")]
    EmptyTargetSet,
    #[error("target {0} is not in the path-node universe")]
    TargetOutsideUniverse(Address),
    #[error("universe of {universe} nodes cannot host a {n}-node path")]
    UniverseTooSmall { n: usize, universe: usize },
    #[error("need {needed} decoys but only {available} eligible nodes remain")]
    DecoysExhausted { needed: usize, available: usize },
    #[error(transparent)]
    Registry(#[from] RegistryError),
}

/// One planned query: the path `S`, the per-position optional key pairs `K`,
/// and the key chain endpoints. `final_key` doubles as the query identifier
/// sealed into the head's terminal layer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QueryDefinition {
    pub nodes: Vec<Address>,
    pub keys: Vec<Option<(SymKey, SymKey)>>,
    pub entry_key: SymKey,
    pub final_key: SymKey,
}

impl QueryDefinition {
    pub fn n(&self) -> usize {
        self.nodes.len()
    }

    pub fn target_count(&self) -> usize {
        self.keys.iter().filter(|k| k.is_some()).count()
    }

    pub fn target_addresses(&self) -> Vec<Address> {
        self.nodes
            .iter()
            .zip(&self.keys)
            .filter_map(|(a, k)| k.is_some().then_some(*a))
            .collect()
    }

    /// Resolve the path against the registry for head construction.
    pub fn to_layer_plans(&self, registry: &Registry) -> Result<Vec<LayerPlan>, PlanError> {
        self.nodes
            .iter()
            .zip(&self.keys)
            .map(|(addr, keys)| {
                Ok(LayerPlan {
                    address: *addr,
                    public_key: registry.public_key(*addr)?,
                    keys: *keys,
                })
            })
            .collect()
    }
}

/// What the sink keeps to recover results: the aggregation to merge by and,
/// per outstanding query id, the initial carrier it issued (whose offsets are
/// removed again during the merge).
#[derive(Clone, Debug)]
pub struct RecoveryRules {
    pub merge_op: AggKind,
    pub expected: BTreeMap<SymKey, CarrierString>,
}

impl RecoveryRules {
    pub fn expected_count(&self) -> usize {
        self.expected.len()
    }

    /// Swap a query id after a reissue: the old id is dropped (the sink
    /// retires it separately) and the replacement is tracked instead.
    pub fn replace_id(&mut self, old: &SymKey, new: SymKey, initial: CarrierString) -> bool {
        if self.expected.remove(old).is_none() {
            return false;
        }
        self.expected.insert(new, initial);
        true
    }
}

/// Select the target set `Q`: registry nodes at one of the requested
/// locations that sense every quantity the request reads. Registry order.
pub fn select_targets(registry: &Registry, request: &Request) -> Result<Vec<Address>, PlanError> {
    let wanted = request.quantities();
    let q: Vec<Address> = registry
        .entries()
        .iter()
        .filter(|e| {
            request.locations.iter().any(|l| *l == e.location)
                && wanted.iter().all(|w| e.quantities.contains(*w))
        })
        .map(|e| e.address)
        .collect();
    if q.is_empty() {
        return Err(PlanError::NoMatchingNodes);
    }
    Ok(q)
}

/// Plan one query path: place `min(|Q|, ⌊n/2⌋)` targets at uniformly random
/// positions among the first `n−1` slots (the last node is always a decoy),
/// fill the rest with decoys drawn without repetition from the universe minus
/// the remaining targets, and chain the target keys front to back. Picked
/// targets are removed from `q`.
pub fn query_path_selection(
    universe: &[Address],
    q: &mut Vec<Address>,
    n: usize,
    rng: &mut impl RngCore,
) -> Result<QueryDefinition, PlanError> {
    if n < 2 {
        return Err(PlanError::PathTooShort { n });
    }
    if universe.len() < n {
        return Err(PlanError::UniverseTooSmall { n, universe: universe.len() });
    }
    let universe_set: HashSet<Address> = universe.iter().copied().collect();
    if let Some(outside) = q.iter().find(|t| !universe_set.contains(t)) {
        return Err(PlanError::TargetOutsideUniverse(*outside));
    }

    let l = q.len().min(n / 2);
    let mut slots: Vec<Option<Address>> = vec![None; n];
    let mut busy: HashSet<Address> = HashSet::new();

    // Place targets at distinct random positions 1..n−1 (1-based; slot n is
    // excluded so the node handing the query back is always a decoy). The
    // position formula ⌊random·(n−1)⌋+1 with rejection of occupied slots is
    // uniform over the free slots.
    for _ in 0..l {
        let t = loop {
            let t = (rng.gen::<f64>() * (n - 1) as f64) as usize + 1;
            if slots[t - 1].is_none() {
                break t;
            }
        };
        let target = q.swap_remove(rng.gen_range(0..q.len()));
        slots[t - 1] = Some(target);
        busy.insert(target);
    }

    // Decoys come from the universe minus remaining targets minus nodes
    // already on the path; check up front that enough are left.
    let remaining: HashSet<Address> = q.iter().copied().collect();
    let available = universe.len() - remaining.len() - l;
    if available < n - l {
        return Err(PlanError::DecoysExhausted { needed: n - l, available });
    }

    let mut nodes = Vec::with_capacity(n);
    let mut keys = Vec::with_capacity(n);
    let entry_key = generate_sym_key(rng);
    let mut chain = entry_key;
    for slot in slots {
        match slot {
            Some(target) => {
                let fresh = generate_sym_key(rng);
                keys.push(Some((chain, fresh)));
                chain = fresh;
                nodes.push(target);
            }
            None => {
                let eligible: Vec<Address> = universe
                    .iter()
                    .copied()
                    .filter(|a| !remaining.contains(a) && !busy.contains(a))
                    .collect();
                let decoy = eligible[rng.gen_range(0..eligible.len())];
                busy.insert(decoy);
                nodes.push(decoy);
                keys.push(None);
            }
        }
    }

    Ok(QueryDefinition { nodes, keys, entry_key, final_key: chain })
}

/// Plan queries until every target is covered exactly once. Returns the
/// definitions and the recovery rules the sink needs to merge the answers.
pub fn plan_queries(
    universe: &[Address],
    q: Vec<Address>,
    n: usize,
    kind: AggKind,
    mitigation: bool,
    rng: &mut impl RngCore,
) -> Result<(Vec<QueryDefinition>, RecoveryRules), PlanError> {
    if q.is_empty() {
        return Err(PlanError::EmptyTargetSet);
    }
    let mut remaining = q;
    let mut definitions = Vec::new();
    let mut expected = BTreeMap::new();
    while !remaining.is_empty() {
        let def = query_path_selection(universe, &mut remaining, n, rng)?;
        expected.insert(def.final_key, initial_carrier(kind, mitigation, rng));
        definitions.push(def);
    }
    Ok((definitions, RecoveryRules { merge_op: kind, expected }))
}

/// The carrier a fresh query starts with.
///
/// With mitigation on, the sink draws secret random offsets so the first
/// target sees an already-populated carrier and cannot tell it is first —
/// otherwise an adversary owning the node right after the sink learns that
/// any carrier change it observes is a single node's raw reading. The offsets
/// are removed again by [`merge_carriers`]. Max uses a deeply negative floor
/// instead of an additive accumulator offset, which assumes readings stay
/// above it (−10⁹); the count offset still masks first-ness.
pub fn initial_carrier(kind: AggKind, mitigation: bool, rng: &mut impl RngCore) -> CarrierString {
    if !mitigation {
        return CarrierString::default();
    }
    match kind {
        AggKind::Max => CarrierString {
            acc1: rng.gen_range(-1e12..-1e9),
            acc2: 0.0,
            count: rng.gen_range(1..=1000),
        },
        _ => CarrierString {
            acc1: rng.gen_range(1e3..1e6),
            acc2: rng.gen_range(1e3..1e6),
            count: rng.gen_range(1..=1000),
        },
    }
}

/// Result-recovery failures.
#[derive(Debug, PartialEq, thiserror::Error)]
pub enum AggError {
    #[error("no node contributed to the aggregation")]
    NoContributingNodes,
}

/// Merge the `(initial, final)` carrier pairs of a request's queries into one
/// net carrier with the issued offsets removed. For additive kinds the net
/// accumulators are the summed deltas; for max, the running maximum over
/// queries that had at least one contributor (so an untouched floor or zero
/// initial value never masquerades as a reading).
pub fn merge_carriers(kind: AggKind, pairs: &[(CarrierString, CarrierString)]) -> CarrierString {
    match kind {
        AggKind::Max => {
            let mut best: Option<f64> = None;
            let mut count = 0u64;
            for (initial, fin) in pairs {
                let contributed = fin.count.saturating_sub(initial.count);
                if contributed > 0 {
                    best = Some(best.map_or(fin.acc1, |b| b.max(fin.acc1)));
                    count += contributed;
                }
            }
            CarrierString { acc1: best.unwrap_or(0.0), acc2: 0.0, count }
        }
        _ => {
            let mut net = CarrierString::default();
            for (initial, fin) in pairs {
                net.acc1 += fin.acc1 - initial.acc1;
                net.acc2 += fin.acc2 - initial.acc2;
                net.count += fin.count.saturating_sub(initial.count);
            }
            net
        }
    }
}

/// Turn a net carrier into the request's scalar answer.
///
/// Sum is defined for an empty carrier (zero); the others need at least one
/// contributor. Variance is the population variance; tiny negative values
/// from floating-point cancellation clamp to zero so std stays real.
pub fn finalize(kind: AggKind, w: &CarrierString) -> Result<f64, AggError> {
    let contributors = || {
        if w.count == 0 {
            Err(AggError::NoContributingNodes)
        } else {
            Ok(w.count as f64)
        }
    };
    Ok(match kind {
        AggKind::Sum => w.acc1,
        AggKind::Avg => w.acc1 / contributors()?,
        AggKind::Max => {
            contributors()?;
            w.acc1
        }
        AggKind::Variance | AggKind::Std => {
            let c = contributors()?;
            let mean = w.acc1 / c;
            let variance = (w.acc2 / c - mean * mean).max(0.0);
            if kind == AggKind::Std {
                variance.sqrt()
            } else {
                variance
            }
        }
    })
}
