//! Shared machinery for issuing and walking onion queries inside a
//! simulated network: node-id/address mapping, key chaining, query
//! construction, per-node processing, and trace emission.
//!
//! Both the experiment [`engine`](crate::engine) and the fixture
//! [`scenario`](crate::scenario) builder drive queries through exactly
//! this code, so analyses see the same event shapes either way.

use onionq_core::envelope::{generate_keypair, generate_sym_key, KeyPair, PublicKey, SymKey};
use onionq_core::node::{
    on_receive, ForwardAction, NodeError, NodeParams, NodeState, ProcessingReport, Query, Role,
};
use onionq_core::onion::{self, LayerPlan, OnionError, PeelResult};
use onionq_core::registry::Address;
use onionq_core::request::{compile_task, initial_carrier, AggKind, Aggregation, Request};
use onionq_core::vm::{CarrierString, MapEnvironment, TaskError};
use rand::{Rng, RngCore};
use std::collections::BTreeSet;

use crate::topology::NodeId;
use crate::trace::{digest_hex, CarrierSnapshot, EventId, EventKind, RoleLabel, Trace};

/// All node states of one simulated network, indexed by node id.
/// The sink occupies its id like any node; its state only contributes
/// a keypair (the sink never processes a path layer).
pub struct SimNet {
    pub sink: NodeId,
    pub states: Vec<NodeState>,
}

impl SimNet {
    /// Build a network of `readings.len()` nodes; node `i` senses
    /// `quantity = readings[i]`.
    pub fn new(
        sink: NodeId,
        quantity: &str,
        readings: &[f64],
        params: NodeParams,
        rng: &mut impl RngCore,
    ) -> SimNet {
        let states = readings
            .iter()
            .enumerate()
            .map(|(id, &value)| NodeState {
                address: address_of(id),
                keypair: generate_keypair(rng),
                env: MapEnvironment::with_sensor(quantity, value),
                params,
            })
            .collect();
        SimNet { sink, states }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn public_key(&self, id: NodeId) -> PublicKey {
        self.states[id].keypair.public()
    }

    pub fn sink_keypair(&self) -> &KeyPair {
        &self.states[self.sink].keypair
    }
}

/// The wire address of simulator node `id`.
pub fn address_of(id: NodeId) -> Address {
    Address::from_index(id as u32)
}

/// Recover a simulator node id from its wire address.
pub fn id_of(address: Address) -> NodeId {
    u32::from_be_bytes([0, address.0[1], address.0[2], address.0[3]]) as NodeId
}

/// Draw `l` distinct target positions among the first `n - 1` path slots
/// (the final slot always stays a decoy).
pub fn sample_target_positions(
    rng: &mut impl RngCore,
    n: usize,
    l: usize,
) -> BTreeSet<usize> {
    assert!(n >= 2, "paths have at least two nodes");
    assert!(l <= n - 1, "cannot place {l} targets into {} eligible slots", n - 1);
    let mut positions = BTreeSet::new();
    while positions.len() < l {
        positions.insert(rng.gen_range(0..n - 1));
    }
    positions
}

/// Chain handoff keys through the target positions: the first target
/// opens with the entry key, each target seals to the next target's
/// opening key, and the last handoff key is the final (sink) key. With
/// no targets the entry key is the final key.
pub fn chain_keys(
    rng: &mut impl RngCore,
    positions: &BTreeSet<usize>,
    n: usize,
) -> (Vec<Option<(SymKey, SymKey)>>, SymKey, SymKey) {
    let entry = generate_sym_key(rng);
    let mut cursor = entry;
    let keys = (0..n)
        .map(|i| {
            if positions.contains(&i) {
                let handoff = generate_sym_key(rng);
                let pair = (cursor, handoff);
                cursor = handoff;
                Some(pair)
            } else {
                None
            }
        })
        .collect();
    (keys, entry, cursor)
}

/// Compile the aggregation task for one quantity (no condition).
pub fn task_for(kind: AggKind, quantity: &str) -> Result<Vec<u8>, TaskError> {
    compile_task(&Request {
        condition: None,
        aggregation: Aggregation { kind, quantity: quantity.to_string() },
        locations: Vec::new(),
    })
}

/// Everything needed to build and later score one query.
#[derive(Clone)]
pub struct QueryBlueprint {
    pub kind: AggKind,
    pub quantity: String,
    pub path: Vec<NodeId>,
    pub keys: Vec<Option<(SymKey, SymKey)>>,
    pub entry_key: SymKey,
    pub final_key: SymKey,
    pub query_id: SymKey,
    pub task: Vec<u8>,
    pub masked: bool,
    pub initial: CarrierString,
}

impl QueryBlueprint {
    /// Plan a query along `path` with targets at `target_positions`.
    pub fn plan(
        rng: &mut impl RngCore,
        kind: AggKind,
        quantity: &str,
        path: Vec<NodeId>,
        target_positions: &BTreeSet<usize>,
        masked: bool,
    ) -> Result<QueryBlueprint, TaskError> {
        let n = path.len();
        let (keys, entry_key, final_key) = chain_keys(rng, target_positions, n);
        let task = task_for(kind, quantity)?;
        let initial = initial_carrier(kind, masked, rng);
        Ok(QueryBlueprint {
            kind,
            quantity: quantity.to_string(),
            path,
            keys,
            entry_key,
            final_key,
            query_id: generate_sym_key(rng),
            task,
            masked,
            initial,
        })
    }

    pub fn n(&self) -> usize {
        self.path.len()
    }

    pub fn targets(&self) -> Vec<bool> {
        self.keys.iter().map(Option::is_some).collect()
    }

    /// Seal the onion head and body. `l_h` must be on the head size
    /// lattice for `n` (use [`onion::head_size_for`] for the minimum);
    /// `l_t` is the task capacity the body is padded to.
    pub fn build(
        &self,
        net: &SimNet,
        l_h: usize,
        l_t: usize,
        rng: &mut impl RngCore,
    ) -> Result<Query, OnionError> {
        let plans: Vec<LayerPlan> = self
            .path
            .iter()
            .zip(&self.keys)
            .map(|(&id, keys)| LayerPlan {
                address: address_of(id),
                public_key: net.public_key(id),
                keys: keys.clone(),
            })
            .collect();
        let head = onion::build_head(
            rng,
            &plans,
            address_of(net.sink),
            &net.public_key(net.sink),
            &self.query_id,
            l_h,
        )?;
        let body = onion::build_body(rng, &self.task, &self.initial.to_bytes(), &self.entry_key, l_t)?;
        Ok(Query { head, body })
    }
}

/// One node's processing of one received query.
pub struct ProcessedHop {
    pub action: ForwardAction,
    pub report: ProcessingReport,
    /// The reading this node folded into the carrier, when it did.
    pub reading: Option<f64>,
}

/// Run `on_receive` at `node` and work out whether it contributed.
pub fn process_hop(
    net: &SimNet,
    node: NodeId,
    query: &Query,
    quantity: &str,
    rng: &mut impl RngCore,
) -> Result<ProcessedHop, NodeError> {
    let state = &net.states[node];
    let (action, report) = on_receive(state, query, rng)?;
    let reading = match (&report.carrier_in, &report.carrier_out) {
        (Some(before), Some(after)) if after.count > before.count => {
            state.env.sensors.get(quantity).copied()
        }
        _ => None,
    };
    Ok(ProcessedHop { action, report, reading })
}

/// Record a `process_end` event for one hop. `task` is the query's task
/// bytecode; it lands in the event only when the node was a target (a
/// decoy never opens the body, so it never sees the task).
#[allow(clippy::too_many_arguments)]
pub fn emit_process_end(
    trace: &mut Trace,
    time: f64,
    query: u64,
    node: NodeId,
    before: &Query,
    after: &Query,
    report: &ProcessingReport,
    quantities: &[String],
    task: &[u8],
    reading: Option<f64>,
) -> EventId {
    let is_target = report.role == Role::Target;
    trace.push(
        time,
        EventKind::ProcessEnd {
            query,
            node,
            role: RoleLabel::from(report.role),
            head_digest_in: digest_hex(before.head.as_bytes()),
            head_digest_out: digest_hex(after.head.as_bytes()),
            body_digest_in: digest_hex(before.body.as_bytes()),
            body_digest_out: digest_hex(after.body.as_bytes()),
            carrier_in: report.carrier_in.as_ref().map(CarrierSnapshot::from),
            carrier_out: report.carrier_out.as_ref().map(CarrierSnapshot::from),
            quantities: if is_target { quantities.to_vec() } else { Vec::new() },
            task_hex: is_target.then(|| hex::encode(task)),
            reading,
        },
    )
}

/// Open a query that has returned to the sink: peel the terminal layer
/// and decrypt the body under the blueprint's final key.
pub fn open_at_sink(
    net: &SimNet,
    blueprint: &QueryBlueprint,
    query: &Query,
) -> Result<(SymKey, CarrierString), OnionError> {
    match onion::peel(&query.head, net.sink_keypair())? {
        PeelResult::Terminal { query_id } => {
            let content = onion::open_body(&blueprint.final_key, &query.body)?;
            Ok((query_id, CarrierString::from_bytes(&content.carrier)))
        }
        PeelResult::Forward { .. } => Err(OnionError::NotAddressed),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::derive_rng;
    use onionq_core::onion::{head_size_for, DEFAULT_MAX_TASK_LEN};

    #[test]
    fn addresses_roundtrip_node_ids() {
        for id in [0usize, 1, 31, 104, 65_535, 1_000_000] {
            assert_eq!(id_of(address_of(id)), id);
        }
    }

    #[test]
    fn key_chains_thread_entry_to_final() {
        let mut rng = derive_rng(1, &["keys"], &[]);
        let positions: BTreeSet<usize> = [1usize, 3].into_iter().collect();
        let (keys, entry, final_key) = chain_keys(&mut rng, &positions, 5);
        assert_eq!(keys.len(), 5);
        let (a_open, a_hand) = keys[1].clone().unwrap();
        let (b_open, b_hand) = keys[3].clone().unwrap();
        assert_eq!(a_open, entry);
        assert_eq!(b_open, a_hand);
        assert_eq!(b_hand, final_key);
        assert!(keys[0].is_none() && keys[2].is_none() && keys[4].is_none());

        let (no_keys, entry2, final2) = chain_keys(&mut rng, &BTreeSet::new(), 3);
        assert!(no_keys.iter().all(Option::is_none));
        assert_eq!(entry2, final2);
    }

    #[test]
    fn target_positions_never_use_the_last_slot() {
        let mut rng = derive_rng(2, &["pos"], &[]);
        for _ in 0..200 {
            let positions = sample_target_positions(&mut rng, 6, 3);
            assert_eq!(positions.len(), 3);
            assert!(positions.iter().all(|&p| p < 5));
        }
        // Saturating: every eligible slot taken.
        let all = sample_target_positions(&mut rng, 4, 3);
        assert_eq!(all, [0usize, 1, 2].into_iter().collect());
    }

    #[test]
    fn a_blueprint_walks_its_own_path_and_opens_at_the_sink() {
        let mut rng = derive_rng(3, &["walk"], &[]);
        let readings = [0.0, 11.0, 22.0, 33.0, 44.0];
        let net = SimNet::new(0, "temperature", &readings, NodeParams::default(), &mut rng);
        let path = vec![2usize, 4, 1, 3];
        let positions: BTreeSet<usize> = [0usize, 2].into_iter().collect();
        let bp = QueryBlueprint::plan(
            &mut rng,
            AggKind::Sum,
            "temperature",
            path.clone(),
            &positions,
            false,
        )
        .unwrap();
        let l_h = head_size_for(bp.n()).unwrap();
        let mut query = bp.build(&net, l_h, DEFAULT_MAX_TASK_LEN, &mut rng).unwrap();

        for (i, &node) in path.iter().enumerate() {
            let hop = process_hop(&net, node, &query, "temperature", &mut rng).unwrap();
            let expected_next =
                if i + 1 < path.len() { address_of(path[i + 1]) } else { address_of(0) };
            assert_eq!(hop.action.next_hop, expected_next);
            if positions.contains(&i) {
                assert_eq!(hop.report.role, Role::Target);
                assert_eq!(hop.reading, Some(readings[node]));
            } else {
                assert_eq!(hop.report.role, Role::Decoy);
                assert_eq!(hop.reading, None);
            }
            query = hop.action.query;
        }

        let (query_id, carrier) = open_at_sink(&net, &bp, &query).unwrap();
        assert_eq!(query_id, bp.query_id);
        // Targets at positions 0 and 2 are nodes 2 and 1: 22 + 11.
        assert_eq!(carrier.acc1, 33.0);
        assert_eq!(carrier.count, 2);
    }
}
