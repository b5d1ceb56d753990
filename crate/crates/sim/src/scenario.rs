//! Hand-shaped query walks for exercising the adversary analyses.
//!
//! A [`ScenarioSpec`] describes one query in full detail — which path
//! positions carry task keys, what each node senses, whether a node's
//! sensor is missing (so its task execution faults), whether the
//! deployment masks initial carriers, and whether forwarding-only radio
//! relays sit on the first and last legs. [`synthesize`] builds the
//! queries with the real onion machinery, walks them hop by hop, and
//! records a [`Trace`] whose ciphertext digests, carriers and roles are
//! all genuine — only the clock is synthetic (one tick per event).
//!
//! Node ids are fixed so tests can name nodes directly: the sink is `0`,
//! path position `i` is node `i + 1`, and the optional entry/exit relays
//! are nodes `n + 1` and `n + 2`.

use onionq_core::node::NodeParams;
use onionq_core::onion::{head_size_for, DEFAULT_MAX_TASK_LEN};
use onionq_core::request::AggKind;
use onionq_core::vm::CarrierString;
use rand::{Rng, RngCore};
use std::collections::BTreeSet;

use crate::drive::{
    address_of, emit_process_end, open_at_sink, process_hop, QueryBlueprint, SimNet,
};
use crate::engine::QUANTITY;
use crate::seed::derive_rng;
use crate::topology::NodeId;
use crate::trace::{digest_hex, CarrierSnapshot, EventKind, QueryGroundTruth, Trace};

/// The sink's node id in every synthesized scenario.
pub const SINK: NodeId = 0;

/// One fully pinned-down query.
#[derive(Clone, Debug)]
pub struct ScenarioSpec {
    pub kind: AggKind,
    /// `targets[i]`: path position `i` carries task keys. The last
    /// position must stay a decoy.
    pub targets: Vec<bool>,
    /// `readings[i]`: what the node at path position `i` senses.
    pub readings: Vec<f64>,
    /// `missing_sensor[i]`: the node at position `i` has no sensors at
    /// all, so executing the task there faults without contributing.
    pub missing_sensor: Vec<bool>,
    /// Mask the initial carrier with random offsets.
    pub masked: bool,
    /// Route the sink → first-node leg through a forwarding-only relay.
    pub entry_relay: bool,
    /// Route the last-node → sink leg through a forwarding-only relay.
    pub exit_relay: bool,
    /// Seeds this query's keys, padding and nonces.
    pub seed: u64,
}

impl ScenarioSpec {
    /// A plain unmasked sum query with no relays and intact sensors.
    pub fn new(targets: &[bool], readings: &[f64]) -> ScenarioSpec {
        ScenarioSpec {
            kind: AggKind::Sum,
            targets: targets.to_vec(),
            readings: readings.to_vec(),
            missing_sensor: vec![false; targets.len()],
            masked: false,
            entry_relay: false,
            exit_relay: false,
            seed: 0,
        }
    }

    pub fn n(&self) -> usize {
        self.targets.len()
    }

    /// The node id occupying path position `i`.
    pub fn node_at(position: usize) -> NodeId {
        position + 1
    }

    pub fn entry_relay_node(&self) -> NodeId {
        self.n() + 1
    }

    pub fn exit_relay_node(&self) -> NodeId {
        self.n() + 2
    }

    fn check(&self) {
        let n = self.n();
        assert!(n >= 2, "a path needs at least two nodes");
        assert_eq!(self.readings.len(), n, "readings must align with targets");
        assert_eq!(self.missing_sensor.len(), n, "missing_sensor must align with targets");
        assert!(!self.targets[n - 1], "the last path position must stay a decoy");
    }
}

/// Draw a random well-formed spec: 3–8 nodes, up to half of the
/// eligible positions carrying task keys, occasional missing sensors
/// and relays. The masking switch stays a parameter because it is a
/// deployment-wide protocol choice, not a per-query one.
pub fn random_spec(rng: &mut impl RngCore, masked: bool) -> ScenarioSpec {
    let n = rng.gen_range(3..=8usize);
    let l = rng.gen_range(0..=n / 2);
    let mut positions = BTreeSet::new();
    while positions.len() < l {
        positions.insert(rng.gen_range(0..n - 1));
    }
    let targets: Vec<bool> = (0..n).map(|i| positions.contains(&i)).collect();
    let readings: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() * 100.0).collect();
    let missing_sensor: Vec<bool> = (0..n).map(|_| rng.gen::<f64>() < 0.15).collect();
    let kinds = [AggKind::Sum, AggKind::Avg, AggKind::Max, AggKind::Variance, AggKind::Std];
    ScenarioSpec {
        kind: kinds[rng.gen_range(0..kinds.len())],
        targets,
        readings,
        missing_sensor,
        masked,
        entry_relay: rng.gen::<f64>() < 0.5,
        exit_relay: rng.gen::<f64>() < 0.5,
        seed: rng.gen(),
    }
}

/// Walk every spec and merge the recordings into one trace.
///
/// With `interleave` the queries run concurrently (their events
/// alternate in time); without it each query finishes long before the
/// next begins. Either way query `k` keeps trace query number `k`.
pub fn synthesize(specs: &[ScenarioSpec], interleave: bool) -> Trace {
    let mut staged: Vec<(f64, EventKind)> = Vec::new();
    let mut truths = Vec::new();
    for (k, spec) in specs.iter().enumerate() {
        let offset = if interleave { k as f64 * 0.5 } else { k as f64 * 10_000.0 };
        let (events, truth) = walk_spec(spec, k as u64, offset);
        staged.extend(events);
        truths.push(truth);
    }
    staged.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut trace = Trace::new(SINK, NodeParams::default().delta_q_s, false);
    for (time, kind) in staged {
        trace.push(time, kind);
    }
    trace.queries = truths;
    trace
}

/// What one contribution does to the carrier, per aggregation kind.
fn fold_expected(kind: AggKind, initial: CarrierString, contributions: &[f64]) -> CarrierString {
    let mut w = initial;
    for &v in contributions {
        match kind {
            AggKind::Sum | AggKind::Avg => w.acc1 += v,
            AggKind::Max => {
                if w.count == 0 {
                    w.acc1 = v;
                } else {
                    w.acc1 = w.acc1.max(v);
                }
            }
            AggKind::Variance | AggKind::Std => {
                w.acc1 += v;
                w.acc2 += v * v;
            }
        }
        w.count += 1;
    }
    w
}

/// Build and walk one query, emitting events at unit ticks from
/// `offset`. Returns the staged events and the query's ground truth.
fn walk_spec(spec: &ScenarioSpec, query: u64, offset: f64) -> (Vec<(f64, EventKind)>, QueryGroundTruth) {
    spec.check();
    let n = spec.n();
    let mut rng = derive_rng(spec.seed, &["scenario"], &[query]);

    // Nodes 0..n+3: sink, the n path nodes, and the two relay slots
    // (present in the network even when unused, so ids stay stable).
    let mut net_readings = vec![0.0f64; n + 3];
    for (i, &v) in spec.readings.iter().enumerate() {
        net_readings[ScenarioSpec::node_at(i)] = v;
    }
    let params = NodeParams { delays_enabled: false, ..NodeParams::default() };
    let mut net = SimNet::new(SINK, QUANTITY, &net_readings, params, &mut rng);
    for (i, &missing) in spec.missing_sensor.iter().enumerate() {
        if missing {
            net.states[ScenarioSpec::node_at(i)].env.sensors.clear();
        }
    }

    let path: Vec<NodeId> = (0..n).map(ScenarioSpec::node_at).collect();
    let positions: BTreeSet<usize> =
        spec.targets.iter().enumerate().filter(|(_, &t)| t).map(|(i, _)| i).collect();
    let bp = QueryBlueprint::plan(&mut rng, spec.kind, QUANTITY, path.clone(), &positions, spec.masked)
        .expect("scenario task compiles");
    let l_h = head_size_for(n).expect("scenario path length is on the head lattice");
    let mut current = bp.build(&net, l_h, DEFAULT_MAX_TASK_LEN, &mut rng).expect("query builds");

    let mut events: Vec<(f64, EventKind)> = Vec::new();
    let mut t = offset;
    fn tick(events: &mut Vec<(f64, EventKind)>, t: &mut f64, kind: EventKind) {
        events.push((*t, kind));
        *t += 1.0;
    }
    let mut readings: Vec<Option<f64>> = vec![None; n];

    for leg in 0..=n {
        let (net_src, net_dst) = match leg {
            0 => (SINK, path[0]),
            _ if leg == n => (path[n - 1], SINK),
            _ => (path[leg - 1], path[leg]),
        };
        let mut route: Vec<NodeId> = Vec::new();
        if leg == 0 && spec.entry_relay {
            route.push(spec.entry_relay_node());
        }
        if leg == n && spec.exit_relay {
            route.push(spec.exit_relay_node());
        }
        route.push(net_dst);

        let mut link_src = net_src;
        for &link_dst in &route {
            tick(
                &mut events,
                &mut t,
                EventKind::Transmit {
                    query,
                    link_src,
                    link_dst,
                    net_src,
                    net_dst,
                    head_bytes: current.head.len(),
                    body_bytes: current.body.len(),
                    head_digest: digest_hex(current.head.as_bytes()),
                    body_digest: digest_hex(current.body.as_bytes()),
                },
            );
            link_src = link_dst;
        }
        tick(&mut events, &mut t, EventKind::Deliver { query, node: net_dst });
        if net_dst == SINK {
            continue;
        }

        tick(&mut events, &mut t, EventKind::ProcessStart { query, node: net_dst });
        let hop = process_hop(&net, net_dst, &current, QUANTITY, &mut rng)
            .expect("scenario node processes its layer");
        let planned_next =
            if leg + 1 < n { address_of(path[leg + 1]) } else { address_of(SINK) };
        assert_eq!(hop.action.next_hop, planned_next, "peel diverged from the planned path");
        emit_process_end_staged(
            &mut events,
            &mut t,
            query,
            net_dst,
            &current,
            &hop.action.query,
            &hop.report,
            &bp,
            hop.reading,
        );
        readings[leg] = hop.reading;
        current = hop.action.query;
    }

    // The sink recovers the carrier; check it matches a direct fold of
    // the contributions that actually happened.
    let (query_id, carrier) = open_at_sink(&net, &bp, &current).expect("query opens at the sink");
    assert_eq!(query_id, bp.query_id, "terminal layer returned a foreign query id");
    let contributions: Vec<f64> = readings.iter().flatten().copied().collect();
    let expected = fold_expected(spec.kind, bp.initial, &contributions);
    assert_eq!(carrier.count, expected.count, "carrier count diverged from the contribution fold");
    for (got, want) in [(carrier.acc1, expected.acc1), (carrier.acc2, expected.acc2)] {
        assert!(
            (got - want).abs() <= 1e-9 * want.abs().max(1.0),
            "recovered accumulator {got} diverged from folded value {want}"
        );
    }

    let truth = QueryGroundTruth {
        query,
        path,
        targets: spec.targets.clone(),
        readings,
        quantities: vec![QUANTITY.to_string()],
        masked: spec.masked,
        initial_carrier: CarrierSnapshot::from(&bp.initial),
        final_carrier: Some(CarrierSnapshot::from(&carrier)),
    };
    (events, truth)
}

/// Stage a `process_end` event by writing it through a scratch trace,
/// so scenarios and the engine share one emission path.
#[allow(clippy::too_many_arguments)]
fn emit_process_end_staged(
    events: &mut Vec<(f64, EventKind)>,
    t: &mut f64,
    query: u64,
    node: NodeId,
    before: &onionq_core::node::Query,
    after: &onionq_core::node::Query,
    report: &onionq_core::node::ProcessingReport,
    bp: &QueryBlueprint,
    reading: Option<f64>,
) {
    let mut scratch = Trace::new(SINK, 0.0, false);
    emit_process_end(
        &mut scratch,
        *t,
        query,
        node,
        before,
        after,
        report,
        std::slice::from_ref(&bp.quantity),
        &bp.task,
        reading,
    );
    let event = scratch.events.pop().expect("emit_process_end pushed an event");
    events.push((event.time, event.kind));
    *t += 1.0;
}
