//! The experiment engine: issue queries over simulated networks and
//! measure their travel time.
//!
//! For every run × network size × path length cell the engine lays out a
//! topology, generates node keys and sensor readings, then issues
//! `queries_per_length` sequential queries. Each query is a real onion
//! query built by `onionq-core`: every path node peels its head layer
//! with its own keypair, targets execute the task and re-encrypt the
//! body. The virtual clock advances by radio transfer time per link hop
//! and by cryptographic processing time (plus the node's own hold delay)
//! per path node. A single hop exceeding the abort budget abandons the
//! query.
//!
//! With `record_trace`, every radio hop and processing step lands in a
//! [`Trace`] together with per-query ground truth, ready for the
//! adversary analyses.

use onionq_core::node::NodeError;
use onionq_core::onion::{head_size_for, OnionError, DEFAULT_MAX_TASK_LEN};
use onionq_core::request::AggKind;
use onionq_core::vm::TaskError;
use rand::{Rng, RngCore};
use thiserror::Error;

use crate::config::{ConfigError, SimConfig};
use crate::drive::{
    address_of, emit_process_end, open_at_sink, process_hop, sample_target_positions, QueryBlueprint,
    SimNet,
};
use crate::metrics::QttrRecord;
use crate::seed::derive_rng;
use crate::topology::{NodeId, RouteError, Router, Topology, TopologyKind};
use crate::trace::{digest_hex, CarrierSnapshot, EventKind, QueryGroundTruth, Trace};

/// The quantity every simulated node senses.
pub const QUANTITY: &str = "temperature";

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("recording a trace requires exactly one network size, got {0}")]
    TraceNeedsSingleSize(usize),
    #[error("network size {s}: no sensor nodes are reachable from the sink")]
    NoEligibleNodes { s: usize },
    #[error("path length {n} exceeds the {eligible} reachable sensor nodes at network size {s}; shrink the path or set allow_path_reuse = true")]
    PathTooLong { s: usize, n: usize, eligible: usize },
    #[error("network size {s} leaves only one reachable sensor node, which cannot host a path of length {n} without an immediate revisit")]
    NotEnoughAlternatives { s: usize, n: usize },
    #[error(transparent)]
    Route(#[from] RouteError),
    #[error("query construction failed: {0}")]
    Onion(#[from] OnionError),
    #[error("task compilation failed: {0}")]
    Task(#[from] TaskError),
    #[error("node processing failed: {0}")]
    Node(#[from] NodeError),
}

/// Everything one experiment produced.
#[derive(Debug)]
pub struct ExperimentOutput {
    pub records: Vec<QttrRecord>,
    /// Recorded events and ground truth, when requested.
    pub trace: Option<Trace>,
}

/// Draw a path of `n` sensor nodes from `pool`.
///
/// With reuse a node may appear multiple times (never twice in a row);
/// without it the path is a uniform distinct sample.
fn sample_path(
    pool: &[NodeId],
    n: usize,
    allow_reuse: bool,
    rng: &mut impl RngCore,
) -> Vec<NodeId> {
    if allow_reuse {
        let mut path: Vec<NodeId> = Vec::with_capacity(n);
        while path.len() < n {
            let cand = pool[rng.gen_range(0..pool.len())];
            if path.last() == Some(&cand) {
                continue;
            }
            path.push(cand);
        }
        path
    } else {
        // Partial Fisher-Yates over a working copy.
        let mut working = pool.to_vec();
        let mut path = Vec::with_capacity(n);
        for i in 0..n {
            let j = rng.gen_range(i..working.len());
            working.swap(i, j);
            path.push(working[i]);
        }
        path
    }
}

/// Run the full campaign described by `config`.
pub fn run_experiment(
    config: &SimConfig,
    record_trace: bool,
) -> Result<ExperimentOutput, EngineError> {
    config.validate()?;
    if record_trace && config.sizes.len() != 1 {
        return Err(EngineError::TraceNeedsSingleSize(config.sizes.len()));
    }

    let link = config.link_model();
    let params = config.node_params();
    let seed = config.seed;
    let mut records = Vec::new();
    let mut trace: Option<Trace> = None;
    let mut query_counter: u64 = 0;

    for run in 0..config.runs {
        for &s in &config.sizes {
            let topo = match config.topology {
                TopologyKind::Grid => Topology::grid(s, config.grid_spacing_m, config.comm_range_m),
                TopologyKind::Disc => {
                    let mut rng = derive_rng(seed, &["topology"], &[run as u64, s as u64]);
                    Topology::disc(s, config.coverage_radius_m, config.comm_range_m, &mut rng)
                }
            };
            let sink = topo.sink();
            if record_trace && trace.is_none() {
                trace = Some(Trace::new(sink, params.delta_q_s, params.delays_enabled));
            }
            let mut router = Router::new();
            let pool: Vec<NodeId> =
                topo.reachable_from_sink().into_iter().filter(|&v| v != sink).collect();
            if pool.is_empty() {
                return Err(EngineError::NoEligibleNodes { s });
            }

            let mut readings_rng = derive_rng(seed, &["readings"], &[run as u64, s as u64]);
            let readings: Vec<f64> =
                (0..topo.len()).map(|_| readings_rng.gen::<f64>() * 100.0).collect();
            let mut key_rng = derive_rng(seed, &["keys"], &[run as u64, s as u64]);
            let net = SimNet::new(sink, QUANTITY, &readings, params, &mut key_rng);

            for &n in &config.path_lengths {
                if !config.allow_path_reuse && n > pool.len() {
                    return Err(EngineError::PathTooLong { s, n, eligible: pool.len() });
                }
                if config.allow_path_reuse && pool.len() < 2 && n >= 2 {
                    return Err(EngineError::NotEnoughAlternatives { s, n });
                }
                let l_h = head_size_for(n)?;
                let mut clock = 0.0f64;

                for q in 0..config.queries_per_length {
                    let trace_query = query_counter;
                    query_counter += 1;
                    let coords =
                        [run as u64, s as u64, n as u64, q as u64];
                    let mut path_rng = derive_rng(seed, &["path"], &coords);
                    let path = sample_path(&pool, n, config.allow_path_reuse, &mut path_rng);
                    let positions = sample_target_positions(&mut path_rng, n, n / 2);
                    let bp = QueryBlueprint::plan(
                        &mut path_rng,
                        AggKind::Sum,
                        QUANTITY,
                        path,
                        &positions,
                        false,
                    )?;
                    let query = bp.build(&net, l_h, DEFAULT_MAX_TASK_LEN, &mut path_rng)?;

                    let outcome = walk_query(
                        WalkContext {
                            config,
                            link: &link,
                            topo: &topo,
                            router: &mut router,
                            net: &net,
                            seed,
                            coords,
                            trace_query,
                        },
                        &bp,
                        query,
                        &mut clock,
                        trace.as_mut(),
                    )?;

                    if let Some(trace) = trace.as_mut() {
                        trace.queries.push(QueryGroundTruth {
                            query: trace_query,
                            path: bp.path.clone(),
                            targets: bp.targets(),
                            readings: outcome.readings,
                            quantities: vec![QUANTITY.to_string()],
                            masked: bp.masked,
                            initial_carrier: CarrierSnapshot::from(&bp.initial),
                            final_carrier: outcome.final_carrier,
                        });
                    }

                    records.push(QttrRecord {
                        topology: config.topology,
                        s,
                        n,
                        run,
                        query_id: run * config.queries_per_length + q,
                        qttr_s: outcome.qttr_s,
                        aborted: outcome.aborted,
                        hops_total: outcome.hops_total,
                    });
                }
            }
        }
    }

    Ok(ExperimentOutput { records, trace })
}

struct WalkContext<'a> {
    config: &'a SimConfig,
    link: &'a crate::link::LinkModel,
    topo: &'a Topology,
    router: &'a mut Router,
    net: &'a SimNet,
    seed: u64,
    coords: [u64; 4],
    trace_query: u64,
}

struct WalkOutcome {
    qttr_s: Option<f64>,
    aborted: bool,
    hops_total: usize,
    readings: Vec<Option<f64>>,
    final_carrier: Option<CarrierSnapshot>,
}

/// Carry one built query around its path, advancing the cell clock.
fn walk_query(
    ctx: WalkContext<'_>,
    bp: &QueryBlueprint,
    query: onionq_core::node::Query,
    clock: &mut f64,
    mut trace: Option<&mut Trace>,
) -> Result<WalkOutcome, EngineError> {
    let WalkContext { config, link, topo, router, net, seed, coords, trace_query } = ctx;
    let n = bp.n();
    let sink = net.sink;
    let issue_time = *clock;
    let total_bytes = query.head.len() + query.body.len();
    let mut link_rng = derive_rng(seed, &["link"], &coords);
    let mut current = query;
    let mut hops_total = 0usize;
    let mut readings: Vec<Option<f64>> = vec![None; n];
    let mut aborted = false;

    'legs: for leg in 0..=n {
        let (net_src, net_dst) = match leg {
            0 => (sink, bp.path[0]),
            _ if leg == n => (bp.path[n - 1], sink),
            _ => (bp.path[leg - 1], bp.path[leg]),
        };
        let route = router.route(topo, net_src, net_dst)?;
        let mut link_src = net_src;
        for &link_dst in &route {
            let delay = link.hop_delay(total_bytes, &mut link_rng);
            hops_total += 1;
            if delay > config.abort_timeout_s {
                if let Some(trace) = trace.as_deref_mut() {
                    trace.push(
                        *clock,
                        EventKind::Abort { query: trace_query, link_src, link_dst },
                    );
                }
                aborted = true;
                break 'legs;
            }
            if let Some(trace) = trace.as_deref_mut() {
                trace.push(
                    *clock,
                    EventKind::Transmit {
                        query: trace_query,
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
            }
            *clock += delay;
            link_src = link_dst;
        }
        if let Some(trace) = trace.as_deref_mut() {
            trace.push(*clock, EventKind::Deliver { query: trace_query, node: net_dst });
        }
        if net_dst == sink {
            continue;
        }

        // Local processing at path position `leg`.
        if let Some(trace) = trace.as_deref_mut() {
            trace.push(*clock, EventKind::ProcessStart { query: trace_query, node: net_dst });
        }
        let mut node_rng = derive_rng(
            seed,
            &["node"],
            &[coords[0], coords[1], coords[2], coords[3], net_dst as u64, leg as u64],
        );
        let hop = process_hop(net, net_dst, &current, &bp.quantity, &mut node_rng)?;

        // Conservation check: the peeled layer must name the planned next hop.
        let planned_next =
            if leg + 1 < n { address_of(bp.path[leg + 1]) } else { address_of(sink) };
        assert_eq!(
            hop.action.next_hop, planned_next,
            "peeled next hop diverged from the planned path"
        );

        *clock += config.decrypt_cost_s_per_byte * total_bytes as f64 + hop.action.delay;
        if let Some(trace) = trace.as_deref_mut() {
            emit_process_end(
                trace,
                *clock,
                trace_query,
                net_dst,
                &current,
                &hop.action.query,
                &hop.report,
                std::slice::from_ref(&bp.quantity),
                &bp.task,
                hop.reading,
            );
        }
        readings[leg] = hop.reading;
        current = hop.action.query;
    }

    if aborted {
        return Ok(WalkOutcome {
            qttr_s: None,
            aborted: true,
            hops_total,
            readings,
            final_carrier: None,
        });
    }

    // The query is back at the sink: open it and verify conservation.
    let (query_id, carrier) = open_at_sink(net, bp, &current)?;
    assert_eq!(query_id, bp.query_id, "terminal layer returned a foreign query id");
    let expected_count = readings.iter().flatten().count() as u64;
    let expected_sum: f64 = readings.iter().flatten().sum();
    assert_eq!(
        carrier.count, expected_count,
        "recovered carrier count diverged from the contributing targets"
    );
    assert!(
        (carrier.acc1 - expected_sum).abs() <= 1e-9 * expected_sum.abs().max(1.0),
        "recovered sum {} diverged from direct sum {}",
        carrier.acc1,
        expected_sum
    );

    Ok(WalkOutcome {
        qttr_s: Some(*clock - issue_time),
        aborted: false,
        hops_total,
        readings,
        final_carrier: Some(CarrierSnapshot::from(&carrier)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> SimConfig {
        let mut config = SimConfig::default();
        config.sizes = vec![9];
        config.path_lengths = vec![4];
        config.queries_per_length = 3;
        config.seed = 11;
        config
    }

    #[test]
    fn small_grid_experiment_completes_and_verifies() {
        let out = run_experiment(&small_config(), true).unwrap();
        assert_eq!(out.records.len(), 3);
        for r in &out.records {
            assert!(!r.aborted);
            let qttr = r.qttr_s.unwrap();
            assert!(qttr > 0.0 && qttr < 1.0, "qttr {qttr}");
            // Every leg moves, so at least n + 1 hops.
            assert!(r.hops_total >= 5);
        }
        let trace = out.trace.unwrap();
        assert_eq!(trace.sink, 4);
        assert_eq!(trace.queries.len(), 3);
        for q in &trace.queries {
            assert_eq!(q.path.len(), 4);
            assert_eq!(q.targets.iter().filter(|&&t| t).count(), 2);
            assert!(!q.targets[3], "the last path slot must stay a decoy");
            let sum: f64 = q.readings.iter().flatten().sum();
            let fin = q.final_carrier.unwrap();
            assert!((fin.acc1 - sum).abs() <= 1e-9 * sum.abs().max(1.0));
            assert_eq!(fin.count, 2);
        }
        // Deliveries at the sink close each query.
        let sink_deliveries = trace
            .events
            .iter()
            .filter(|e| matches!(e.kind, EventKind::Deliver { node: 4, .. }))
            .count();
        assert_eq!(sink_deliveries, 3);
    }

    #[test]
    fn reruns_are_bit_identical() {
        let a = run_experiment(&small_config(), true).unwrap();
        let b = run_experiment(&small_config(), true).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(a.trace.unwrap().to_jsonl(), b.trace.unwrap().to_jsonl());
    }

    #[test]
    fn distinct_seeds_give_distinct_paths() {
        let mut config = small_config();
        let a = run_experiment(&config, true).unwrap();
        config.seed = 12;
        let b = run_experiment(&config, true).unwrap();
        let paths_a: Vec<_> = a.trace.unwrap().queries.iter().map(|q| q.path.clone()).collect();
        let paths_b: Vec<_> = b.trace.unwrap().queries.iter().map(|q| q.path.clone()).collect();
        assert_ne!(paths_a, paths_b);
    }

    #[test]
    fn strict_sampling_rejects_oversized_paths() {
        let mut config = small_config();
        config.allow_path_reuse = false;
        config.path_lengths = vec![9]; // only 8 non-sink nodes
        match run_experiment(&config, false) {
            Err(EngineError::PathTooLong { s: 9, n: 9, eligible: 8 }) => {}
            other => panic!("expected PathTooLong, got {other:?}"),
        }
    }

    #[test]
    fn reused_paths_allow_lengths_beyond_the_network() {
        let mut config = small_config();
        config.path_lengths = vec![12];
        config.queries_per_length = 2;
        let out = run_experiment(&config, true).unwrap();
        assert_eq!(out.records.len(), 2);
        for q in &out.trace.unwrap().queries {
            assert_eq!(q.path.len(), 12);
            // No immediate revisits even though nodes repeat.
            for pair in q.path.windows(2) {
                assert_ne!(pair[0], pair[1]);
            }
        }
    }

    #[test]
    fn abort_budget_kills_slow_hops() {
        let mut config = small_config();
        // Make every hop slower than the abort budget.
        config.set("data_rate_bps", "10.0").unwrap();
        config.set("abort_timeout_s", "1.0").unwrap();
        let out = run_experiment(&config, true).unwrap();
        for r in &out.records {
            assert!(r.aborted);
            assert_eq!(r.qttr_s, None);
            assert_eq!(r.hops_total, 1);
        }
        let trace = out.trace.unwrap();
        let aborts =
            trace.events.iter().filter(|e| matches!(e.kind, EventKind::Abort { .. })).count();
        assert_eq!(aborts, 3);
        for q in &trace.queries {
            assert_eq!(q.final_carrier, None);
        }
    }

    #[test]
    fn traces_span_a_single_network_size_only() {
        let mut config = small_config();
        config.sizes = vec![9, 16];
        assert!(matches!(
            run_experiment(&config, true),
            Err(EngineError::TraceNeedsSingleSize(2))
        ));
        assert!(run_experiment(&config, false).is_ok());
    }
}
