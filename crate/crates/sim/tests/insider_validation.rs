//! Randomized soundness validation: across thousands of generated
//! scenarios, the insider analysis must never emit a finding that
//! contradicts ground truth — no false roles, no false readings —
//! while still finding plenty when the compromise allows it.

use std::collections::BTreeSet;

use onionq_sim::adversary::{
    disclosure_rate, internal_findings, known_initial_for, verify_findings, Claim,
    DeductionPolicy,
};
use onionq_core::request::AggKind;
use onionq_sim::scenario::{random_spec, synthesize, ScenarioSpec};
use onionq_sim::seed::derive_rng;
use onionq_sim::topology::NodeId;
use onionq_sim::trace::{EventKind, Trace};
use rand::seq::SliceRandom;
use rand::{Rng, RngCore};

/// Every node id a trace mentions, except the sink.
fn non_sink_nodes(trace: &Trace) -> Vec<NodeId> {
    trace
        .events
        .iter()
        .flat_map(|e| match e.kind {
            EventKind::Transmit { link_src, link_dst, net_src, net_dst, .. } => {
                vec![link_src, link_dst, net_src, net_dst]
            }
            EventKind::Deliver { node, .. }
            | EventKind::ProcessStart { node, .. }
            | EventKind::ProcessEnd { node, .. } => vec![node],
            EventKind::Abort { link_src, link_dst, .. } => vec![link_src, link_dst],
        })
        .collect::<BTreeSet<_>>()
        .into_iter()
        .filter(|&node| node != trace.sink)
        .collect()
}

fn random_owned(trace: &Trace, share: f64, rng: &mut impl RngCore) -> BTreeSet<NodeId> {
    let mut nodes = non_sink_nodes(trace);
    nodes.shuffle(rng);
    let k = ((nodes.len() as f64) * share).round() as usize;
    nodes.into_iter().take(k).collect()
}

#[test]
fn thousands_of_random_scenarios_produce_no_false_findings() {
    let mut rng = derive_rng(2024, &["insider-validation"], &[]);
    let mut total = 0usize;
    let mut decoys = 0usize;
    let mut targets = 0usize;
    let mut readings = 0usize;

    for batch in 0..250 {
        // Masking is a deployment-wide switch; alternate deployments.
        let masked = batch % 2 == 1;
        let specs: Vec<_> = (0..8)
            .map(|_| {
                let mut spec = random_spec(&mut rng, masked);
                spec.seed = rng.gen();
                spec
            })
            .collect();
        let trace = synthesize(&specs, batch % 3 == 0);
        let owned = random_owned(&trace, 0.35, &mut rng);

        for policy in [DeductionPolicy::AlwaysDeduce, DeductionPolicy::MixingAware] {
            let findings = internal_findings(&trace, &owned, policy, known_initial_for(&trace))
                .expect("analysis runs");
            verify_findings(&trace, &owned, &findings)
                .expect("no finding may contradict ground truth");
            if policy == DeductionPolicy::AlwaysDeduce {
                total += findings.len();
                decoys += findings.iter().filter(|f| f.claim == Claim::IsDecoy).count();
                targets += findings.iter().filter(|f| f.claim == Claim::IsTarget).count();
                readings += findings.iter().filter(|f| f.claim == Claim::ReadingDisclosed).count();
            }
        }
    }

    // 250 deployments × 8 queries: the validation must have teeth.
    assert!(total >= 400, "suspiciously few findings overall: {total}");
    assert!(decoys >= 200, "suspiciously few decoy identifications: {decoys}");
    assert!(targets >= 40, "suspiciously few task-holder identifications: {targets}");
    assert!(readings >= 5, "suspiciously few reading disclosures: {readings}");
}

/// A query whose every position except the mandatory trailing decoy
/// carries task keys. Reading disclosure needs an owned task holder on
/// both sides of the victim (forwarding-only nodes never see carrier
/// values), so dense task placement is what gives the curve signal at
/// small owned shares.
fn dense_spec(rng: &mut impl RngCore) -> ScenarioSpec {
    let n = rng.gen_range(4..=8usize);
    let targets: Vec<bool> = (0..n).map(|i| i != n - 1).collect();
    let readings: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() * 100.0).collect();
    let mut spec = ScenarioSpec::new(&targets, &readings);
    let kinds = [AggKind::Sum, AggKind::Avg, AggKind::Max, AggKind::Variance, AggKind::Std];
    spec.kind = kinds[rng.gen_range(0..kinds.len())];
    spec.entry_relay = rng.gen::<f64>() < 0.5;
    spec.exit_relay = rng.gen::<f64>() < 0.5;
    spec.seed = rng.gen();
    spec
}

#[test]
fn reading_disclosure_grows_with_the_owned_share() {
    let mut rng = derive_rng(501, &["disclosure-curve"], &[]);
    let traces: Vec<Trace> = (0..80)
        .map(|i| {
            let specs: Vec<_> = (0..6).map(|_| dense_spec(&mut rng)).collect();
            synthesize(&specs, i % 2 == 0)
        })
        .collect();

    let fractions = [0.0, 0.1, 0.2, 0.3, 0.5];
    let curve = disclosure_rate(&traces, &fractions, DeductionPolicy::MixingAware, &mut rng)
        .expect("curve computes");

    assert_eq!(curve.len(), fractions.len());
    assert_eq!(curve[0], (0.0, 0.0), "no compromise, no disclosure");
    for pair in curve.windows(2) {
        assert!(
            pair[1].1 >= pair[0].1 - 0.02,
            "disclosure rate fell sharply between fractions: {curve:?}"
        );
    }
    let last = curve.last().unwrap().1;
    assert!(last > curve[1].1, "half-compromise must beat a tenth: {curve:?}");
    assert!(last > 0.02, "half of the network owned should disclose something: {curve:?}");
}

#[test]
fn owned_subsets_only_shrink_knowledge_never_corrupt_it() {
    // Nested owned sets: a superset's findings must include everything
    // a subset could deduce about subjects outside the superset.
    let mut rng = derive_rng(77, &["nesting"], &[]);
    let specs: Vec<_> = (0..10).map(|_| random_spec(&mut rng, false)).collect();
    let trace = synthesize(&specs, false);
    let mut nodes = non_sink_nodes(&trace);
    nodes.shuffle(&mut rng);

    let small: BTreeSet<NodeId> = nodes.iter().copied().take(3).collect();
    let large: BTreeSet<NodeId> = nodes.iter().copied().take(8).collect();
    let initial = known_initial_for(&trace);
    let f_small =
        internal_findings(&trace, &small, DeductionPolicy::AlwaysDeduce, initial).unwrap();
    let f_large =
        internal_findings(&trace, &large, DeductionPolicy::AlwaysDeduce, initial).unwrap();

    let keys = |findings: &[onionq_sim::adversary::Finding]| -> BTreeSet<(u64, NodeId, Claim)> {
        findings.iter().map(|f| (f.query_id, f.subject, f.claim)).collect()
    };
    let small_keys = keys(&f_small);
    let large_keys = keys(&f_large);
    for key in &small_keys {
        if !large.contains(&key.1) {
            assert!(
                large_keys.contains(key),
                "the larger compromise lost a deduction the smaller one made: {key:?}"
            );
        }
    }
}
