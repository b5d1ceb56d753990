//! Adversary analyses: what compromised insiders and passive
//! eavesdroppers can deduce from a recorded trace.
//!
//! Two observer models are mechanized.
//!
//! **Colluding insiders** ([`internal_findings`]): the adversary owns a
//! set of sensor nodes and pools their node-private knowledge — their
//! own processing records plus the radio frames they sent or received.
//! Each owned node knows its predecessor and successor on a query's
//! path (the network header names the leg's source, and peeling reveals
//! the next hop), so consecutive owned observations bracket a known gap
//! of the path. Deductions follow from ciphertext identity:
//!
//! * an unchanged body digest across a bracket proves every node inside
//!   forwarded blindly (decoys — re-encryption is unconditional for
//!   task holders, even when their task faults);
//! * a changed digest across a *single* confined node proves that node
//!   held task keys; the disclosed task bytes then name the quantity it
//!   contributed, and when both bracket ends also know the carrier and
//!   exactly one contribution lies between, arithmetic on the
//!   accumulators recovers the confined node's reading.
//!
//! Frames leaving the sink carry the deployment's initial carrier
//! (public when masking is off), so an adversary seeing a first-leg
//! frame gains a synthetic origin observation; likewise the last leg
//! always ends at a decoy, so seeing it names one. Deductions assume
//! each node appears at most once per path — a deployment that routes
//! the same node twice in one query defeats bracket attribution.
//!
//! **External eavesdropper** ([`external_view`]): sees every radio
//! frame but owns no keys. Sizes are invariant under forwarding and
//! re-encryption alike (uniform heads, repadding), so only timing
//! remains: a node that keeps a frame longer than radio forwarding
//! explains must have processed it ([`Claim::ProcessedQuery`]), and
//! residence times might distinguish task holders from decoys — unless
//! randomized holds flatten the distribution, which
//! [`residence_classifier`] measures.

use rand::seq::SliceRandom;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

use onionq_core::vm::{self, Instr};

use crate::link::LinkModel;
use crate::stats::median;
use crate::topology::NodeId;
use crate::trace::{CarrierSnapshot, EventId, EventKind, Trace};

/// What a finding asserts about its subject node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Claim {
    /// The subject processed the query (held it beyond forwarding time).
    ProcessedQuery,
    /// The subject forwarded the query without touching the body.
    IsDecoy,
    /// The subject held task keys and executed the task.
    IsTarget,
    /// The quantity the subject's task reads is known (detail names it).
    QuantityDisclosed,
    /// The subject's sensor reading is known (detail carries the value).
    ReadingDisclosed,
    /// A query's frame sizes changed in flight (a padding failure).
    SizeAnomaly,
}

/// One deduction about one node in one query.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Finding {
    pub query_id: u64,
    pub subject: NodeId,
    pub claim: Claim,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
    /// Lowered confidence: the deduction relied on correlating frames
    /// across a gap while other traffic was interleaving.
    #[serde(default)]
    pub suspected: bool,
    pub evidence_event_ids: Vec<EventId>,
}

/// Serialize findings as JSON Lines, one finding per line.
pub fn findings_to_jsonl(findings: &[Finding]) -> String {
    let mut out = String::new();
    for finding in findings {
        out.push_str(&serde_json::to_string(finding).expect("finding serializes"));
        out.push('\n');
    }
    out
}

/// Parse the JSON Lines form produced by [`findings_to_jsonl`].
pub fn findings_from_jsonl(text: &str) -> Result<Vec<Finding>, serde_json::Error> {
    text.lines()
        .filter(|line| !line.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}

/// How boldly the insider analysis treats cross-gap correlation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DeductionPolicy {
    /// Trust every bracket, even under interleaved traffic.
    AlwaysDeduce,
    /// Keep the deductions but mark digest-difference brackets observed
    /// during interleaved traffic as `suspected`.
    MixingAware,
}

#[derive(Debug, Error)]
pub enum AdversaryError {
    #[error("the sink (node {0}) cannot be an owned node")]
    OwnsSink(NodeId),
    #[error("trace carries undecodable task bytes: {0}")]
    Task(#[from] vm::TaskError),
    #[error("trace carries malformed hex: {0}")]
    Hex(#[from] hex::FromHexError),
}

/// The deployment-wide initial carrier, as an adversary would know it:
/// the zero carrier when masking is off (a protocol constant), unknown
/// when any query masks its start value.
pub fn known_initial_for(trace: &Trace) -> Option<CarrierSnapshot> {
    if !trace.queries.is_empty() && trace.queries.iter().all(|q| !q.masked) {
        Some(CarrierSnapshot { acc1: 0.0, acc2: 0.0, count: 0 })
    } else {
        None
    }
}

/// One owned vantage point on one query: either a node's own processing
/// record, or a synthetic endpoint built from a visible first/last-leg
/// frame (the sink side of the path).
struct Obs {
    node: NodeId,
    time: f64,
    /// Network-layer predecessor (who handed the frame over).
    prev: Option<NodeId>,
    /// Network-layer successor (where the frame went next).
    next: Option<NodeId>,
    body_in: Option<String>,
    body_out: Option<String>,
    carrier_in: Option<CarrierSnapshot>,
    carrier_out: Option<CarrierSnapshot>,
    task_hex: Option<String>,
    event_id: EventId,
}

/// Run the colluding-insider analysis.
///
/// `owned` is the set of compromised nodes (never the sink);
/// `known_initial` is the deployment's public initial carrier, if any
/// (see [`known_initial_for`]). Findings are deduplicated per
/// (query, subject, claim) and never name owned nodes or the sink.
pub fn internal_findings(
    trace: &Trace,
    owned: &BTreeSet<NodeId>,
    policy: DeductionPolicy,
    known_initial: Option<CarrierSnapshot>,
) -> Result<Vec<Finding>, AdversaryError> {
    if owned.contains(&trace.sink) {
        return Err(AdversaryError::OwnsSink(trace.sink));
    }
    let queries: BTreeSet<u64> = trace.events.iter().map(|e| e.kind.query()).collect();
    let mut findings = Vec::new();
    let mut seen: BTreeSet<(u64, NodeId, Claim)> = BTreeSet::new();
    for query in queries {
        analyze_query(trace, query, owned, policy, known_initial, &mut findings, &mut seen)?;
    }
    Ok(findings)
}

fn analyze_query(
    trace: &Trace,
    query: u64,
    owned: &BTreeSet<NodeId>,
    policy: DeductionPolicy,
    known_initial: Option<CarrierSnapshot>,
    findings: &mut Vec<Finding>,
    seen: &mut BTreeSet<(u64, NodeId, Claim)>,
) -> Result<(), AdversaryError> {
    let events: Vec<_> = trace.events_of(query).collect();
    let visible = |link_src: NodeId, link_dst: NodeId| {
        owned.contains(&link_src) || owned.contains(&link_dst)
    };

    let mut obs: Vec<Obs> = Vec::new();

    // Synthetic origin: a visible first-leg frame reveals the body the
    // sink sent out and (when masking is off) the carrier inside it.
    for event in &events {
        if let EventKind::Transmit { link_src, link_dst, net_src, net_dst, body_digest, .. } =
            &event.kind
        {
            if *net_src == trace.sink && visible(*link_src, *link_dst) {
                obs.push(Obs {
                    node: trace.sink,
                    time: event.time,
                    prev: None,
                    next: Some(*net_dst),
                    body_in: None,
                    body_out: Some(body_digest.clone()),
                    carrier_in: None,
                    carrier_out: known_initial,
                    task_hex: None,
                    event_id: event.id,
                });
                break;
            }
        }
    }

    // Owned nodes' own processing records, with the leg endpoints they
    // learned from their adjacent frames.
    for (idx, event) in events.iter().enumerate() {
        if let EventKind::ProcessEnd {
            node,
            body_digest_in,
            body_digest_out,
            carrier_in,
            carrier_out,
            task_hex,
            ..
        } = &event.kind
        {
            if !owned.contains(node) {
                continue;
            }
            let prev = events[..idx].iter().rev().find_map(|e| match &e.kind {
                EventKind::Transmit { net_src, net_dst, .. } if net_dst == node => Some(*net_src),
                _ => None,
            });
            let next = events[idx + 1..].iter().find_map(|e| match &e.kind {
                EventKind::Transmit { net_src, net_dst, .. } if net_src == node => Some(*net_dst),
                _ => None,
            });
            obs.push(Obs {
                node: *node,
                time: event.time,
                prev,
                next,
                body_in: Some(body_digest_in.clone()),
                body_out: Some(body_digest_out.clone()),
                carrier_in: *carrier_in,
                carrier_out: *carrier_out,
                task_hex: task_hex.clone(),
                event_id: event.id,
            });
        }
    }

    // Synthetic terminus plus the standalone last-leg rule: the node
    // handing a frame back to the sink is the path's final slot, which
    // the protocol reserves for a decoy.
    let terminal = events.iter().rev().find_map(|event| match &event.kind {
        EventKind::Transmit { link_src, link_dst, net_src, net_dst, body_digest, .. }
            if *net_dst == trace.sink && visible(*link_src, *link_dst) =>
        {
            Some((event.id, event.time, *net_src, body_digest.clone()))
        }
        _ => None,
    });
    if let Some((event_id, time, last_node, body_digest)) = terminal {
        emit(
            findings,
            seen,
            query,
            last_node,
            Claim::IsDecoy,
            None,
            false,
            vec![event_id],
            owned,
            trace.sink,
        );
        obs.push(Obs {
            node: trace.sink,
            time,
            prev: Some(last_node),
            next: None,
            body_in: Some(body_digest),
            body_out: None,
            carrier_in: None,
            carrier_out: None,
            task_hex: None,
            event_id,
        });
    }

    for pair in obs.windows(2) {
        let (o1, o2) = (&pair[0], &pair[1]);
        // Adjacent observations bracket nothing.
        if o1.next == Some(o2.node) {
            continue;
        }
        let (Some(d1), Some(d2)) = (&o1.body_out, &o2.body_in) else { continue };
        let evidence = vec![o1.event_id, o2.event_id];

        if o1.next.is_some() && o1.next == o2.prev {
            // Exactly one unknown node sits in the bracket.
            let confined = o1.next.unwrap();
            if d1 == d2 {
                emit(
                    findings,
                    seen,
                    query,
                    confined,
                    Claim::IsDecoy,
                    None,
                    false,
                    evidence,
                    owned,
                    trace.sink,
                );
                continue;
            }
            let suspected = policy == DeductionPolicy::MixingAware
                && interleaved_between(trace, query, o1.time, o2.time);
            emit(
                findings,
                seen,
                query,
                confined,
                Claim::IsTarget,
                None,
                suspected,
                evidence.clone(),
                owned,
                trace.sink,
            );
            let task = match o1.task_hex.as_ref().or(o2.task_hex.as_ref()) {
                Some(hex_text) => Some(hex::decode(hex_text)?),
                None => None,
            };
            if let Some(task) = &task {
                let quantities = vm::quantities(task)?;
                emit(
                    findings,
                    seen,
                    query,
                    confined,
                    Claim::QuantityDisclosed,
                    Some(quantities.join(",")),
                    suspected,
                    evidence.clone(),
                    owned,
                    trace.sink,
                );
                if let (Some(a1), Some(a2)) = (o1.carrier_out, o2.carrier_in) {
                    if a2.count as i128 - a1.count as i128 == 1 {
                        if let Some(value) = confined_contribution(task, a1, a2)? {
                            emit(
                                findings,
                                seen,
                                query,
                                confined,
                                Claim::ReadingDisclosed,
                                Some(value.to_string()),
                                suspected,
                                evidence,
                                owned,
                                trace.sink,
                            );
                        }
                    }
                }
            }
        } else if d1 == d2 {
            // Two or more unknowns in the bracket, but the body came
            // through untouched: everyone inside forwarded blindly, and
            // the bracket's two known neighbours are named.
            for subject in [o1.next, o2.prev].into_iter().flatten() {
                emit(
                    findings,
                    seen,
                    query,
                    subject,
                    Claim::IsDecoy,
                    None,
                    false,
                    evidence.clone(),
                    owned,
                    trace.sink,
                );
            }
        }
        // A changed digest across two or more unknowns attributes to
        // none of them.
    }
    Ok(())
}

/// The single confined contribution's value, when accumulator
/// arithmetic pins it down. `a1` is the carrier entering the bracket,
/// `a2` the carrier leaving it, with exactly one contribution between.
fn confined_contribution(
    task: &[u8],
    a1: CarrierSnapshot,
    a2: CarrierSnapshot,
) -> Result<Option<f64>, AdversaryError> {
    let folds_max = vm::decode(task)?.iter().any(|(_, instr)| matches!(instr, Instr::Max));
    if folds_max {
        // A first contribution assigns the accumulator; a later one
        // only shows through when it raises the running maximum.
        if a1.count == 0 || a2.acc1 != a1.acc1 {
            Ok(Some(a2.acc1))
        } else {
            Ok(None)
        }
    } else {
        Ok(Some(a2.acc1 - a1.acc1))
    }
}

/// Did any other query's events land strictly between `t1` and `t2`?
fn interleaved_between(trace: &Trace, query: u64, t1: f64, t2: f64) -> bool {
    trace
        .events
        .iter()
        .any(|e| e.kind.query() != query && e.time > t1 && e.time < t2)
}

#[allow(clippy::too_many_arguments)]
fn emit(
    findings: &mut Vec<Finding>,
    seen: &mut BTreeSet<(u64, NodeId, Claim)>,
    query_id: u64,
    subject: NodeId,
    claim: Claim,
    detail: Option<String>,
    suspected: bool,
    evidence_event_ids: Vec<EventId>,
    owned: &BTreeSet<NodeId>,
    sink: NodeId,
) {
    if subject == sink || owned.contains(&subject) {
        return;
    }
    if !seen.insert((query_id, subject, claim)) {
        return;
    }
    findings.push(Finding { query_id, subject, claim, detail, suspected, evidence_event_ids });
}

/// One node's stay of one query, as radio timing reveals it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Visit {
    pub query: u64,
    pub node: NodeId,
    /// Time between the frame's computed arrival and its departure,
    /// beyond what radio transfer explains.
    pub residence_s: f64,
    pub arrive_id: EventId,
    pub depart_id: EventId,
}

/// Everything the passive eavesdropper extracted.
pub struct ExternalReport {
    pub findings: Vec<Finding>,
    pub visits: Vec<Visit>,
}

/// Run the passive-eavesdropper analysis over every radio frame.
///
/// The observer reconstructs each leg's arrival from transfer time,
/// flags nodes whose residence exceeds half the processing window as
/// query processors, and reports any in-flight frame size change.
pub fn external_view(trace: &Trace, link: &LinkModel) -> ExternalReport {
    let mut findings = Vec::new();
    let mut seen: BTreeSet<(u64, NodeId, Claim)> = BTreeSet::new();
    let mut visits = Vec::new();
    let mut pending: BTreeMap<(u64, NodeId), (f64, EventId)> = BTreeMap::new();
    let mut sizes: BTreeMap<u64, (usize, usize, EventId)> = BTreeMap::new();
    let nobody: BTreeSet<NodeId> = BTreeSet::new();

    for event in &trace.events {
        let EventKind::Transmit {
            query,
            link_src,
            link_dst,
            net_src,
            net_dst,
            head_bytes,
            body_bytes,
            ..
        } = &event.kind
        else {
            continue;
        };

        // A leg's first hop marks the processor's departure.
        if link_src == net_src && *net_src != trace.sink {
            if let Some((arrived, arrive_id)) = pending.remove(&(*query, *net_src)) {
                let residence_s = event.time - arrived;
                visits.push(Visit {
                    query: *query,
                    node: *net_src,
                    residence_s,
                    arrive_id,
                    depart_id: event.id,
                });
                if residence_s > trace.delta_q_s / 2.0 {
                    emit(
                        &mut findings,
                        &mut seen,
                        *query,
                        *net_src,
                        Claim::ProcessedQuery,
                        Some(residence_s.to_string()),
                        false,
                        vec![arrive_id, event.id],
                        &nobody,
                        trace.sink,
                    );
                }
            }
        }
        // A leg's last hop marks the next processor's arrival.
        if link_dst == net_dst && *net_dst != trace.sink {
            let arrival = event.time + link.transfer_time(head_bytes + body_bytes);
            pending.insert((*query, *net_dst), (arrival, event.id));
        }

        match sizes.get(query) {
            None => {
                sizes.insert(*query, (*head_bytes, *body_bytes, event.id));
            }
            Some(&(h0, b0, first_id)) => {
                if (h0, b0) != (*head_bytes, *body_bytes) {
                    emit(
                        &mut findings,
                        &mut seen,
                        *query,
                        *net_src,
                        Claim::SizeAnomaly,
                        Some(format!("{h0}+{b0} -> {head_bytes}+{body_bytes}")),
                        false,
                        vec![first_id, event.id],
                        &nobody,
                        trace.sink,
                    );
                }
            }
        }
    }

    ExternalReport { findings, visits }
}

/// How well residence times separate task holders from decoys.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassifierScore {
    pub visits: usize,
    pub accuracy: f64,
}

/// Score a median-split classifier over the eavesdropper's visits:
/// predict "task holder" for residences above the median and check
/// against ground truth. Near 0.5 means timing reveals nothing.
pub fn residence_classifier(trace: &Trace, visits: &[Visit]) -> Option<ClassifierScore> {
    let mut labelled: Vec<(f64, bool)> = Vec::new();
    let mut occurrence: BTreeMap<(u64, NodeId), usize> = BTreeMap::new();
    for visit in visits {
        let truth = trace.queries.iter().find(|q| q.query == visit.query)?;
        let seen_before = occurrence.entry((visit.query, visit.node)).or_insert(0);
        let position = truth
            .path
            .iter()
            .enumerate()
            .filter(|(_, &node)| node == visit.node)
            .map(|(p, _)| p)
            .nth(*seen_before)?;
        *seen_before += 1;
        labelled.push((visit.residence_s, truth.targets[position]));
    }
    if labelled.is_empty() {
        return None;
    }
    let split = median(&labelled.iter().map(|&(r, _)| r).collect::<Vec<_>>());
    let correct = labelled.iter().filter(|&&(r, target)| (r > split) == target).count();
    Some(ClassifierScore {
        visits: labelled.len(),
        accuracy: correct as f64 / labelled.len() as f64,
    })
}

/// Is a reading-disclosure finding consistent with what its subject
/// actually contributed?
pub fn reading_disclosure_is_correct(trace: &Trace, finding: &Finding) -> bool {
    let Some(truth) = trace.queries.iter().find(|q| q.query == finding.query_id) else {
        return false;
    };
    let Some(value) = finding.detail.as_ref().and_then(|d| d.parse::<f64>().ok()) else {
        return false;
    };
    truth.path.iter().enumerate().any(|(p, &node)| {
        node == finding.subject
            && matches!(truth.readings[p], Some(r) if (value - r).abs() <= 1e-9 * r.abs().max(1.0))
    })
}

/// Check every finding against ground truth; the first false claim (or
/// a duplicate, or a claim about an owned node or the sink) is an error.
pub fn verify_findings(
    trace: &Trace,
    owned: &BTreeSet<NodeId>,
    findings: &[Finding],
) -> Result<(), String> {
    let mut keys = BTreeSet::new();
    for finding in findings {
        let tag = format!(
            "query {} subject {} claim {:?}",
            finding.query_id, finding.subject, finding.claim
        );
        if finding.subject == trace.sink {
            return Err(format!("{tag}: names the sink"));
        }
        if owned.contains(&finding.subject) {
            return Err(format!("{tag}: names an owned node"));
        }
        if !keys.insert((finding.query_id, finding.subject, finding.claim)) {
            return Err(format!("{tag}: duplicated"));
        }
        let truth = trace
            .queries
            .iter()
            .find(|q| q.query == finding.query_id)
            .ok_or_else(|| format!("{tag}: unknown query"))?;
        let positions: Vec<usize> = truth
            .path
            .iter()
            .enumerate()
            .filter(|(_, &node)| node == finding.subject)
            .map(|(p, _)| p)
            .collect();
        let ok = match finding.claim {
            Claim::IsDecoy => {
                !positions.is_empty() && positions.iter().all(|&p| !truth.targets[p])
            }
            Claim::IsTarget => positions.iter().any(|&p| truth.targets[p]),
            Claim::QuantityDisclosed => {
                positions.iter().any(|&p| truth.targets[p])
                    && finding.detail.as_deref() == Some(truth.quantities.join(",").as_str())
            }
            Claim::ReadingDisclosed => reading_disclosure_is_correct(trace, finding),
            Claim::ProcessedQuery => !positions.is_empty(),
            Claim::SizeAnomaly => false,
        };
        if !ok {
            return Err(format!("{tag}: contradicts ground truth (detail {:?})", finding.detail));
        }
    }
    Ok(())
}

/// Measure how reading disclosure grows with the owned fraction.
///
/// For each trace, non-sink nodes are shuffled once and each fraction
/// owns a prefix of that order (so owned sets are nested). The rate is
/// the share of ground-truth contributions by non-owned nodes whose
/// value the insider analysis correctly disclosed.
pub fn disclosure_rate(
    traces: &[Trace],
    fractions: &[f64],
    policy: DeductionPolicy,
    rng: &mut impl RngCore,
) -> Result<Vec<(f64, f64)>, AdversaryError> {
    let mut disclosed = vec![0usize; fractions.len()];
    let mut contributions = vec![0usize; fractions.len()];

    for trace in traces {
        let mut nodes: Vec<NodeId> = trace
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
            .collect();
        nodes.shuffle(rng);
        let known_initial = known_initial_for(trace);

        for (i, &fraction) in fractions.iter().enumerate() {
            let k = ((fraction * nodes.len() as f64).round() as usize).min(nodes.len());
            let owned: BTreeSet<NodeId> = nodes[..k].iter().copied().collect();
            let findings = internal_findings(trace, &owned, policy, known_initial)?;
            disclosed[i] += findings
                .iter()
                .filter(|f| {
                    f.claim == Claim::ReadingDisclosed && reading_disclosure_is_correct(trace, f)
                })
                .count();
            contributions[i] += trace
                .queries
                .iter()
                .flat_map(|q| q.path.iter().zip(&q.readings))
                .filter(|(node, reading)| reading.is_some() && !owned.contains(node))
                .count();
        }
    }

    Ok(fractions
        .iter()
        .zip(disclosed.iter().zip(&contributions))
        .map(|(&f, (&num, &den))| (f, if den == 0 { 0.0 } else { num as f64 / den as f64 }))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::QueryGroundTruth;

    fn finding(subject: NodeId, claim: Claim, detail: Option<&str>) -> Finding {
        Finding {
            query_id: 0,
            subject,
            claim,
            detail: detail.map(str::to_string),
            suspected: false,
            evidence_event_ids: vec![1, 2],
        }
    }

    fn truth_trace() -> Trace {
        let mut trace = Trace::new(0, 0.05, false);
        trace.queries.push(QueryGroundTruth {
            query: 0,
            path: vec![1, 2, 3],
            targets: vec![true, true, false],
            readings: vec![Some(5.0), Some(7.0), None],
            quantities: vec!["temperature".into()],
            masked: false,
            initial_carrier: CarrierSnapshot { acc1: 0.0, acc2: 0.0, count: 0 },
            final_carrier: Some(CarrierSnapshot { acc1: 12.0, acc2: 0.0, count: 2 }),
        });
        trace
    }

    #[test]
    fn findings_serialize_with_snake_case_claims() {
        let text = findings_to_jsonl(&[finding(2, Claim::IsDecoy, None)]);
        assert!(text.contains("\"claim\":\"is_decoy\""));
        assert!(text.contains("\"query_id\":0"));
        assert!(text.contains("\"evidence_event_ids\":[1,2]"));
        assert!(!text.contains("detail"), "absent details are omitted");
        let back = findings_from_jsonl(&text).unwrap();
        assert_eq!(back, vec![finding(2, Claim::IsDecoy, None)]);
    }

    #[test]
    fn verification_accepts_true_claims_and_rejects_false_ones() {
        let trace = truth_trace();
        let owned = BTreeSet::from([1]);
        let good = vec![
            finding(3, Claim::IsDecoy, None),
            finding(2, Claim::IsTarget, None),
            finding(2, Claim::QuantityDisclosed, Some("temperature")),
            finding(2, Claim::ReadingDisclosed, Some("7")),
            finding(2, Claim::ProcessedQuery, Some("0.07")),
        ];
        assert_eq!(verify_findings(&trace, &owned, &good), Ok(()));

        for bad in [
            finding(2, Claim::IsDecoy, None),
            finding(3, Claim::IsTarget, None),
            finding(2, Claim::ReadingDisclosed, Some("6.9")),
            finding(2, Claim::QuantityDisclosed, Some("humidity")),
            finding(0, Claim::IsDecoy, None),
            finding(1, Claim::IsTarget, None),
            finding(5, Claim::ProcessedQuery, None),
            finding(2, Claim::SizeAnomaly, Some("549+1342 -> 549+1414")),
        ] {
            assert!(verify_findings(&trace, &owned, &[bad.clone()]).is_err(), "{bad:?}");
        }

        let dup = vec![finding(3, Claim::IsDecoy, None), finding(3, Claim::IsDecoy, None)];
        assert!(verify_findings(&trace, &owned, &dup).is_err());
    }

    #[test]
    fn reading_checks_tolerate_float_noise_only() {
        let trace = truth_trace();
        assert!(reading_disclosure_is_correct(
            &trace,
            &finding(2, Claim::ReadingDisclosed, Some("7.000000000000001"))
        ));
        assert!(!reading_disclosure_is_correct(
            &trace,
            &finding(2, Claim::ReadingDisclosed, Some("7.01"))
        ));
        assert!(!reading_disclosure_is_correct(
            &trace,
            &finding(2, Claim::ReadingDisclosed, Some("not a number"))
        ));
    }

    #[test]
    fn max_folds_disclose_only_when_the_accumulator_moves() {
        let task = crate::drive::task_for(onionq_core::request::AggKind::Max, "temperature")
            .expect("max task compiles");
        let a = |acc1: f64, count: u64| CarrierSnapshot { acc1, acc2: 0.0, count };
        // First contribution assigns.
        assert_eq!(confined_contribution(&task, a(0.0, 0), a(4.5, 1)).unwrap(), Some(4.5));
        // A raise shows through.
        assert_eq!(confined_contribution(&task, a(4.5, 1), a(9.0, 2)).unwrap(), Some(9.0));
        // Hidden below the running maximum: no disclosure.
        assert_eq!(confined_contribution(&task, a(9.0, 1), a(9.0, 2)).unwrap(), None);

        let sum = crate::drive::task_for(onionq_core::request::AggKind::Sum, "temperature")
            .expect("sum task compiles");
        assert_eq!(confined_contribution(&sum, a(10.0, 3), a(13.5, 4)).unwrap(), Some(3.5));
    }

    #[test]
    fn owning_the_sink_is_rejected() {
        let trace = truth_trace();
        let owned = BTreeSet::from([0]);
        assert!(matches!(
            internal_findings(&trace, &owned, DeductionPolicy::AlwaysDeduce, None),
            Err(AdversaryError::OwnsSink(0))
        ));
    }
}
