//! The per-node protocol state machines: sensor-node query processing and the
//! sink's issue / collect / reissue session.
//!
//! A sensor node receiving a query peels one head layer, which tells it only
//! the next hop — and, when the node is a target, a key pair for the body.
//! Targets decrypt the body, run the task against their local sensors, fold
//! the result into the carrier, and re-encrypt the body under the handoff
//! key; decoys touch nothing. Both then pad the head back to full size and
//! forward, so the two roles are outwardly indistinguishable: same sizes,
//! same delay distribution, and (for a fixed random stream) byte-identical
//! behavior except inside the body ciphertext.
//!
//! The sink plans queries for a request, issues them with recovery rules
//! recorded per query id, collects the ones that loop back, and merges their
//! carriers into the final answer once all are in. Queries that miss their
//! deadline can be reissued over the same remaining targets with a fresh path
//! and fresh keys; the retired id is rejected if it ever shows up late.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, RngCore};

use crate::envelope::{KeyPair, SymKey};
use crate::onion::{
    self, build_body, build_head, open_body, peel, repad_head, OnionError, PeelResult, QueryBody,
    QueryHead, DEFAULT_MAX_TASK_LEN,
};
use crate::registry::{Address, Registry};
use crate::request::{
    compile_task, initial_carrier, merge_carriers, parse_request, plan_queries,
    query_path_selection, select_targets, AggError, DslError, PlanError, QueryDefinition,
    RecoveryRules,
};
use crate::vm::{self, CarrierString, ExecStatus, MapEnvironment, TaskError};

/// A query in flight: the onion head and the encrypted body.
#[derive(Clone, Debug)]
pub struct Query {
    pub head: QueryHead,
    pub body: QueryBody,
}

/// Per-node protocol parameters.
#[derive(Clone, Copy, Debug)]
pub struct NodeParams {
    /// Task instruction budget (the Δ_t bound, in VM steps).
    pub step_budget: u64,
    /// Base processing window Δ_q, in seconds.
    pub delta_q_s: f64,
    /// Upper bound of the random extra-wait factor r.
    pub r_max: f64,
    /// When true, every node holds a query for Δ_q·(1+r); when false (the
    /// faithful network-experiment mode) only actual task time is charged.
    pub delays_enabled: bool,
    /// Modeled task execution time per VM step, in seconds.
    pub step_cost_s: f64,
}

impl Default for NodeParams {
    fn default() -> Self {
        NodeParams {
            step_budget: vm::DEFAULT_STEP_BUDGET,
            delta_q_s: 0.050,
            r_max: 4.0,
            delays_enabled: true,
            step_cost_s: 1e-6,
        }
    }
}

impl NodeParams {
    /// The protocol requires the task bound to fit inside the processing
    /// window (Δ_t < Δ_q), otherwise task time would leak past the hold.
    pub fn validate(&self) -> Result<(), String> {
        let task_time = self.step_budget as f64 * self.step_cost_s;
        if self.delays_enabled && task_time >= self.delta_q_s {
            return Err(format!(
                "task budget ({} steps × {}s) must stay below the {}s processing window",
                self.step_budget, self.step_cost_s, self.delta_q_s
            ));
        }
        if self.delta_q_s < 0.0 || self.r_max < 0.0 || self.step_cost_s < 0.0 {
            return Err("timing parameters must be non-negative".to_string());
        }
        Ok(())
    }
}

/// One sensor node's identity, keys, sensors, and parameters.
#[derive(Clone)]
pub struct NodeState {
    pub address: Address,
    pub keypair: KeyPair,
    pub env: MapEnvironment,
    pub params: NodeParams,
}

/// What a node does after processing: forward the query, after a delay.
#[derive(Clone, Debug)]
pub struct ForwardAction {
    pub next_hop: Address,
    pub query: Query,
    /// Seconds to hold the query before sending.
    pub delay: f64,
}

/// Which role the peeled layer assigned this node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Decoy,
    Target,
}

/// Diagnostic record of one processing step, for traces and ground truth.
/// Everything here is node-private knowledge; the forward action alone is
/// what the network observes.
#[derive(Clone, Debug)]
pub struct ProcessingReport {
    pub role: Role,
    /// Task outcome at a target; decoys run nothing.
    pub status: Option<ExecStatus>,
    pub steps: u64,
    pub carrier_in: Option<CarrierString>,
    pub carrier_out: Option<CarrierString>,
}

/// Node-level processing failures; all mean "drop the query".
#[derive(Debug, thiserror::Error)]
pub enum NodeError {
    #[error("query head is not addressed to this node")]
    NotAddressed,
    #[error("terminal layer surfaced at a sensor node; the head was mis-built")]
    UnexpectedTerminal,
    #[error("target could not authenticate the query body: {0}")]
    Body(OnionError),
    #[error(transparent)]
    Onion(#[from] OnionError),
}

/// Process one received query at a sensor node.
///
/// The random stream is consumed in a fixed order — hold factor (when delays
/// are on), then head repadding, then the body nonce (targets only, and last)
/// — so that with a fixed stream a decoy and a target act identically in
/// everything but the body bytes.
pub fn on_receive(
    state: &NodeState,
    query: &Query,
    rng: &mut impl RngCore,
) -> Result<(ForwardAction, ProcessingReport), NodeError> {
    let (next_hop, keys, inner) = match peel(&query.head, &state.keypair) {
        Ok(PeelResult::Forward { next_hop, keys, inner }) => (next_hop, keys, inner),
        Ok(PeelResult::Terminal { .. }) => return Err(NodeError::UnexpectedTerminal),
        Err(OnionError::NotAddressed) => return Err(NodeError::NotAddressed),
        Err(e) => return Err(e.into()),
    };

    let hold_factor = if state.params.delays_enabled { rng.gen::<f64>() } else { 0.0 };
    let head = repad_head(rng, &inner, query.head.len())?;

    let (body, report) = match keys {
        None => (
            query.body.clone(),
            ProcessingReport {
                role: Role::Decoy,
                status: None,
                steps: 0,
                carrier_in: None,
                carrier_out: None,
            },
        ),
        Some((open_key, handoff_key)) => {
            let mut content = open_body(&open_key, &query.body).map_err(NodeError::Body)?;
            let carrier_in = CarrierString::from_bytes(&content.carrier);
            let outcome =
                vm::execute(&content.task, &carrier_in, &state.env, state.params.step_budget);
            content.carrier = outcome.carrier.to_bytes();
            let body = onion::reencrypt_body(rng, &content, &handoff_key)?;
            (
                body,
                ProcessingReport {
                    role: Role::Target,
                    status: Some(outcome.status),
                    steps: outcome.steps,
                    carrier_in: Some(carrier_in),
                    carrier_out: Some(outcome.carrier),
                },
            )
        }
    };

    let delay = if state.params.delays_enabled {
        state.params.delta_q_s * (1.0 + hold_factor * state.params.r_max)
    } else {
        report.steps as f64 * state.params.step_cost_s
    };

    Ok((ForwardAction { next_hop, query: Query { head, body }, delay }, report))
}

/// Sizing and behavior knobs for issuing queries.
#[derive(Clone, Copy, Debug)]
pub struct IssueConfig {
    /// Path length n (nodes per query).
    pub n: usize,
    /// Fixed head size; `None` sizes heads minimally for n.
    pub head_size: Option<usize>,
    /// Task capacity L_t of every body.
    pub task_capacity: usize,
    /// Mask initial carriers with sink-secret offsets.
    pub mitigation: bool,
}

impl Default for IssueConfig {
    fn default() -> Self {
        IssueConfig {
            n: 8,
            head_size: None,
            task_capacity: DEFAULT_MAX_TASK_LEN,
            mitigation: true,
        }
    }
}

/// A query ready to send: its first hop and its id (for bookkeeping).
#[derive(Clone, Debug)]
pub struct Dispatch {
    pub first_hop: Address,
    pub query: Query,
    pub query_id: SymKey,
}

/// What the sink still knows about an outstanding query.
#[derive(Clone, Debug)]
pub struct PendingQuery {
    pub definition: QueryDefinition,
    pub issued_at: f64,
    pub initial: CarrierString,
}

/// The sink's progress after accepting one returned query.
#[derive(Clone, Debug, PartialEq)]
pub enum CollectOutcome {
    /// Accepted; more queries are still out.
    Partial { received: usize, expected: usize },
    /// Everything is back: the finalized answer and how many nodes fed it.
    Complete { result: f64, contributors: u64 },
}

/// Sink-side failures.
#[derive(Debug, thiserror::Error)]
pub enum SinkError {
    #[error("session has already issued its queries")]
    AlreadyIssued,
    #[error("session has not issued anything yet")]
    NothingIssued,
    #[error("returned head is not addressed to this sink")]
    NotAddressed,
    #[error("returned head does not end in a terminal layer")]
    NotAReturn,
    #[error("query id is not one this session issued")]
    UnknownQuery,
    #[error("query id was already collected")]
    DuplicateQuery,
    #[error("query id was retired by a reissue")]
    RetiredQuery,
    #[error("query id is not pending")]
    NotPending,
    #[error(transparent)]
    Dsl(#[from] DslError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Onion(#[from] OnionError),
    #[error(transparent)]
    Agg(#[from] AggError),
}

/// One request's lifecycle at the sink: plan, issue, collect, merge.
pub struct SinkSession {
    pub address: Address,
    keypair: KeyPair,
    config: IssueConfig,
    task: Vec<u8>,
    rules: Option<RecoveryRules>,
    universe: Vec<Address>,
    pending: BTreeMap<SymKey, PendingQuery>,
    collected: BTreeMap<SymKey, (CarrierString, CarrierString)>,
    retired: BTreeSet<SymKey>,
}

impl SinkSession {
    pub fn new(address: Address, keypair: KeyPair, config: IssueConfig) -> Self {
        SinkSession {
            address,
            keypair,
            config,
            task: Vec::new(),
            rules: None,
            universe: Vec::new(),
            pending: BTreeMap::new(),
            collected: BTreeMap::new(),
            retired: BTreeSet::new(),
        }
    }

    /// Parse a request, select targets, plan paths, and build the queries.
    /// Queries come back in planning order; all are recorded as pending.
    pub fn issue(
        &mut self,
        registry: &Registry,
        request_text: &str,
        now: f64,
        rng: &mut impl RngCore,
    ) -> Result<Vec<Dispatch>, SinkError> {
        if self.rules.is_some() {
            return Err(SinkError::AlreadyIssued);
        }
        let request = parse_request(request_text)?;
        let targets = select_targets(registry, &request)?;
        // The sink never walks its own paths.
        let universe: Vec<Address> =
            registry.addresses().into_iter().filter(|a| *a != self.address).collect();
        let task = compile_task(&request)?;

        let (definitions, rules) = plan_queries(
            &universe,
            targets,
            self.config.n,
            request.aggregation.kind,
            self.config.mitigation,
            rng,
        )?;

        let mut dispatches = Vec::with_capacity(definitions.len());
        for definition in definitions {
            let initial = rules.expected[&definition.final_key];
            let dispatch = self.build_query(registry, &definition, initial, &task, rng)?;
            self.pending.insert(
                definition.final_key,
                PendingQuery { definition, issued_at: now, initial },
            );
            dispatches.push(dispatch);
        }
        self.task = task;
        self.rules = Some(rules);
        self.universe = universe;
        Ok(dispatches)
    }

    fn build_query(
        &self,
        registry: &Registry,
        definition: &QueryDefinition,
        initial: CarrierString,
        task: &[u8],
        rng: &mut impl RngCore,
    ) -> Result<Dispatch, SinkError> {
        let plans = definition.to_layer_plans(registry)?;
        let head_size = match self.config.head_size {
            Some(size) => size,
            None => onion::head_size_for(definition.n())?,
        };
        let head = build_head(
            rng,
            &plans,
            self.address,
            &self.keypair.public(),
            &definition.final_key,
            head_size,
        )?;
        let body = build_body(
            rng,
            task,
            &initial.to_bytes(),
            &definition.entry_key,
            self.config.task_capacity,
        )?;
        Ok(Dispatch {
            first_hop: definition.nodes[0],
            query: Query { head, body },
            query_id: definition.final_key,
        })
    }

    /// Accept a query that came back around the circuit. Unknown, duplicate,
    /// and retired ids are rejected without touching session state.
    pub fn collect(&mut self, query: &Query) -> Result<CollectOutcome, SinkError> {
        let rules = self.rules.as_ref().ok_or(SinkError::NothingIssued)?;
        let query_id = match peel(&query.head, &self.keypair) {
            Ok(PeelResult::Terminal { query_id }) => query_id,
            Ok(PeelResult::Forward { .. }) => return Err(SinkError::NotAReturn),
            Err(OnionError::NotAddressed) => return Err(SinkError::NotAddressed),
            Err(e) => return Err(e.into()),
        };

        if self.retired.contains(&query_id) {
            return Err(SinkError::RetiredQuery);
        }
        if self.collected.contains_key(&query_id) {
            return Err(SinkError::DuplicateQuery);
        }
        let Some(pending) = self.pending.get(&query_id) else {
            return Err(SinkError::UnknownQuery);
        };

        // The body's final encryption key is the query id itself.
        let content = open_body(&query_id, &query.body)?;
        let carrier = CarrierString::from_bytes(&content.carrier);
        let initial = pending.initial;
        self.pending.remove(&query_id);
        self.collected.insert(query_id, (initial, carrier));

        let expected = rules.expected_count();
        if self.collected.len() < expected {
            return Ok(CollectOutcome::Partial { received: self.collected.len(), expected });
        }
        let pairs: Vec<(CarrierString, CarrierString)> =
            self.collected.values().copied().collect();
        let net = merge_carriers(rules.merge_op, &pairs);
        let result = crate::request::finalize(rules.merge_op, &net)?;
        Ok(CollectOutcome::Complete { result, contributors: net.count })
    }

    /// Query ids pending longer than `deadline` seconds as of `now`.
    pub fn overdue(&self, now: f64, deadline: f64) -> Vec<SymKey> {
        self.pending
            .iter()
            .filter(|(_, p)| now - p.issued_at > deadline)
            .map(|(id, _)| *id)
            .collect()
    }

    /// Retire a lost query and issue a replacement covering the same targets
    /// over a fresh path with fresh keys.
    pub fn abort_and_reissue(
        &mut self,
        registry: &Registry,
        query_id: &SymKey,
        now: f64,
        rng: &mut impl RngCore,
    ) -> Result<Dispatch, SinkError> {
        let rules = self.rules.as_mut().ok_or(SinkError::NothingIssued)?;
        let Some(lost) = self.pending.remove(query_id) else {
            return Err(SinkError::NotPending);
        };
        self.retired.insert(*query_id);

        let mut targets = lost.definition.target_addresses();
        let definition = query_path_selection(&self.universe, &mut targets, self.config.n, rng)?;
        debug_assert!(targets.is_empty(), "one query must cover the reissued targets");

        let initial = initial_carrier(rules.merge_op, self.config.mitigation, rng);
        rules.replace_id(query_id, definition.final_key, initial);
        let task = self.task.clone();
        let dispatch = self.build_query(registry, &definition, initial, &task, rng)?;
        self.pending.insert(
            definition.final_key,
            PendingQuery { definition, issued_at: now, initial },
        );
        Ok(dispatch)
    }

    pub fn pending(&self) -> &BTreeMap<SymKey, PendingQuery> {
        &self.pending
    }

    pub fn rules(&self) -> Option<&RecoveryRules> {
        self.rules.as_ref()
    }

    pub fn public_key(&self) -> crate::envelope::PublicKey {
        self.keypair.public()
    }
}
