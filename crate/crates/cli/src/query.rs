//! The `query` subcommand: bring up a deployment in-process, issue one
//! request through real onion circuits, and print the merged result.

use std::path::PathBuf;

use anyhow::anyhow;
use onionq_core::node::{
    on_receive, CollectOutcome, Dispatch, IssueConfig, Query, SinkError, SinkSession,
};
use onionq_core::request::dsl::parse_request;
use onionq_core::request::select_targets;
use onionq_sim::seed::derive_rng;

use crate::deploy::{self, Deployment};
use crate::{emit, runtime, usage, CmdError};

#[derive(clap::Args)]
pub struct Args {
    /// Deployment TOML file (nodes, sensors, seed).
    pub deployment: PathBuf,
    /// Request text, e.g. "IF(power=ON) THEN AVG(temperature) @ laboratory".
    #[arg(long)]
    pub request: String,
    /// Path length n: how many nodes each query visits.
    #[arg(long, default_value_t = 8)]
    pub n: usize,
    /// Start carriers from zero instead of masked random offsets.
    #[arg(long)]
    pub no_mask: bool,
    /// Print one line per issued query while collecting.
    #[arg(long)]
    pub verbose: bool,
}

pub fn run(args: Args) -> Result<(), CmdError> {
    let request = parse_request(&args.request).map_err(usage)?;
    let net = deploy::load(&args.deployment).map_err(CmdError::Usage)?;

    let targets = select_targets(&net.registry, &request).map_err(runtime)?;
    emit(&format!("request: {}\n", args.request.trim()));
    emit(&format!(
        "nodes: {} registered, {} matching targets\n",
        net.registry.len(),
        targets.len()
    ));

    let config = IssueConfig { n: args.n, mitigation: !args.no_mask, ..IssueConfig::default() };
    let mut session = SinkSession::new(net.sink_address, net.sink_keypair.clone(), config);
    let mut rng = derive_rng(net.seed, &["query-session"], &[args.n as u64]);
    let dispatches = session.issue(&net.registry, &args.request, 0.0, &mut rng).map_err(|e| {
        match e {
            SinkError::Dsl(e) => usage(e),
            other => runtime(other),
        }
    })?;

    let total = dispatches.len();
    emit(&format!(
        "queries issued: {} (path length n={}, up to {} target slots per query)\n",
        total,
        args.n,
        args.n / 2
    ));

    let mut outcome = None;
    for (i, dispatch) in dispatches.into_iter().enumerate() {
        let returned = walk(&net, dispatch, args.n, &mut rng)?;
        let collected = session.collect(&returned).map_err(runtime)?;
        if args.verbose {
            match &collected {
                CollectOutcome::Partial { received, expected } => {
                    emit(&format!("query {}/{total}: returned ({received}/{expected})\n", i + 1))
                }
                CollectOutcome::Complete { .. } => {
                    emit(&format!("query {}/{total}: returned ({total}/{total})\n", i + 1))
                }
            }
        }
        outcome = Some(collected);
    }

    match outcome {
        Some(CollectOutcome::Complete { result, contributors }) => {
            emit(&format!("result: {result:?}\ncontributors: {contributors}\n"));
            Ok(())
        }
        other => Err(runtime(anyhow!("not every query returned: last outcome {other:?}"))),
    }
}

/// Carry one dispatched query around its circuit until a node hands it
/// back to the sink.
fn walk(
    net: &Deployment,
    dispatch: Dispatch,
    n: usize,
    rng: &mut impl rand::RngCore,
) -> Result<Query, CmdError> {
    let mut at = dispatch.first_hop;
    let mut query = dispatch.query;
    for _ in 0..n + 2 {
        if at == net.sink_address {
            return Ok(query);
        }
        let node = net
            .nodes
            .get(&at)
            .ok_or_else(|| runtime(anyhow!("query was forwarded to unknown address {at}")))?;
        let (action, _report) =
            on_receive(node, &query, rng).map_err(|e| runtime(anyhow!("node {at}: {e}")))?;
        at = action.next_hop;
        query = action.query;
    }
    Err(runtime(anyhow!("query did not return to the sink within {} hops", n + 2)))
}
