//! The `adversary` subcommand: replay the colluding-insider or passive
//! eavesdropper analysis over a recorded trace, write the findings as
//! JSON Lines, and score them against the trace's ground truth.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use onionq_sim::adversary::{
    external_view, findings_to_jsonl, internal_findings, known_initial_for,
    residence_classifier, verify_findings, Claim, DeductionPolicy, Finding,
};
use onionq_sim::link::LinkModel;
use onionq_sim::topology::NodeId;
use onionq_sim::trace::Trace;

use crate::{emit, runtime, usage, CmdError};

#[derive(Copy, Clone, PartialEq, Eq, clap::ValueEnum)]
pub enum Policy {
    /// Deduce from every digest difference, even under interleaving.
    Always,
    /// Mark digest-difference deductions as suspected when other
    /// traffic was interleaved between the observations.
    MixingAware,
}

#[derive(clap::Args)]
pub struct Args {
    /// Recorded trace (JSON Lines, as written by `simulate --trace`).
    pub trace: PathBuf,
    /// Compromised node ids for the insider analysis, e.g. --owned 3,17,42.
    #[arg(long, value_delimiter = ',', value_name = "ID")]
    pub owned: Vec<NodeId>,
    #[arg(long, value_enum, default_value_t = Policy::MixingAware)]
    pub policy: Policy,
    /// Run the passive external eavesdropper instead of insiders.
    #[arg(long)]
    pub external: bool,
    /// Radio data rate the eavesdropper's timing model assumes.
    #[arg(long, default_value_t = 12_000_000.0, value_name = "BPS")]
    pub data_rate_bps: f64,
    /// Fixed per-hop latency the timing model assumes.
    #[arg(long, default_value_t = 5e-4, value_name = "SECONDS")]
    pub hop_latency_s: f64,
    /// Write findings here instead of stdout.
    #[arg(long, value_name = "PATH")]
    pub findings: Option<PathBuf>,
}

pub fn run(args: Args) -> Result<(), CmdError> {
    let text = fs::read_to_string(&args.trace)
        .with_context(|| format!("cannot read trace {}", args.trace.display()))
        .map_err(CmdError::Usage)?;
    let trace = Trace::from_jsonl(&text).map_err(usage)?;
    eprintln!(
        "trace: {} events, {} queries, sink {}",
        trace.events.len(),
        trace.queries.len(),
        trace.sink
    );

    let findings = if args.external {
        analyze_external(&args, &trace)?
    } else {
        analyze_internal(&args, &trace)?
    };

    let owned: BTreeSet<NodeId> = if args.external {
        BTreeSet::new()
    } else {
        args.owned.iter().copied().collect()
    };
    verify_findings(&trace, &owned, &findings)
        .map_err(|why| runtime(anyhow!("finding contradicts ground truth: {why}")))?;
    eprintln!("ground truth: all {} findings verified", findings.len());

    write_findings(args.findings.as_deref(), &findings)
}

fn analyze_internal(args: &Args, trace: &Trace) -> Result<Vec<Finding>, CmdError> {
    let owned: BTreeSet<NodeId> = args.owned.iter().copied().collect();
    let policy = match args.policy {
        Policy::Always => DeductionPolicy::AlwaysDeduce,
        Policy::MixingAware => DeductionPolicy::MixingAware,
    };
    let findings =
        internal_findings(trace, &owned, policy, known_initial_for(trace)).map_err(usage)?;
    eprintln!(
        "insiders: {} owned nodes, policy {}",
        owned.len(),
        match args.policy {
            Policy::Always => "always",
            Policy::MixingAware => "mixing-aware",
        }
    );
    eprintln!("findings: {}", claim_counts(&findings));
    Ok(findings)
}

fn analyze_external(args: &Args, trace: &Trace) -> Result<Vec<Finding>, CmdError> {
    let link = LinkModel {
        data_rate_bps: args.data_rate_bps,
        hop_latency_s: args.hop_latency_s,
        ..LinkModel::default()
    };
    link.validate().map_err(usage)?;
    let report = external_view(trace, &link);
    eprintln!("eavesdropper: {} node visits reconstructed", report.visits.len());
    eprintln!("findings: {}", claim_counts(&report.findings));
    match residence_classifier(trace, &report.visits) {
        Some(score) => eprintln!(
            "residence classifier: accuracy {:.3} over {} visits",
            score.accuracy, score.visits
        ),
        None => eprintln!("residence classifier: not scorable on this trace"),
    }
    Ok(report.findings)
}

fn claim_counts(findings: &[Finding]) -> String {
    let count = |claim: Claim| findings.iter().filter(|f| f.claim == claim).count();
    format!(
        "{} total (is_decoy {}, is_target {}, quantity_disclosed {}, reading_disclosed {}, processed_query {}, size_anomaly {})",
        findings.len(),
        count(Claim::IsDecoy),
        count(Claim::IsTarget),
        count(Claim::QuantityDisclosed),
        count(Claim::ReadingDisclosed),
        count(Claim::ProcessedQuery),
        count(Claim::SizeAnomaly),
    )
}

fn write_findings(path: Option<&Path>, findings: &[Finding]) -> Result<(), CmdError> {
    let jsonl = findings_to_jsonl(findings);
    match path {
        Some(path) => fs::write(path, jsonl)
            .with_context(|| format!("cannot write {}", path.display()))
            .map_err(CmdError::Runtime),
        None => {
            emit(&jsonl);
            Ok(())
        }
    }
}
