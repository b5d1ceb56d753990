//! The `simulate` subcommand: load a config, apply overrides, run the
//! campaign, write CSV/JSON/trace outputs, print a summary table.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use onionq_sim::config::SimConfig;
use onionq_sim::engine::{run_experiment, EngineError};
use onionq_sim::metrics::{records_to_csv, summarize, SummaryRow};

use crate::{emit, runtime, usage, CmdError};

#[derive(clap::Args)]
pub struct Args {
    /// TOML config file (see the bundled presets/ directory).
    pub config: PathBuf,
    /// Override one config key, e.g. --set seed=7 --set sizes=50,100.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Write per-query records as CSV ("-" for stdout).
    #[arg(long, value_name = "PATH")]
    pub csv: Option<PathBuf>,
    /// Write per-cell summary rows as JSON ("-" for stdout).
    #[arg(long, value_name = "PATH")]
    pub summary_json: Option<PathBuf>,
    /// Record the full event trace as JSON Lines (needs exactly one
    /// network size in the config).
    #[arg(long, value_name = "PATH")]
    pub trace: Option<PathBuf>,
    /// Suppress the summary table.
    #[arg(long)]
    pub quiet: bool,
}

pub fn run(args: Args) -> Result<(), CmdError> {
    let text = fs::read_to_string(&args.config)
        .with_context(|| format!("cannot read config {}", args.config.display()))
        .map_err(CmdError::Usage)?;
    let mut config = SimConfig::from_toml(&text).map_err(usage)?;
    for pair in &args.set {
        let (key, value) = pair
            .split_once('=')
            .ok_or_else(|| usage(anyhow!("--set expects KEY=VALUE, got {pair:?}")))?;
        config.set(key, value).map_err(usage)?;
    }
    config.validate().map_err(usage)?;

    let out = run_experiment(&config, args.trace.is_some()).map_err(|e| match e {
        // Config-shaped mistakes are the caller's; everything else is ours.
        EngineError::Config(c) => usage(c),
        e @ EngineError::TraceNeedsSingleSize(_) => usage(e),
        other => runtime(other),
    })?;

    if let Some(path) = &args.csv {
        write_out(path, &records_to_csv(&out.records))?;
    }
    let summary = summarize(&out.records);
    if let Some(path) = &args.summary_json {
        let mut json =
            serde_json::to_string_pretty(&summary).expect("summary rows serialize");
        json.push('\n');
        write_out(path, &json)?;
    }
    if let Some(path) = &args.trace {
        let trace = out.trace.as_ref().expect("engine recorded a trace on request");
        write_out(path, &trace.to_jsonl())?;
    }
    if !args.quiet {
        emit(&render_table(&summary));
    }
    Ok(())
}

/// Write to a file, or to stdout when the path is `-`.
fn write_out(path: &Path, content: &str) -> Result<(), CmdError> {
    if path == Path::new("-") {
        emit(content);
        Ok(())
    } else {
        fs::write(path, content)
            .with_context(|| format!("cannot write {}", path.display()))
            .map_err(CmdError::Runtime)
    }
}

/// Fixed-width per-cell summary. `-` marks cells where every query
/// aborted and no travel time exists.
fn render_table(rows: &[SummaryRow]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<8} {:>5} {:>4} {:>7} {:>7} {:>13} {:>13} {:>13} {:>11}\n",
        "topology", "s", "n", "queries", "aborted", "qttr_median_s", "qttr_q25_s", "qttr_q75_s", "hops_median"
    ));
    for row in rows {
        let fmt = |v: Option<f64>| match v {
            Some(v) => format!("{v:.6}"),
            None => "-".to_string(),
        };
        out.push_str(&format!(
            "{:<8} {:>5} {:>4} {:>7} {:>7} {:>13} {:>13} {:>13} {:>11.1}\n",
            row.topology.to_string(),
            row.s,
            row.n,
            row.queries,
            row.aborted,
            fmt(row.qttr_median_s),
            fmt(row.qttr_q25_s),
            fmt(row.qttr_q75_s),
            row.hops_median,
        ));
    }
    out
}
