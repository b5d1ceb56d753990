//! Per-query travel-time records and aggregate summaries.
//!
//! One [`QttrRecord`] is produced per issued query: the query travel
//! time (issue at the sink until the result returns to the sink), the
//! total number of radio hops, and whether the query aborted on a dead
//! hop. Records flatten to CSV with a fixed column set, and summarize
//! into per-cell quartile statistics keyed by topology, network size and
//! path length.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::stats::{mean, quantile_type7, sample_std};
use crate::topology::TopologyKind;

/// Travel-time record for one query.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QttrRecord {
    pub topology: TopologyKind,
    /// Network size (node count, sink included).
    pub s: usize,
    /// Query path length n.
    pub n: usize,
    /// Repetition index (independent seeded run of the same cell).
    #[serde(skip)]
    pub run: usize,
    /// Query number, unique within its (topology, s, n) cell.
    pub query_id: usize,
    /// Seconds from issue until the result reached the sink; absent iff
    /// the query aborted.
    pub qttr_s: Option<f64>,
    pub aborted: bool,
    /// Radio hops travelled (including the aborted hop, if any).
    pub hops_total: usize,
}

/// Render records as CSV with a stable header:
/// `topology,s,n,query_id,qttr_s,aborted,hops_total`.
pub fn records_to_csv(records: &[QttrRecord]) -> String {
    let mut out = String::from("topology,s,n,query_id,qttr_s,aborted,hops_total\n");
    for r in records {
        let qttr = r.qttr_s.map(|v| v.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.topology, r.s, r.n, r.query_id, qttr, r.aborted, r.hops_total
        ));
    }
    out
}

/// Aggregate statistics for one (topology, s, n) cell, pooled over runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub topology: TopologyKind,
    pub s: usize,
    pub n: usize,
    /// Number of queries issued in this cell.
    pub queries: usize,
    /// How many of them aborted.
    pub aborted: usize,
    /// Quartiles and moments of the completed queries' travel times;
    /// absent when every query aborted.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub qttr_median_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub qttr_q25_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub qttr_q75_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub qttr_mean_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub qttr_std_s: Option<f64>,
    /// Median hop count over all queries in the cell.
    pub hops_median: f64,
}

/// Group records by (topology, s, n) and summarize each cell.
pub fn summarize(records: &[QttrRecord]) -> Vec<SummaryRow> {
    let mut cells: BTreeMap<(TopologyKind, usize, usize), Vec<&QttrRecord>> = BTreeMap::new();
    for r in records {
        cells.entry((r.topology, r.s, r.n)).or_default().push(r);
    }
    cells
        .into_iter()
        .map(|((topology, s, n), rs)| {
            let mut times: Vec<f64> = rs.iter().filter_map(|r| r.qttr_s).collect();
            times.sort_by(f64::total_cmp);
            let mut hops: Vec<f64> = rs.iter().map(|r| r.hops_total as f64).collect();
            hops.sort_by(f64::total_cmp);
            let stats = if times.is_empty() {
                (None, None, None, None, None)
            } else {
                (
                    Some(quantile_type7(&times, 0.5)),
                    Some(quantile_type7(&times, 0.25)),
                    Some(quantile_type7(&times, 0.75)),
                    Some(mean(&times)),
                    Some(sample_std(&times)),
                )
            };
            SummaryRow {
                topology,
                s,
                n,
                queries: rs.len(),
                aborted: rs.iter().filter(|r| r.aborted).count(),
                qttr_median_s: stats.0,
                qttr_q25_s: stats.1,
                qttr_q75_s: stats.2,
                qttr_mean_s: stats.3,
                qttr_std_s: stats.4,
                hops_median: quantile_type7(&hops, 0.5),
            }
        })
        .collect()
}

/// Median travel time of each run in one (topology, s, n) cell, ordered
/// by run index. Aborted queries are excluded; runs where every query
/// aborted are skipped.
pub fn per_run_medians(
    records: &[QttrRecord],
    topology: TopologyKind,
    s: usize,
    n: usize,
) -> Vec<f64> {
    let mut runs: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for r in records {
        if r.topology == topology && r.s == s && r.n == n {
            if let Some(t) = r.qttr_s {
                runs.entry(r.run).or_default().push(t);
            }
        }
    }
    runs.into_values()
        .map(|mut times| {
            times.sort_by(f64::total_cmp);
            quantile_type7(&times, 0.5)
        })
        .collect()
}
