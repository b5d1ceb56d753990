//! Simulation configuration: TOML-backed, strictly validated.
//!
//! Unknown keys are rejected rather than ignored, so a typo in a config
//! file fails loudly instead of silently running with defaults.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::link::{LinkError, LinkModel};
use crate::topology::TopologyKind;
use onionq_core::node::NodeParams;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Link(#[from] LinkError),
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("bad value for {key}: {value:?} ({why})")]
    BadValue { key: String, value: String, why: String },
}

/// Full description of one simulation campaign.
///
/// `sizes` × `path_lengths` × `queries_per_length` queries are issued per
/// run; `runs` independent repetitions (distinct derived seeds) of the
/// whole matrix are executed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    /// Field layout: `grid` or `disc`.
    pub topology: TopologyKind,
    /// Network sizes (node counts) to sweep.
    pub sizes: Vec<usize>,
    /// Query path lengths n to sweep.
    pub path_lengths: Vec<usize>,
    /// Queries issued per (size, path length) cell per run.
    pub queries_per_length: usize,
    /// Independent repetitions of the full matrix.
    pub runs: usize,
    /// Master seed; every random stream derives from it.
    pub seed: u64,

    /// Grid lattice spacing in metres.
    pub grid_spacing_m: f64,
    /// Per-node coverage radius in metres; the disc field radius grows as
    /// `coverage_radius_m * sqrt(s)`.
    pub coverage_radius_m: f64,
    /// Radio communication range in metres.
    pub comm_range_m: f64,

    /// Whether path nodes hold queries for randomized delays.
    pub delays_enabled: bool,
    /// Hold quantum Δq in milliseconds.
    pub delta_q_ms: f64,
    /// Maximum random delay multiplier r.
    pub r_max: f64,

    /// Radio data rate in bits per second.
    pub data_rate_bps: f64,
    /// Fixed per-hop latency in seconds.
    pub hop_latency_s: f64,
    /// Cryptographic processing cost per byte, in seconds.
    pub decrypt_cost_s_per_byte: f64,
    /// Per-attempt frame loss probability.
    pub loss_probability: f64,
    /// Initial retransmit timeout in seconds.
    pub rto_s: f64,
    /// Whether lost frames are retransmitted.
    pub retransmit: bool,

    /// Allow a path to revisit a node (required when n exceeds the
    /// number of reachable sensor nodes).
    pub allow_path_reuse: bool,
    /// A single hop exceeding this many seconds aborts the query.
    pub abort_timeout_s: f64,
}

impl Default for SimConfig {
    fn default() -> SimConfig {
        SimConfig {
            topology: TopologyKind::Grid,
            sizes: vec![50, 100, 200, 300, 400],
            path_lengths: vec![5, 10, 20, 30, 40, 60, 80, 100],
            queries_per_length: 40,
            runs: 1,
            seed: 0,
            grid_spacing_m: 60.0,
            coverage_radius_m: 35.0,
            comm_range_m: 90.0,
            delays_enabled: false,
            delta_q_ms: 50.0,
            r_max: 4.0,
            data_rate_bps: 12_000_000.0,
            hop_latency_s: 5e-4,
            decrypt_cost_s_per_byte: 2e-6,
            loss_probability: 0.0,
            rto_s: 0.2,
            retransmit: false,
            allow_path_reuse: true,
            abort_timeout_s: 30.0,
        }
    }
}

impl SimConfig {
    pub fn from_toml(text: &str) -> Result<SimConfig, ConfigError> {
        let config: SimConfig = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        fn bad(msg: impl Into<String>) -> Result<(), ConfigError> {
            Err(ConfigError::Invalid(msg.into()))
        }
        if self.sizes.is_empty() {
            return bad("sizes must list at least one network size");
        }
        if let Some(&s) = self.sizes.iter().find(|&&s| s < 2) {
            return bad(format!("network size {s} is too small: need the sink plus at least one sensor node"));
        }
        if self.path_lengths.is_empty() {
            return bad("path_lengths must list at least one length");
        }
        if let Some(&n) = self.path_lengths.iter().find(|&&n| n < 2) {
            return bad(format!("path length {n} is too short: a query path needs at least 2 nodes"));
        }
        if self.queries_per_length == 0 {
            return bad("queries_per_length must be at least 1");
        }
        if self.runs == 0 {
            return bad("runs must be at least 1");
        }
        if !(self.grid_spacing_m > 0.0) {
            return bad(format!("grid_spacing_m must be positive, got {}", self.grid_spacing_m));
        }
        if !(self.coverage_radius_m > 0.0) {
            return bad(format!("coverage_radius_m must be positive, got {}", self.coverage_radius_m));
        }
        if !(self.comm_range_m > 0.0) {
            return bad(format!("comm_range_m must be positive, got {}", self.comm_range_m));
        }
        if !(self.delta_q_ms > 0.0) {
            return bad(format!("delta_q_ms must be positive, got {}", self.delta_q_ms));
        }
        if !(self.r_max >= 0.0) {
            return bad(format!("r_max must be non-negative, got {}", self.r_max));
        }
        if !(self.decrypt_cost_s_per_byte >= 0.0) {
            return bad(format!(
                "decrypt_cost_s_per_byte must be non-negative, got {}",
                self.decrypt_cost_s_per_byte
            ));
        }
        if !(self.abort_timeout_s > 0.0) {
            return bad(format!("abort_timeout_s must be positive, got {}", self.abort_timeout_s));
        }
        self.link_model().validate()?;
        self.node_params()
            .validate()
            .map_err(ConfigError::Invalid)?;
        Ok(())
    }

    /// The per-hop radio model this config describes.
    pub fn link_model(&self) -> LinkModel {
        LinkModel {
            data_rate_bps: self.data_rate_bps,
            hop_latency_s: self.hop_latency_s,
            loss_probability: self.loss_probability,
            rto_s: self.rto_s,
            retransmit: self.retransmit,
        }
    }

    /// The node-side processing parameters this config describes.
    pub fn node_params(&self) -> NodeParams {
        NodeParams {
            delta_q_s: self.delta_q_ms / 1000.0,
            r_max: self.r_max,
            delays_enabled: self.delays_enabled,
            ..NodeParams::default()
        }
    }

    /// Apply one `key=value` override (the CLI's `--set`).
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
        where
            T::Err: std::fmt::Display,
        {
            value.trim().parse().map_err(|e: T::Err| ConfigError::BadValue {
                key: key.to_string(),
                value: value.to_string(),
                why: e.to_string(),
            })
        }
        fn parse_list(key: &str, value: &str) -> Result<Vec<usize>, ConfigError> {
            value
                .split(',')
                .map(|part| parse::<usize>(key, part))
                .collect()
        }
        match key {
            "topology" => {
                self.topology = match value.trim() {
                    "grid" => TopologyKind::Grid,
                    "disc" => TopologyKind::Disc,
                    other => {
                        return Err(ConfigError::BadValue {
                            key: key.to_string(),
                            value: other.to_string(),
                            why: "expected \"grid\" or \"disc\"".to_string(),
                        })
                    }
                }
            }
            "sizes" => self.sizes = parse_list(key, value)?,
            "path_lengths" => self.path_lengths = parse_list(key, value)?,
            "queries_per_length" => self.queries_per_length = parse(key, value)?,
            "runs" => self.runs = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "grid_spacing_m" => self.grid_spacing_m = parse(key, value)?,
            "coverage_radius_m" => self.coverage_radius_m = parse(key, value)?,
            "comm_range_m" => self.comm_range_m = parse(key, value)?,
            "delays_enabled" => self.delays_enabled = parse(key, value)?,
            "delta_q_ms" => self.delta_q_ms = parse(key, value)?,
            "r_max" => self.r_max = parse(key, value)?,
            "data_rate_bps" => self.data_rate_bps = parse(key, value)?,
            "hop_latency_s" => self.hop_latency_s = parse(key, value)?,
            "decrypt_cost_s_per_byte" => self.decrypt_cost_s_per_byte = parse(key, value)?,
            "loss_probability" => self.loss_probability = parse(key, value)?,
            "rto_s" => self.rto_s = parse(key, value)?,
            "retransmit" => self.retransmit = parse(key, value)?,
            "allow_path_reuse" => self.allow_path_reuse = parse(key, value)?,
            "abort_timeout_s" => self.abort_timeout_s = parse(key, value)?,
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
        Ok(())
    }
}
