//! Deployment files: a TOML description of live nodes that the `query`
//! subcommand brings up in-process.
//!
//! Each node lists its address index, location, sensor readings, and
//! on/off statuses. Keypairs are derived from the file's seed, so a
//! deployment file fully determines the circuits and the output.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use anyhow::{anyhow, bail, Context};
use onionq_core::envelope::KeyPair;
use onionq_core::node::{NodeParams, NodeState};
use onionq_core::vm::MapEnvironment;
use onionq_core::{Address, Registry, RegistryEntry};
use onionq_sim::seed::derive_rng;
use serde::Deserialize;

/// The sink's address index: the top of the index space, far away from
/// any plausible node address.
const SINK_INDEX: u32 = 0x00FF_FFFF;

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DeploymentFile {
    #[serde(default)]
    seed: u64,
    #[serde(rename = "node", default)]
    nodes: Vec<NodeSpec>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeSpec {
    /// Address index; the wire address is derived from it.
    address: u32,
    location: String,
    /// Quantity → current reading.
    #[serde(default)]
    sensors: BTreeMap<String, f64>,
    /// Status → on/off.
    #[serde(default)]
    status: BTreeMap<String, bool>,
}

/// A deployment brought to life: directory, live nodes, sink identity.
pub struct Deployment {
    pub registry: Registry,
    pub nodes: BTreeMap<Address, NodeState>,
    pub sink_address: Address,
    pub sink_keypair: KeyPair,
    pub seed: u64,
}

pub fn load(path: &Path) -> anyhow::Result<Deployment> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read deployment {}", path.display()))?;
    let file: DeploymentFile = toml::from_str(&text)
        .with_context(|| format!("invalid deployment {}", path.display()))?;
    build(file)
}

fn build(file: DeploymentFile) -> anyhow::Result<Deployment> {
    if file.nodes.is_empty() {
        bail!("deployment lists no nodes");
    }
    let mut registry = Registry::default();
    let mut nodes = BTreeMap::new();
    // Query nodes never hold queries for cover delays here: the walk is
    // logical (no radio clock), so delay draws would only slow it down.
    let params = NodeParams { delays_enabled: false, ..NodeParams::default() };

    for spec in &file.nodes {
        if spec.address >= SINK_INDEX {
            bail!("node address {} is out of range (max {})", spec.address, SINK_INDEX - 1);
        }
        if spec.sensors.is_empty() && spec.status.is_empty() {
            bail!("node {} senses nothing; give it at least one sensor or status", spec.address);
        }
        let address = Address::from_index(spec.address);
        let mut rng = derive_rng(file.seed, &["deployment-node-key"], &[u64::from(spec.address)]);
        let keypair = onionq_core::envelope::generate_keypair(&mut rng);

        let mut env = MapEnvironment::default();
        let mut quantities = BTreeSet::new();
        for (quantity, reading) in &spec.sensors {
            env.sensors.insert(quantity.clone(), *reading);
            quantities.insert(quantity.clone());
        }
        for (status, on) in &spec.status {
            env.status.insert(status.clone(), if *on { 1.0 } else { 0.0 });
            quantities.insert(status.clone());
        }

        registry
            .insert(RegistryEntry {
                address,
                public_key: Some(keypair.public()),
                location: spec.location.clone(),
                quantities,
            })
            .map_err(|e| anyhow!("node {}: {e}", spec.address))?;
        nodes.insert(address, NodeState { address, keypair, env, params });
    }

    let mut sink_rng = derive_rng(file.seed, &["deployment-sink-key"], &[]);
    Ok(Deployment {
        registry,
        nodes,
        sink_address: Address::from_index(SINK_INDEX),
        sink_keypair: onionq_core::envelope::generate_keypair(&mut sink_rng),
        seed: file.seed,
    })
}
