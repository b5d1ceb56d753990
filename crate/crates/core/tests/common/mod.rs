//! Shared fixtures for the integration tests: random registries with live
//! keypairs, sensor nodes built from them, and a walker that carries a
//! dispatched query around its circuit and back to the sink.
#![allow(dead_code)]

use std::collections::BTreeMap;

use onionq_core::envelope::{generate_keypair, KeyPair};
use onionq_core::node::{on_receive, Dispatch, NodeState, Query};
use onionq_core::vm::MapEnvironment;
use onionq_core::{Address, Registry, RegistryEntry};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

pub const SENSORS: [&str; 3] = ["temperature", "humidity", "pressure"];
pub const STATUSES: [&str; 2] = ["power", "light"];
pub const LOCATIONS: [&str; 4] = ["laboratory", "hall", "roof", "cellar"];

pub fn rng_from(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// A registry plus the matching live nodes, and a sink identity that is
/// deliberately not a registry entry.
pub struct TestNet {
    pub registry: Registry,
    pub nodes: BTreeMap<Address, NodeState>,
    pub sink_address: Address,
    pub sink_keypair: KeyPair,
}

/// Build `count` nodes with random locations, random status sensors, and
/// readings uniform in [0, 100). Every node senses all of [`SENSORS`]; each
/// status in [`STATUSES`] is present with probability one half and reads a
/// random on/off value. Registry quantities mirror the node environments.
pub fn random_net(rng: &mut ChaCha20Rng, count: u32) -> TestNet {
    let mut registry = Registry::default();
    let mut nodes = BTreeMap::new();
    for i in 0..count {
        let address = Address::from_index(i);
        let keypair = generate_keypair(rng);
        let location = LOCATIONS[rng.gen_range(0..LOCATIONS.len())].to_string();
        let mut env = MapEnvironment::default();
        let mut quantities = std::collections::BTreeSet::new();
        for s in SENSORS {
            env.sensors.insert(s.to_string(), rng.gen_range(0.0..100.0));
            quantities.insert(s.to_string());
        }
        for s in STATUSES {
            if rng.gen_bool(0.5) {
                env.status.insert(s.to_string(), if rng.gen_bool(0.5) { 1.0 } else { 0.0 });
                quantities.insert(s.to_string());
            }
        }
        registry
            .insert(RegistryEntry {
                address,
                public_key: Some(keypair.public()),
                location,
                quantities,
            })
            .expect("addresses are distinct by construction");
        nodes.insert(address, NodeState { address, keypair, env, params: Default::default() });
    }
    TestNet {
        registry,
        nodes,
        sink_address: Address::from_index(0xFFFF),
        sink_keypair: generate_keypair(rng),
    }
}

/// Carry one dispatched query hop by hop until a node forwards it to the
/// sink; returns the query as the sink receives it.
pub fn walk_circuit(
    net: &TestNet,
    dispatch: Dispatch,
    rng: &mut ChaCha20Rng,
    max_hops: usize,
) -> Query {
    let mut at = dispatch.first_hop;
    let mut query = dispatch.query;
    for _ in 0..max_hops {
        if at == net.sink_address {
            return query;
        }
        let node = net.nodes.get(&at).expect("query forwarded to an unknown address");
        let (action, _) = on_receive(node, &query, rng).expect("path node rejected the query");
        at = action.next_hop;
        query = action.query;
    }
    panic!("query did not return to the sink within {max_hops} hops");
}
