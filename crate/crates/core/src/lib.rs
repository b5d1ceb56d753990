//! Privacy-preserving aggregation queries for wireless sensor networks.
//!
//! A sink node answers requests like `IF(light=ON) THEN AVG(temperature) @ room237`
//! by sending *queries* around randomized circuits of sensor nodes. Each query is
//! a fixed-size onion-encrypted *head* (one public-key layer per path node, ending
//! in a terminal layer only the sink can open) plus a fixed-size symmetric-encrypted
//! *body* carrying an executable aggregation task and a 32-byte result carrier.
//! Roughly half the path nodes are *targets* that receive symmetric keys, decrypt
//! the body, fold their local reading into the carrier, and re-encrypt; the rest
//! are *decoys* that only peel their head layer and forward. Sizes, timing, and
//! byte layouts are chosen so an observer cannot tell the two apart.
//!
//! Crate layout:
//!
//! * [`envelope`] — hybrid public-key sealing, symmetric AEAD, padding; the only
//!   module that touches cipher primitives.
//! * [`onion`] — construction and peeling of query heads and bodies.
//! * [`registry`] — the deployment directory of nodes (address, key, location,
//!   sensed quantities).
//! * [`request`] — the request DSL, target selection, query-path planning, and
//!   task compilation.
//! * [`vm`] — the restricted stack machine that executes tasks against local
//!   sensors and the result carrier.
//! * [`node`] — the per-node protocol state machine and the sink session
//!   (issue, collect, merge, abort/reissue).

pub mod envelope;
pub mod node;
pub mod onion;
pub mod registry;
pub mod request;
pub mod vm;

pub use registry::{Address, Registry, RegistryEntry};
