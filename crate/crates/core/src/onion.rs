//! Construction and peeling of the fixed-size query head and the encrypted
//! query body.
//!
//! # Head layout
//!
//! A head for a path `s_1 … s_n` is `n` nested public-key layers around one
//! terminal layer. Every per-hop layer plaintext uses the same fixed-width
//! frame whether or not keys are present, so layer sizes cannot leak which
//! positions are targets:
//!
//! ```text
//! per-hop layer i (sealed to s_i):   flag(1) ‖ next_addr(4) ‖ key_a(32) ‖ key_b(32) ‖ layer i+1
//!     flag 0 = decoy (key slots zero-filled), 1 = target (keys live)
//! terminal layer (sealed to sink):   flag 2 ‖ query_id(32) ‖ padding(p)
//! ```
//!
//! Sealing adds [`SEAL_OVERHEAD`] bytes, so each per-hop layer costs exactly
//! [`HOP_LAYER_OVERHEAD`] = 117 bytes and the minimal head size for a path of
//! `n` nodes is `head_size_for(n) = 117·n + 81`. A deployment may fix a larger
//! `L_H` (sized for its maximum path length); the terminal padding `p` absorbs
//! the difference so the outermost layer is always exactly `L_H` bytes.
//!
//! # Peeling with trailing junk
//!
//! A node receiving a head knows `L_H` but not how deep it sits in the onion,
//! so it cannot know where its layer ends and the previous hops' replacement
//! padding begins. Every layer boundary lies on the lattice
//! `L_H − k·117, k = 0, 1, …`, so the node runs one key agreement against the
//! ephemeral key at the front and probes those candidate extents until the
//! authentication tag verifies; wrong extents fail the tag check. The peeled
//! result keeps the old junk tail, so `inner` is always `L_H − 117` bytes, and
//! [`repad_head`] tops it back up to `L_H` with fresh random bytes.
//!
//! # Body layout
//!
//! ```text
//! plaintext:  task_len(2, LE) ‖ task ‖ padding (together l_t bytes) ‖ carrier(32)
//! body:       sym_encrypt(key, plaintext)        — l_t + 62 bytes in total
//! ```
//!
//! The padding is carried along unchanged when a target re-encrypts, so the
//! body plaintext differs between hops only in the carrier field.

use rand::RngCore;

use crate::envelope::{
    self, EnvelopeError, KeyPair, Opener, PublicKey, SymKey, SEAL_OVERHEAD, SK_LEN, SYM_OVERHEAD,
};
use crate::registry::{Address, ADDR_LEN};
use crate::vm::CARRIER_LEN;

/// Fixed-width per-hop plaintext frame: flag, next-hop address, two key slots.
pub const HOP_FIELDS_LEN: usize = 1 + ADDR_LEN + 2 * SK_LEN;
/// Total bytes one per-hop layer adds to the head.
pub const HOP_LAYER_OVERHEAD: usize = HOP_FIELDS_LEN + SEAL_OVERHEAD;
/// Size of the terminal layer with no padding: flag, query id, seal overhead.
pub const TERMINAL_MIN_LEN: usize = 1 + SK_LEN + SEAL_OVERHEAD;
/// Default cap on task bytecode carried in a body (the `L_t` deployment constant).
pub const DEFAULT_MAX_TASK_LEN: usize = 1280;

const FLAG_DECOY: u8 = 0;
const FLAG_TARGET: u8 = 1;
const FLAG_TERMINAL: u8 = 2;

/// Errors from head/body construction and peeling.
#[derive(Debug, thiserror::Error)]
pub enum OnionError {
    #[error("path of {n} nodes is too short; need at least 2")]
    PathTooShort { n: usize },
    #[error("head size {have} cannot hold a {n}-node path; need at least {need}")]
    HeadTooSmall { have: usize, need: usize, n: usize },
    #[error("node {0} has no public key in the registry")]
    MissingPublicKey(Address),
    #[error("head is not addressed to this node")]
    NotAddressed,
    #[error("layer decrypted but its framing is malformed")]
    MalformedLayer,
    #[error("inner bytes of {len} exceed the head size {l_h}")]
    InnerTooLong { len: usize, l_h: usize },
    #[error("task of {len} bytes exceeds the {max}-byte task capacity")]
    TaskTooLarge { len: usize, max: usize },
    #[error("body decrypted but its framing is malformed")]
    MalformedBody,
    #[error(transparent)]
    Envelope(#[from] EnvelopeError),
}

/// The onion-encrypted head; exactly `L_H` bytes at every hop of a query's life.
#[derive(Clone, PartialEq, Eq)]
pub struct QueryHead(Vec<u8>);

/// The symmetric-encrypted body; exactly `L_B` bytes at every hop.
#[derive(Clone, PartialEq, Eq)]
pub struct QueryBody(Vec<u8>);

impl QueryHead {
    pub fn from_bytes(bytes: Vec<u8>) -> Self {
        QueryHead(bytes)
    }
    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }
    pub fn len(&self) -> usize {
        self.0.len()
    }
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl QueryBody {
    pub fn from_bytes(bytes: Vec<u8>) -> Self {
        QueryBody(bytes)
    }
    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }
    pub fn len(&self) -> usize {
        self.0.len()
    }
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl std::fmt::Debug for QueryHead {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "QueryHead({} bytes)", self.0.len())
    }
}

impl std::fmt::Debug for QueryBody {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "QueryBody({} bytes)", self.0.len())
    }
}

/// One position of a planned path: the node to seal to and, for targets, the
/// key pair its layer reveals. Sequence order is the path order.
#[derive(Clone, Debug)]
pub struct LayerPlan {
    pub address: Address,
    pub public_key: PublicKey,
    pub keys: Option<(SymKey, SymKey)>,
}

/// The outcome of peeling one head layer.
pub enum PeelResult {
    /// A per-hop layer: where to send the query next, the symmetric key pair
    /// when this node is a target, and the remaining onion (always
    /// `L_H − HOP_LAYER_OVERHEAD` bytes, junk tail included).
    Forward { next_hop: Address, keys: Option<(SymKey, SymKey)>, inner: Vec<u8> },
    /// The terminal layer: only the issuing sink can open it, and it yields
    /// the query identifier.
    Terminal { query_id: SymKey },
}

/// The minimal head size for a path of `n` nodes (no terminal padding).
pub fn head_size_for(n: usize) -> Result<usize, OnionError> {
    if n < 2 {
        return Err(OnionError::PathTooShort { n });
    }
    Ok(n * HOP_LAYER_OVERHEAD + TERMINAL_MIN_LEN)
}

/// Build a head of exactly `l_h` bytes for the given path.
///
/// The innermost (terminal) layer is sealed to the sink and carries the query
/// identifier `query_id` plus enough padding to reach `l_h`; each per-hop layer
/// `i` is sealed to `path[i]` and names the next hop (`path[i+1]`, or the sink
/// for the last node). Peeling layer `i` with `path[i]`'s key yields exactly the
/// plan's keys at target positions and no keys elsewhere.
pub fn build_head(
    rng: &mut impl RngCore,
    path: &[LayerPlan],
    sink_address: Address,
    sink_public_key: &PublicKey,
    query_id: &SymKey,
    l_h: usize,
) -> Result<QueryHead, OnionError> {
    let n = path.len();
    let minimal = head_size_for(n)?;
    if l_h < minimal {
        return Err(OnionError::HeadTooSmall { have: l_h, need: minimal, n });
    }

    // Terminal layer: flag ‖ query id ‖ padding, sealed to the sink.
    let pad = l_h - minimal;
    let mut plaintext = Vec::with_capacity(1 + SK_LEN + pad);
    plaintext.push(FLAG_TERMINAL);
    plaintext.extend_from_slice(&query_id.0);
    plaintext.extend_from_slice(&envelope::random_pad(rng, pad));
    let mut layer = envelope::seal(rng, sink_public_key, &plaintext)?;

    // Wrap per-hop layers from the last node inward to the first.
    for (i, plan) in path.iter().enumerate().rev() {
        let next_hop = if i + 1 == n { sink_address } else { path[i + 1].address };
        let mut plaintext = Vec::with_capacity(HOP_FIELDS_LEN + layer.len());
        match &plan.keys {
            Some((e_a, e_b)) => {
                plaintext.push(FLAG_TARGET);
                plaintext.extend_from_slice(&next_hop.0);
                plaintext.extend_from_slice(&e_a.0);
                plaintext.extend_from_slice(&e_b.0);
            }
            None => {
                plaintext.push(FLAG_DECOY);
                plaintext.extend_from_slice(&next_hop.0);
                plaintext.extend_from_slice(&[0u8; 2 * SK_LEN]);
            }
        }
        plaintext.extend_from_slice(&layer);
        layer = envelope::seal(rng, &plan.public_key, &plaintext)?;
    }

    debug_assert_eq!(layer.len(), l_h);
    Ok(QueryHead(layer))
}

/// Peel the outermost layer of `head` with this node's keypair.
///
/// Runs one key agreement, then probes candidate layer extents (every
/// [`HOP_LAYER_OVERHEAD`] bytes down from the full head) until the
/// authentication tag verifies. Heads not addressed to this node fail every
/// extent and come back as [`OnionError::NotAddressed`].
pub fn peel(head: &QueryHead, keypair: &KeyPair) -> Result<PeelResult, OnionError> {
    let bytes = head.as_bytes();
    if bytes.len() < TERMINAL_MIN_LEN {
        return Err(OnionError::HeadTooSmall { have: bytes.len(), need: TERMINAL_MIN_LEN, n: 0 });
    }
    let opener = match Opener::new(keypair, bytes) {
        Ok(o) => o,
        Err(EnvelopeError::WeakSharedSecret) => return Err(OnionError::NotAddressed),
        Err(e) => return Err(e.into()),
    };

    let mut extent = bytes.len();
    loop {
        if let Ok(plaintext) = opener.open(&bytes[..extent]) {
            return parse_layer(&plaintext, &bytes[extent..]);
        }
        if extent < TERMINAL_MIN_LEN + HOP_LAYER_OVERHEAD {
            return Err(OnionError::NotAddressed);
        }
        extent -= HOP_LAYER_OVERHEAD;
    }
}

fn parse_layer(plaintext: &[u8], junk_tail: &[u8]) -> Result<PeelResult, OnionError> {
    match plaintext.first() {
        Some(&FLAG_TERMINAL) => {
            if plaintext.len() < 1 + SK_LEN {
                return Err(OnionError::MalformedLayer);
            }
            let mut id = [0u8; SK_LEN];
            id.copy_from_slice(&plaintext[1..1 + SK_LEN]);
            Ok(PeelResult::Terminal { query_id: SymKey(id) })
        }
        Some(&flag @ (FLAG_DECOY | FLAG_TARGET)) => {
            if plaintext.len() < HOP_FIELDS_LEN {
                return Err(OnionError::MalformedLayer);
            }
            let mut addr = [0u8; ADDR_LEN];
            addr.copy_from_slice(&plaintext[1..1 + ADDR_LEN]);
            let keys = if flag == FLAG_TARGET {
                let mut e_a = [0u8; SK_LEN];
                let mut e_b = [0u8; SK_LEN];
                e_a.copy_from_slice(&plaintext[5..5 + SK_LEN]);
                e_b.copy_from_slice(&plaintext[5 + SK_LEN..5 + 2 * SK_LEN]);
                Some((SymKey(e_a), SymKey(e_b)))
            } else {
                None
            };
            let mut inner = Vec::with_capacity(plaintext.len() - HOP_FIELDS_LEN + junk_tail.len());
            inner.extend_from_slice(&plaintext[HOP_FIELDS_LEN..]);
            inner.extend_from_slice(junk_tail);
            Ok(PeelResult::Forward { next_hop: Address(addr), keys, inner })
        }
        _ => Err(OnionError::MalformedLayer),
    }
}

/// Restore a peeled head to `l_h` bytes by appending fresh random padding.
pub fn repad_head(rng: &mut impl RngCore, inner: &[u8], l_h: usize) -> Result<QueryHead, OnionError> {
    if inner.len() > l_h {
        return Err(OnionError::InnerTooLong { len: inner.len(), l_h });
    }
    let mut bytes = Vec::with_capacity(l_h);
    bytes.extend_from_slice(inner);
    bytes.extend_from_slice(&envelope::random_pad(rng, l_h - inner.len()));
    Ok(QueryHead(bytes))
}

/// The decrypted body: task bytecode, the 32-byte carrier, and the padding
/// that keeps the plaintext at its fixed width.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BodyContent {
    pub task: Vec<u8>,
    pub carrier: [u8; CARRIER_LEN],
    pub padding: Vec<u8>,
}

impl BodyContent {
    /// The task capacity (`L_t`) this body was built with.
    pub fn task_capacity(&self) -> usize {
        self.task.len() + self.padding.len()
    }
}

/// The fixed body size for a deployment's task capacity `l_t`.
pub fn body_size_for(l_t: usize) -> usize {
    2 + l_t + CARRIER_LEN + SYM_OVERHEAD
}

/// Encrypt a task and carrier into a body of exactly `body_size_for(l_t)` bytes.
pub fn build_body(
    rng: &mut impl RngCore,
    task: &[u8],
    carrier: &[u8; CARRIER_LEN],
    key: &SymKey,
    l_t: usize,
) -> Result<QueryBody, OnionError> {
    if task.len() > l_t || task.len() > u16::MAX as usize {
        return Err(OnionError::TaskTooLarge { len: task.len(), max: l_t.min(u16::MAX as usize) });
    }
    let padding = envelope::random_pad(rng, l_t - task.len());
    let content = BodyContent { task: task.to_vec(), carrier: *carrier, padding };
    reencrypt_body(rng, &content, key)
}

/// Encrypt body plaintext parts under `key` (fresh nonce). Construction and
/// target-node re-encryption are the same operation; targets pass the opened
/// content back with only the carrier changed, so the body length never moves.
pub fn reencrypt_body(
    rng: &mut impl RngCore,
    content: &BodyContent,
    key: &SymKey,
) -> Result<QueryBody, OnionError> {
    let l_t = content.task_capacity();
    if content.task.len() > u16::MAX as usize {
        return Err(OnionError::TaskTooLarge { len: content.task.len(), max: u16::MAX as usize });
    }
    let mut plaintext = Vec::with_capacity(2 + l_t + CARRIER_LEN);
    plaintext.extend_from_slice(&(content.task.len() as u16).to_le_bytes());
    plaintext.extend_from_slice(&content.task);
    plaintext.extend_from_slice(&content.padding);
    plaintext.extend_from_slice(&content.carrier);
    Ok(QueryBody(envelope::sym_encrypt(rng, key, &plaintext)?))
}

/// Decrypt and parse a body. The task capacity is implied by the body length.
pub fn open_body(key: &SymKey, body: &QueryBody) -> Result<BodyContent, OnionError> {
    let plaintext = envelope::sym_decrypt(key, body.as_bytes())?;
    if plaintext.len() < 2 + CARRIER_LEN {
        return Err(OnionError::MalformedBody);
    }
    let l_t = plaintext.len() - 2 - CARRIER_LEN;
    let task_len = u16::from_le_bytes([plaintext[0], plaintext[1]]) as usize;
    if task_len > l_t {
        return Err(OnionError::MalformedBody);
    }
    let task = plaintext[2..2 + task_len].to_vec();
    let padding = plaintext[2 + task_len..2 + l_t].to_vec();
    let mut carrier = [0u8; CARRIER_LEN];
    carrier.copy_from_slice(&plaintext[2 + l_t..]);
    Ok(BodyContent { task, carrier, padding })
}
