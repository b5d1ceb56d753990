//! The deployment registry: every node's address, public key, location, and
//! sensed physical quantities, as configured when the network was installed.
//!
//! Registries load from a line-oriented text file, one node per line:
//!
//! ```text
//! address pubkey_hex location quantity[,quantity...]
//! ```
//!
//! where `address` is a dotted quad, `pubkey_hex` is the 64-hex-digit public
//! key (or `-` when the caller will derive keys itself, as the demo CLI does),
//! `location` is a label, and the final field is a comma-separated list of
//! quantity labels. Blank lines and lines starting with `#` are skipped.

use std::collections::{BTreeSet, HashMap};

use crate::envelope::{PublicKey, PK_LEN};

/// A node address: four opaque bytes rendered as a dotted quad.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Address(pub [u8; 4]);

pub const ADDR_LEN: usize = 4;

impl Address {
    /// Addresses used by the simulator: node index `i` maps to `10.x.y.z`
    /// big-endian, leaving `10.255.255.255` representable for half a billion nodes.
    pub fn from_index(i: u32) -> Self {
        let b = i.to_be_bytes();
        Address([10, b[1], b[2], b[3]])
    }
}

impl std::fmt::Display for Address {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}.{}.{}.{}", self.0[0], self.0[1], self.0[2], self.0[3])
    }
}

impl std::fmt::Debug for Address {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{self}")
    }
}

impl std::str::FromStr for Address {
    type Err = RegistryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut bytes = [0u8; 4];
        let mut parts = 0;
        for (i, part) in s.split('.').enumerate() {
            if i >= 4 {
                return Err(RegistryError::BadAddress(s.to_string()));
            }
            bytes[i] = part.parse().map_err(|_| RegistryError::BadAddress(s.to_string()))?;
            parts = i + 1;
        }
        if parts != 4 {
            return Err(RegistryError::BadAddress(s.to_string()));
        }
        Ok(Address(bytes))
    }
}

/// One registry row.
#[derive(Clone, Debug)]
pub struct RegistryEntry {
    pub address: Address,
    /// `None` when the file used the `-` placeholder and keys will be derived
    /// elsewhere (the entry cannot be sealed to until a key is filled in).
    pub public_key: Option<PublicKey>,
    pub location: String,
    pub quantities: BTreeSet<String>,
}

/// The full node directory, indexed by address.
#[derive(Clone, Debug, Default)]
pub struct Registry {
    entries: Vec<RegistryEntry>,
    by_address: HashMap<Address, usize>,
}

#[derive(Debug, PartialEq, thiserror::Error)]
pub enum RegistryError {
    #[error("line {line}: expected `address pubkey_hex location quantity[,...]`, got {got} fields")]
    BadFieldCount { line: usize, got: usize },
    #[error("malformed address `{0}`")]
    BadAddress(String),
    #[error("line {line}: public key must be {len} hex digits or `-`", len = 2 * PK_LEN)]
    BadPublicKey { line: usize },
    #[error("line {line}: empty quantity list")]
    NoQuantities { line: usize },
    #[error("duplicate address {0}")]
    DuplicateAddress(Address),
    #[error("address {0} is not in the registry")]
    UnknownAddress(Address),
    #[error("registry entry {0} has no public key")]
    MissingPublicKey(Address),
}

impl Registry {
    /// Build a registry from entries, rejecting duplicate addresses.
    pub fn new(entries: Vec<RegistryEntry>) -> Result<Self, RegistryError> {
        let mut by_address = HashMap::with_capacity(entries.len());
        for (i, e) in entries.iter().enumerate() {
            if by_address.insert(e.address, i).is_some() {
                return Err(RegistryError::DuplicateAddress(e.address));
            }
        }
        Ok(Registry { entries, by_address })
    }

    /// Append one entry, rejecting a duplicate address.
    pub fn insert(&mut self, entry: RegistryEntry) -> Result<(), RegistryError> {
        if self.by_address.contains_key(&entry.address) {
            return Err(RegistryError::DuplicateAddress(entry.address));
        }
        self.by_address.insert(entry.address, self.entries.len());
        self.entries.push(entry);
        Ok(())
    }

    /// Parse the line-oriented text format.
    pub fn parse(text: &str) -> Result<Self, RegistryError> {
        let mut entries = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = trimmed.split_whitespace().collect();
            if fields.len() != 4 {
                return Err(RegistryError::BadFieldCount { line, got: fields.len() });
            }
            let address: Address = fields[0].parse()?;
            let public_key = if fields[1] == "-" {
                None
            } else {
                let bytes = hex::decode(fields[1]).map_err(|_| RegistryError::BadPublicKey { line })?;
                let arr: [u8; PK_LEN] =
                    bytes.try_into().map_err(|_| RegistryError::BadPublicKey { line })?;
                Some(PublicKey(arr))
            };
            let quantities: BTreeSet<String> =
                fields[3].split(',').filter(|q| !q.is_empty()).map(str::to_string).collect();
            if quantities.is_empty() {
                return Err(RegistryError::NoQuantities { line });
            }
            entries.push(RegistryEntry {
                address,
                public_key,
                location: fields[2].to_string(),
                quantities,
            });
        }
        Registry::new(entries)
    }

    /// Render back to the text format (placeholder `-` for missing keys).
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            let key = match &e.public_key {
                Some(pk) => hex::encode(pk.0),
                None => "-".to_string(),
            };
            let quantities: Vec<&str> = e.quantities.iter().map(String::as_str).collect();
            out.push_str(&format!("{} {} {} {}\n", e.address, key, e.location, quantities.join(",")));
        }
        out
    }

    pub fn get(&self, address: Address) -> Result<&RegistryEntry, RegistryError> {
        self.by_address
            .get(&address)
            .map(|&i| &self.entries[i])
            .ok_or(RegistryError::UnknownAddress(address))
    }

    /// The public key for `address`, erroring for unknown or keyless entries.
    pub fn public_key(&self, address: Address) -> Result<PublicKey, RegistryError> {
        self.get(address)?.public_key.ok_or(RegistryError::MissingPublicKey(address))
    }

    /// Fill in a public key (used by the demo CLI after deriving keypairs).
    pub fn set_public_key(&mut self, address: Address, pk: PublicKey) -> Result<(), RegistryError> {
        let i = *self.by_address.get(&address).ok_or(RegistryError::UnknownAddress(address))?;
        self.entries[i].public_key = Some(pk);
        Ok(())
    }

    pub fn entries(&self) -> &[RegistryEntry] {
        &self.entries
    }

    /// All addresses in file order (the set `U` of plannable nodes).
    pub fn addresses(&self) -> Vec<Address> {
        self.entries.iter().map(|e| e.address).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}
