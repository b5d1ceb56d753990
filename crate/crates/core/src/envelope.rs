//! Uniform wrappers around the cipher primitives: hybrid public-key sealing,
//! symmetric authenticated encryption, and random padding.
//!
//! Upper layers never touch cipher details; they only rely on the size
//! contracts exposed here:
//!
//! * `seal` output is exactly `plaintext + SEAL_OVERHEAD` bytes,
//! * `sym_encrypt` output is exactly `plaintext + SYM_OVERHEAD` bytes,
//! * both decrypt operations authenticate and reject any corruption.
//!
//! The sealed box is X25519 (ephemeral key per message) + HKDF-SHA256 +
//! ChaCha20-Poly1305. The wire format is `ephemeral_pk(32) ‖ ciphertext ‖ tag(16)`;
//! the AEAD nonce is zero because every seal derives a fresh key from a fresh
//! ephemeral secret. Symmetric encryption is ChaCha20-Poly1305 with a random
//! 96-bit nonce carried in front of the ciphertext.
//!
//! All randomness is drawn from caller-provided seeded sources so that every
//! construction is reproducible in tests and in the simulator.

use chacha20poly1305::aead::{Aead, KeyInit, Payload};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce};
use hkdf::Hkdf;
use rand::RngCore;
use sha2::Sha256;
use x25519_dalek::{PublicKey as X25519Public, StaticSecret};

/// Public key length in bytes (X25519 point).
pub const PK_LEN: usize = 32;
/// Symmetric key length in bytes (256-bit keys).
pub const SK_LEN: usize = 32;
/// Bytes added by `seal`: the encapsulated ephemeral public key plus the AEAD tag.
pub const SEAL_OVERHEAD: usize = PK_LEN + TAG_LEN;
/// Bytes added by `sym_encrypt`: the message nonce plus the AEAD tag.
pub const SYM_OVERHEAD: usize = NONCE_LEN + TAG_LEN;
/// Largest plaintext a single sealed layer will accept.
pub const MAX_LAYER_PLAINTEXT: usize = 1 << 20;

const TAG_LEN: usize = 16;
const NONCE_LEN: usize = 12;

/// Errors from sealing, opening, and symmetric encryption.
#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum EnvelopeError {
    #[error("plaintext of {len} bytes exceeds the {max}-byte layer limit")]
    PlaintextTooLarge { len: usize, max: usize },
    #[error("ciphertext of {len} bytes is shorter than the {min}-byte minimum")]
    Truncated { len: usize, min: usize },
    #[error("authentication failed: wrong key or corrupted ciphertext")]
    Authentication,
    #[error("key agreement produced a weak shared secret")]
    WeakSharedSecret,
}

/// An asymmetric keypair owned by one node.
#[derive(Clone)]
pub struct KeyPair {
    public: PublicKey,
    private: [u8; PK_LEN],
}

/// A node's public key.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct PublicKey(pub [u8; PK_LEN]);

/// A symmetric encryption key. Doubles as the query identifier when it is the
/// last key of a query's chain, so it orders and hashes for use as a map key.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SymKey(pub [u8; SK_LEN]);

impl std::fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "PublicKey({}…)", hex::encode(&self.0[..4]))
    }
}

impl std::fmt::Debug for SymKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "SymKey({}…)", hex::encode(&self.0[..4]))
    }
}

impl std::fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("KeyPair").field("public", &self.public).finish_non_exhaustive()
    }
}

impl KeyPair {
    /// The public half.
    pub fn public(&self) -> PublicKey {
        self.public
    }
}

impl SymKey {
    /// Hex rendering of the full key, used when a query identifier must be
    /// written out (diagnostics, trace files).
    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

/// Generate a keypair from the given randomness source. Deterministic for a
/// fixed rng state.
pub fn generate_keypair(rng: &mut impl RngCore) -> KeyPair {
    let mut secret = [0u8; PK_LEN];
    rng.fill_bytes(&mut secret);
    let public = X25519Public::from(&StaticSecret::from(secret));
    KeyPair { public: PublicKey(public.to_bytes()), private: secret }
}

/// Generate a fresh symmetric key from the given randomness source.
pub fn generate_sym_key(rng: &mut impl RngCore) -> SymKey {
    let mut key = [0u8; SK_LEN];
    rng.fill_bytes(&mut key);
    SymKey(key)
}

/// Derive the message key shared between an ephemeral secret and a recipient.
///
/// Binding both public keys into the HKDF info ties the derived key to this
/// exact (sender, recipient) pairing.
fn derive_message_key(
    shared: &x25519_dalek::SharedSecret,
    eph_pk: &[u8; PK_LEN],
    recipient_pk: &[u8; PK_LEN],
) -> Result<Key, EnvelopeError> {
    if !shared.was_contributory() {
        return Err(EnvelopeError::WeakSharedSecret);
    }
    let hk = Hkdf::<Sha256>::new(None, shared.as_bytes());
    let mut info = [0u8; 2 * PK_LEN];
    info[..PK_LEN].copy_from_slice(eph_pk);
    info[PK_LEN..].copy_from_slice(recipient_pk);
    let mut key = [0u8; SK_LEN];
    hk.expand(&info, &mut key).expect("32-byte HKDF output is always valid");
    Ok(*Key::from_slice(&key))
}

/// Seal `plaintext` to `pk`. Output length is exactly `plaintext.len() + SEAL_OVERHEAD`.
pub fn seal(rng: &mut impl RngCore, pk: &PublicKey, plaintext: &[u8]) -> Result<Vec<u8>, EnvelopeError> {
    if plaintext.len() > MAX_LAYER_PLAINTEXT {
        return Err(EnvelopeError::PlaintextTooLarge { len: plaintext.len(), max: MAX_LAYER_PLAINTEXT });
    }
    let mut eph_secret = [0u8; PK_LEN];
    rng.fill_bytes(&mut eph_secret);
    let eph = StaticSecret::from(eph_secret);
    let eph_pk = X25519Public::from(&eph).to_bytes();
    let shared = eph.diffie_hellman(&X25519Public::from(pk.0));
    let key = derive_message_key(&shared, &eph_pk, &pk.0)?;

    let aead = ChaCha20Poly1305::new(&key);
    let ct = aead
        .encrypt(&Nonce::default(), Payload { msg: plaintext, aad: &[] })
        .expect("encryption is infallible for in-range plaintext");

    let mut out = Vec::with_capacity(PK_LEN + ct.len());
    out.extend_from_slice(&eph_pk);
    out.extend_from_slice(&ct);
    Ok(out)
}

/// Open a sealed message with the recipient keypair.
pub fn open(kp: &KeyPair, sealed: &[u8]) -> Result<Vec<u8>, EnvelopeError> {
    Opener::new(kp, sealed)?.open(sealed)
}

/// The per-message decryption state shared by every candidate extent of one
/// sealed buffer: one key agreement, then any number of cheap AEAD attempts.
///
/// Onion peeling does not know where a layer ends inside the fixed-size head,
/// so it tries several candidate lengths of the same buffer. All candidates
/// share the ephemeral public key prefix, hence the derived key; constructing
/// an `Opener` once and probing extents through it avoids repeating the
/// key agreement per attempt.
pub struct Opener {
    key: Key,
}

impl Opener {
    /// Run key agreement against the ephemeral public key at the front of
    /// `sealed`. Fails only if the buffer cannot even hold a sealed message.
    pub fn new(kp: &KeyPair, sealed: &[u8]) -> Result<Self, EnvelopeError> {
        if sealed.len() < SEAL_OVERHEAD {
            return Err(EnvelopeError::Truncated { len: sealed.len(), min: SEAL_OVERHEAD });
        }
        let mut eph_pk = [0u8; PK_LEN];
        eph_pk.copy_from_slice(&sealed[..PK_LEN]);
        let shared = StaticSecret::from(kp.private).diffie_hellman(&X25519Public::from(eph_pk));
        let key = derive_message_key(&shared, &eph_pk, &kp.public.0)?;
        Ok(Opener { key })
    }

    /// Attempt to open `sealed` (which must start with the same ephemeral key
    /// this `Opener` was built from). Fails with `Authentication` when `sealed`
    /// is not a whole message for this recipient — in particular when it is a
    /// longer buffer with trailing padding, which is exactly what extent
    /// probing relies on.
    pub fn open(&self, sealed: &[u8]) -> Result<Vec<u8>, EnvelopeError> {
        if sealed.len() < SEAL_OVERHEAD {
            return Err(EnvelopeError::Truncated { len: sealed.len(), min: SEAL_OVERHEAD });
        }
        let aead = ChaCha20Poly1305::new(&self.key);
        aead.decrypt(&Nonce::default(), Payload { msg: &sealed[PK_LEN..], aad: &[] })
            .map_err(|_| EnvelopeError::Authentication)
    }
}

/// Symmetric authenticated encryption. Output is `nonce(12) ‖ ciphertext ‖ tag(16)`,
/// exactly `plaintext.len() + SYM_OVERHEAD` bytes, with a fresh random nonce.
pub fn sym_encrypt(rng: &mut impl RngCore, key: &SymKey, plaintext: &[u8]) -> Result<Vec<u8>, EnvelopeError> {
    if plaintext.len() > MAX_LAYER_PLAINTEXT {
        return Err(EnvelopeError::PlaintextTooLarge { len: plaintext.len(), max: MAX_LAYER_PLAINTEXT });
    }
    let mut nonce = [0u8; NONCE_LEN];
    rng.fill_bytes(&mut nonce);
    let aead = ChaCha20Poly1305::new(Key::from_slice(&key.0));
    let ct = aead
        .encrypt(Nonce::from_slice(&nonce), Payload { msg: plaintext, aad: &[] })
        .expect("encryption is infallible for in-range plaintext");
    let mut out = Vec::with_capacity(NONCE_LEN + ct.len());
    out.extend_from_slice(&nonce);
    out.extend_from_slice(&ct);
    Ok(out)
}

/// Inverse of [`sym_encrypt`]; authenticates before returning the plaintext.
pub fn sym_decrypt(key: &SymKey, ciphertext: &[u8]) -> Result<Vec<u8>, EnvelopeError> {
    if ciphertext.len() < SYM_OVERHEAD {
        return Err(EnvelopeError::Truncated { len: ciphertext.len(), min: SYM_OVERHEAD });
    }
    let (nonce, ct) = ciphertext.split_at(NONCE_LEN);
    let aead = ChaCha20Poly1305::new(Key::from_slice(&key.0));
    aead.decrypt(Nonce::from_slice(nonce), Payload { msg: ct, aad: &[] })
        .map_err(|_| EnvelopeError::Authentication)
}

/// Exactly `len` random bytes from the given source.
pub fn random_pad(rng: &mut impl RngCore, len: usize) -> Vec<u8> {
    let mut pad = vec![0u8; len];
    rng.fill_bytes(&mut pad);
    pad
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn rng(seed: u64) -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(seed)
    }

    #[test]
    fn keypair_generation_is_deterministic() {
        let a = generate_keypair(&mut rng(42));
        let b = generate_keypair(&mut rng(42));
        assert_eq!(a.public(), b.public());
        assert_eq!(a.private, b.private);
    }

    #[test]
    fn distinct_seeds_give_distinct_keys() {
        let a = generate_keypair(&mut rng(42));
        let b = generate_keypair(&mut rng(43));
        assert_ne!(a.public(), b.public());
        let ka = generate_sym_key(&mut rng(1));
        let kb = generate_sym_key(&mut rng(2));
        assert_ne!(ka, kb);
    }

    #[test]
    fn seal_roundtrips_a_kib_message() {
        let mut r = rng(7);
        let kp = generate_keypair(&mut r);
        let msg = random_pad(&mut r, 1024);
        let sealed = seal(&mut r, &kp.public(), &msg).unwrap();
        assert_eq!(open(&kp, &sealed).unwrap(), msg);
    }

    #[test]
    fn seal_overhead_is_constant() {
        let mut r = rng(8);
        let kp = generate_keypair(&mut r);
        let empty = seal(&mut r, &kp.public(), &[]).unwrap();
        let hundred = seal(&mut r, &kp.public(), &[0u8; 100]).unwrap();
        assert_eq!(empty.len(), SEAL_OVERHEAD);
        assert_eq!(hundred.len() - empty.len(), 100);
    }

    #[test]
    fn open_with_wrong_key_is_an_authentication_error() {
        let mut r = rng(9);
        let kp = generate_keypair(&mut r);
        let other = generate_keypair(&mut r);
        let sealed = seal(&mut r, &kp.public(), b"secret").unwrap();
        assert_eq!(open(&other, &sealed), Err(EnvelopeError::Authentication));
    }

    #[test]
    fn sealed_message_rejects_any_single_byte_corruption() {
        let mut r = rng(10);
        let kp = generate_keypair(&mut r);
        let sealed = seal(&mut r, &kp.public(), b"payload").unwrap();
        for i in 0..sealed.len() {
            let mut bad = sealed.clone();
            bad[i] ^= 0x01;
            assert!(open(&kp, &bad).is_err(), "corruption at byte {i} was accepted");
        }
    }

    #[test]
    fn sym_roundtrip_and_authentication() {
        let mut r = rng(11);
        let key = generate_sym_key(&mut r);
        let ct = sym_encrypt(&mut r, &key, b"hello").unwrap();
        assert_eq!(ct.len(), 5 + SYM_OVERHEAD);
        assert_eq!(sym_decrypt(&key, &ct).unwrap(), b"hello");

        let wrong = generate_sym_key(&mut r);
        assert_eq!(sym_decrypt(&wrong, &ct), Err(EnvelopeError::Authentication));

        for i in 0..ct.len() {
            let mut bad = ct.clone();
            bad[i] ^= 0x80;
            assert_eq!(sym_decrypt(&key, &bad), Err(EnvelopeError::Authentication));
        }
    }

    #[test]
    fn fresh_nonces_give_distinct_ciphertexts() {
        let mut r = rng(12);
        let key = generate_sym_key(&mut r);
        let a = sym_encrypt(&mut r, &key, b"same plaintext").unwrap();
        let b = sym_encrypt(&mut r, &key, b"same plaintext").unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn opener_accepts_only_the_exact_extent() {
        // The property trial decryption rests on: a sealed message embedded at
        // the front of a longer padded buffer opens at its true length and at
        // no other candidate length.
        let mut r = rng(13);
        let kp = generate_keypair(&mut r);
        let sealed = seal(&mut r, &kp.public(), &[0xAB; 200]).unwrap();
        let mut padded = sealed.clone();
        padded.extend_from_slice(&random_pad(&mut r, 300));

        let opener = Opener::new(&kp, &padded).unwrap();
        for extent in (SEAL_OVERHEAD..=padded.len()).rev() {
            let attempt = opener.open(&padded[..extent]);
            if extent == sealed.len() {
                assert_eq!(attempt.unwrap(), vec![0xAB; 200]);
            } else {
                assert!(attempt.is_err(), "junk extent {extent} opened");
            }
        }
    }

    #[test]
    fn random_pad_lengths_and_freshness() {
        let mut r = rng(14);
        assert!(random_pad(&mut r, 0).is_empty());
        assert_eq!(random_pad(&mut r, 16).len(), 16);
        assert_ne!(random_pad(&mut r, 16), random_pad(&mut r, 16));
    }
}
