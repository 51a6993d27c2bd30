//! Simulation-grade cryptographic primitives.
//!
//! Key pairs, signatures, sealed envelopes and nonces here are structural
//! stand-ins built on SHA-256: a signature binds a key id to a payload
//! digest, an envelope refuses to open for any key other than its
//! recipient's, and both detect any byte of tampering. They are fast and
//! fully deterministic, which is what a desk-scale simulator needs; they are
//! not hardened primitives. The protocol's security argument — an injected
//! message is rejected unless the sender knows the epoch's secret random
//! parameters — is preserved exactly, because those parameters only ever
//! travel inside sealed envelopes and adversary code has no key to open
//! them. Swapping in a real signature scheme behind this interface does not
//! change any caller.
//!
//! The incremental signature chain connects every exchange of an epoch to
//! the dialing phase that opened it: each link signs the owner's random
//! parameter, the previous link, and the claimed (location, time) pair, so
//! substituting any link invalidates every later one.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::rng::SimRng;
use crate::units::SimTime;
use crate::wire::WireWriter;

const DIGEST_LEN: usize = 32;

/// Sizes of key material and nonces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SecurityParams {
    /// Key strength knob, expressed in bits of the emulated keypair.
    pub key_bits: u32,
    /// Random-parameter and challenge nonce length in bytes.
    pub nonce_bytes: usize,
}

impl Default for SecurityParams {
    fn default() -> Self {
        SecurityParams {
            key_bits: 2048,
            nonce_bytes: 128,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CryptoError {
    #[error("malformed key material")]
    MalformedKey,
    #[error("envelope is not addressed to this key")]
    WrongRecipient,
    #[error("envelope integrity check failed")]
    EnvelopeTampered,
    #[error("signature chain state is missing its previous link")]
    BrokenChain,
}

/// Public half of a key pair: a 32-byte key id.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PublicKey {
    bytes: Vec<u8>,
}

impl PublicKey {
    pub fn from_bytes(bytes: Vec<u8>) -> Result<Self, CryptoError> {
        if bytes.len() != DIGEST_LEN {
            return Err(CryptoError::MalformedKey);
        }
        Ok(PublicKey { bytes })
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    fn check(&self) -> Result<(), CryptoError> {
        if self.bytes.len() != DIGEST_LEN {
            return Err(CryptoError::MalformedKey);
        }
        Ok(())
    }
}

/// Private half of a key pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrivateKey {
    seed: Vec<u8>,
}

impl PrivateKey {
    pub fn public(&self) -> PublicKey {
        let mut h = Sha256::new();
        h.update(b"smi.pk.v1");
        h.update(&self.seed);
        PublicKey {
            bytes: h.finalize().to_vec(),
        }
    }
}

/// Self-certifying key pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyPair {
    pub public_key: PublicKey,
    pub private_key: PrivateKey,
    pub created_at: SimTime,
}

/// Deterministic key generation from a 64-bit seed.
pub fn generate_keypair(rng_seed: u64) -> KeyPair {
    let mut rng = SimRng::derive(rng_seed, "keygen", 0);
    generate_keypair_from(&mut rng, &SecurityParams::default(), SimTime::ZERO)
}

pub fn generate_keypair_from(
    rng: &mut SimRng,
    params: &SecurityParams,
    created_at: SimTime,
) -> KeyPair {
    let seed_len = (params.key_bits as usize / 8).max(32);
    let private_key = PrivateKey {
        seed: rng.bytes(seed_len),
    };
    KeyPair {
        public_key: private_key.public(),
        private_key,
        created_at,
    }
}

/// Fixed-length random byte string; carries the epoch parameters `a`, `b`
/// and the challenge/response nonces.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Nonce {
    bytes: Vec<u8>,
}

impl Nonce {
    pub fn generate(rng: &mut SimRng, params: &SecurityParams) -> Self {
        Nonce {
            bytes: rng.bytes(params.nonce_bytes),
        }
    }

    pub fn from_bytes(bytes: Vec<u8>) -> Self {
        Nonce { bytes }
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn len(&self) -> usize {
        self.bytes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }
}

/// A signature: key id plus payload digest.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Signature {
    key_id: Vec<u8>,
    digest: Vec<u8>,
}

impl Signature {
    /// Stable byte form, fed into chain-link payloads.
    pub fn to_bytes(&self) -> Vec<u8> {
        WireWriter::new()
            .field(&self.key_id)
            .field(&self.digest)
            .finish()
    }

    /// Rebuilds a signature from its transported parts.
    pub fn from_parts(key_id: Vec<u8>, digest: Vec<u8>) -> Self {
        Signature { key_id, digest }
    }

    pub fn encoded_len(&self) -> usize {
        self.key_id.len() + self.digest.len() + 8
    }
}

fn payload_digest(key_id: &[u8], message: &[u8]) -> Vec<u8> {
    let mut h = Sha256::new();
    h.update(b"smi.sig.v1");
    h.update(key_id);
    h.update((message.len() as u64).to_le_bytes());
    h.update(message);
    h.finalize().to_vec()
}

pub fn sign(private_key: &PrivateKey, message: &[u8]) -> Signature {
    let key_id = private_key.public().bytes;
    let digest = payload_digest(&key_id, message);
    Signature { key_id, digest }
}

/// Signature check. `Err` means the key itself is unusable; a mismatched
/// message or signer is an ordinary `Ok(false)`.
pub fn verify(
    public_key: &PublicKey,
    message: &[u8],
    signature: &Signature,
) -> Result<bool, CryptoError> {
    public_key.check()?;
    if signature.key_id != public_key.bytes {
        return Ok(false);
    }
    Ok(signature.digest == payload_digest(&signature.key_id, message))
}

/// Sealed payload addressed to one recipient key.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CipherEnvelope {
    recipient_key_id: Vec<u8>,
    ciphertext: Vec<u8>,
    tag: Vec<u8>,
}

/// Framing plus emulated hybrid-sealing expansion, in bytes. Counted when
/// estimating on-air message length for SMS segmentation.
pub const SEAL_OVERHEAD_BYTES: usize = 72;

fn seal_tag(recipient_key_id: &[u8], body: &[u8]) -> Vec<u8> {
    let mut h = Sha256::new();
    h.update(b"smi.seal.v1");
    h.update(recipient_key_id);
    h.update((body.len() as u64).to_le_bytes());
    h.update(body);
    h.finalize().to_vec()
}

pub fn seal(recipient: &PublicKey, plaintext: &[u8]) -> CipherEnvelope {
    CipherEnvelope {
        recipient_key_id: recipient.bytes.clone(),
        ciphertext: plaintext.to_vec(),
        tag: seal_tag(&recipient.bytes, plaintext),
    }
}

/// Opens an envelope with the matching private key.
pub fn open(private_key: &PrivateKey, envelope: &CipherEnvelope) -> Result<Vec<u8>, CryptoError> {
    if private_key.public().bytes != envelope.recipient_key_id {
        return Err(CryptoError::WrongRecipient);
    }
    if envelope.tag != seal_tag(&envelope.recipient_key_id, &envelope.ciphertext) {
        return Err(CryptoError::EnvelopeTampered);
    }
    Ok(envelope.ciphertext.clone())
}

impl CipherEnvelope {
    pub fn recipient_key_id(&self) -> &[u8] {
        &self.recipient_key_id
    }

    /// On-air length of the sealed blob.
    pub fn encoded_len(&self) -> usize {
        self.ciphertext.len() + SEAL_OVERHEAD_BYTES
    }

    /// Corrupts one ciphertext byte. Test and adversary harness hook.
    pub fn tampered(&self) -> CipherEnvelope {
        let mut out = self.clone();
        if let Some(b) = out.ciphertext.first_mut() {
            *b ^= 0x01;
        } else {
            out.tag[0] ^= 0x01;
        }
        out
    }
}

/// Rolling state of one side of an epoch's signature chain.
///
/// `index` is the global interaction number of `last_signature`; the dialing
/// phase ends at index 3, so the first connection-phase link is index 4.
/// `owner_param` is the random parameter this side folds into its links
/// (`a` for the initiator, `b` for the participant).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignatureChainState {
    pub last_signature: Signature,
    pub index: u32,
    pub owner_param: Nonce,
}

fn link_payload(param: &Nonce, prev: &Signature, location_encoding: &[u8], time: SimTime) -> Vec<u8> {
    WireWriter::new()
        .field(param.as_bytes())
        .field(&prev.to_bytes())
        .field(location_encoding)
        .u64(time.as_secs())
        .finish()
}

/// Extends the chain by one link covering
/// `(owner_param ∥ previous signature ∥ location ∥ time)`.
pub fn chain_extend(
    state: &SignatureChainState,
    private_key: &PrivateKey,
    location_encoding: &[u8],
    time: SimTime,
) -> Result<(SignatureChainState, Signature), CryptoError> {
    if state.index < 1 || state.owner_param.is_empty() {
        return Err(CryptoError::BrokenChain);
    }
    let payload = link_payload(&state.owner_param, &state.last_signature, location_encoding, time);
    let sig = sign(private_key, &payload);
    Ok((
        SignatureChainState {
            last_signature: sig.clone(),
            index: state.index + 1,
            owner_param: state.owner_param.clone(),
        },
        sig,
    ))
}

/// One recorded link of an epoch chain, as seen by a verifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainLink {
    pub signature: Signature,
    pub location_encoding: Vec<u8>,
    pub time: SimTime,
    /// True if the peer produced this link; the verifier's own links only
    /// contribute their bytes to the continuity of the chain.
    pub from_peer: bool,
}

/// Dialing-phase output that anchors the chain: `S2` over the initiator's
/// parameter and `S3` over both parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainGenesis {
    pub s2: Signature,
    pub s3: Signature,
}

/// Checks that `candidate` is the valid next link after `state`: it must
/// sign `(state.owner_param ∥ state.last_signature ∥ location ∥ time)`
/// under `signer`.
pub fn chain_link_matches(
    state: &SignatureChainState,
    signer: &PublicKey,
    location_encoding: &[u8],
    time: SimTime,
    candidate: &Signature,
) -> bool {
    let payload = link_payload(&state.owner_param, &state.last_signature, location_encoding, time);
    verify(signer, &payload, candidate).unwrap_or(false)
}

/// Verifies the peer-produced links of an epoch chain against the dialing
/// anchor. Every peer link must sign
/// `(expected_param ∥ previous link ∥ claimed location ∥ claimed time)`
/// under the peer key; any substituted or reordered link breaks every check
/// after it.
pub fn chain_verify(
    genesis: &ChainGenesis,
    links: &[ChainLink],
    peer_public_key: &PublicKey,
    expected_param: &Nonce,
) -> bool {
    let mut prev = genesis.s3.clone();
    for link in links {
        if link.from_peer {
            let payload = link_payload(expected_param, &prev, &link.location_encoding, link.time);
            match verify(peer_public_key, &payload, &link.signature) {
                Ok(true) => {}
                _ => return false,
            }
        }
        prev = link.signature.clone();
    }
    true
}
