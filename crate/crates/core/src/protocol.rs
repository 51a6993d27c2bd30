//! The epoch state machine: three-way dialing handshake, connection-phase
//! incremental signature exchanges, epoch completion and abort, plus the
//! trusted-location, multi-channel and cloud-probe variants.
//!
//! One machine instance drives one side of one epoch with one peer. Every
//! inbound message is checked for consistency — envelope integrity,
//! signatures, parameter echoes, chain linkage, claimed times, TTLs and
//! ordering — and any inconsistency aborts the epoch. An abort is terminal
//! and carries no reputation penalty; only verified exchanges emit
//! interaction effects, and a completed epoch additionally emits one
//! `IncreaseRep` summary.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::crypto::{
    chain_extend, open, seal, sign, verify, ChainGenesis, ChainLink, CipherEnvelope, KeyPair,
    Nonce, PublicKey, SecurityParams, Signature, SignatureChainState,
};
use crate::identity::{PrincipalIdentity, PrincipalKind};
use crate::reputation::{ObservedLocation, ObservedTrust};
use crate::rng::SimRng;
use crate::simnet::{sms_segments, ChannelKind};
use crate::units::{Duration, Position, SimTime};
use crate::wire::{WireReader, WireWriter};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProtocolError {
    #[error("an epoch with this peer is still open; wait for its end tag")]
    EpochStillOpen,
    #[error("epoch is not ready to complete")]
    CompletionEarly,
    #[error("operation is not valid for this role or phase")]
    WrongState,
    #[error("no SMS capacity configured; challenge-response cannot run")]
    NoSmsChannel,
    #[error("device is not within proximity of the endpoint")]
    ProximityViolated,
    #[error("endpoint certificate does not verify against the trust root")]
    UntrustedIssuer,
    #[error("identity proof rejected")]
    ProofRejected,
}

/// Why an epoch aborted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AbortReason {
    DecryptFailure,
    Malformed,
    BadSignature,
    ParamMismatch,
    BrokenChain,
    IdentityMismatch,
    StaleTimestamp,
    StaleTtl,
    BadLocationProof,
    OutOfOrder,
    UnexpectedMessage,
    RetriesExhausted,
    /// A fresh dialing attempt superseded this epoch.
    Superseded,
    PeerTimeout,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Dialing,
    Connection,
    Completed,
    Aborted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    Initiator,
    Participant,
}

/// Protocol-wide knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    /// Connection exchanges per epoch.
    pub k: u32,
    pub security: SecurityParams,
    /// Acceptance window for dialing timestamps (replay guard) and for
    /// claimed exchange times relative to arrival.
    pub freshness: Duration,
    /// TTL granted on trusted location signatures.
    pub trusted_ttl: Duration,
    /// Device-binding variant of the trusted stamp: `s(D, L, t)`.
    pub bind_device_id: bool,
    /// Proximity radius for trusted-location synchronization, meters.
    pub proximity_radius_m: f64,
    pub max_retries: u32,
    pub retry_timeout: Duration,
    /// Public key of the trusted-location PKI root, when one exists.
    pub trust_root: Option<PublicKey>,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            k: 24,
            security: SecurityParams::default(),
            freshness: Duration::from_secs(300),
            trusted_ttl: Duration::from_secs(3600),
            bind_device_id: false,
            proximity_radius_m: 30.0,
            max_retries: 3,
            retry_timeout: Duration::from_secs(120),
            trust_root: None,
        }
    }
}

/// A (location, time) claim, self-declared or endorsed by a trusted
/// endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocationReport {
    pub position: Position,
    pub time: SimTime,
    pub trust: LocationTrust,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LocationTrust {
    Untrusted,
    Trusted(TrustedStamp),
}

/// Endorsement by a PKI-rooted endpoint: `s(L, t)`, optionally `s(D, L, t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrustedStamp {
    pub issuer: PrincipalIdentity,
    pub endpoint_id: u64,
    pub endpoint_key: PublicKey,
    /// Root signature over the endpoint key and identity.
    pub root_cert: Signature,
    /// The endpoint's signature over the stamped location and time.
    pub signature: Signature,
    pub ttl: Duration,
    pub bound_device: Option<String>,
}

impl LocationReport {
    pub fn untrusted(position: Position, time: SimTime) -> Self {
        LocationReport { position, time, trust: LocationTrust::Untrusted }
    }

    pub fn is_trusted(&self) -> bool {
        matches!(self.trust, LocationTrust::Trusted(_))
    }

    /// Stable byte form, embedded in sealed tuples and signed chain links.
    pub fn wire_encoding(&self) -> Vec<u8> {
        let mut w = WireWriter::new()
            .f64(self.position.x)
            .f64(self.position.y)
            .u64(self.time.as_millis());
        match &self.trust {
            LocationTrust::Untrusted => {
                w = w.field(&[0u8]);
            }
            LocationTrust::Trusted(s) => {
                w = w
                    .field(&[1u8])
                    .str(&s.issuer.user_id)
                    .str(&s.issuer.device_id)
                    .u64(s.endpoint_id)
                    .field(s.endpoint_key.as_bytes())
                    .field(&s.root_cert.to_bytes())
                    .field(&s.signature.to_bytes())
                    .u64(s.ttl.as_millis());
                w = match &s.bound_device {
                    Some(d) => w.field(&[1u8]).str(d),
                    None => w.field(&[0u8]).str(""),
                };
            }
        }
        w.finish()
    }
}

/// What the endpoint actually signs for a stamp.
fn stamp_payload(position: &Position, time: SimTime, bound_device: Option<&str>) -> Vec<u8> {
    let mut w = WireWriter::new().f64(position.x).f64(position.y).u64(time.as_millis());
    if let Some(d) = bound_device {
        w = w.str(d);
    }
    w.finish()
}

/// What the root signs to certify an endpoint.
fn cert_payload(endpoint_key: &PublicKey, issuer: &PrincipalIdentity) -> Vec<u8> {
    WireWriter::new()
        .field(endpoint_key.as_bytes())
        .str(&issuer.user_id)
        .str(&issuer.device_id)
        .finish()
}

/// Validation verdict for a received location report.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum LocationCheck {
    Ok,
    Invalid(AbortReason),
}

/// Verifies a trusted stamp against the root and its TTL at time of use.
fn check_location(
    report: &LocationReport,
    cfg: &ProtocolConfig,
    used_at: SimTime,
    presenter_device: &str,
) -> LocationCheck {
    match &report.trust {
        LocationTrust::Untrusted => LocationCheck::Ok,
        LocationTrust::Trusted(stamp) => {
            let root = match &cfg.trust_root {
                Some(r) => r,
                None => return LocationCheck::Invalid(AbortReason::BadLocationProof),
            };
            if stamp.issuer.kind != PrincipalKind::TrustedLocationEndpoint {
                return LocationCheck::Invalid(AbortReason::BadLocationProof);
            }
            let cert_ok = verify(root, &cert_payload(&stamp.endpoint_key, &stamp.issuer), &stamp.root_cert)
                .unwrap_or(false);
            if !cert_ok {
                return LocationCheck::Invalid(AbortReason::BadLocationProof);
            }
            let payload =
                stamp_payload(&report.position, report.time, stamp.bound_device.as_deref());
            let sig_ok = verify(&stamp.endpoint_key, &payload, &stamp.signature).unwrap_or(false);
            if !sig_ok {
                return LocationCheck::Invalid(AbortReason::BadLocationProof);
            }
            if let Some(bound) = &stamp.bound_device {
                if bound != presenter_device {
                    return LocationCheck::Invalid(AbortReason::IdentityMismatch);
                }
            }
            if used_at > report.time + stamp.ttl {
                return LocationCheck::Invalid(AbortReason::StaleTtl);
            }
            LocationCheck::Ok
        }
    }
}

/// A verified exchange as the ledger will see it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionRecord {
    pub position: Position,
    pub time: SimTime,
    pub observation: ObservedLocation,
}

fn observe(report: &LocationReport, self_declared_credible: bool) -> ObservedLocation {
    match &report.trust {
        LocationTrust::Untrusted => ObservedLocation {
            trust: ObservedTrust::Untrusted,
            credible: self_declared_credible,
        },
        LocationTrust::Trusted(s) => ObservedLocation {
            trust: ObservedTrust::Trusted { endpoint: s.endpoint_id },
            credible: true,
        },
    }
}

/// Per-epoch channel assignment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelPlan {
    /// Challenge-response material always rides SMS; bulk payloads may be
    /// offloaded here.
    pub offload: Option<ChannelKind>,
}

/// Channels available to a device pair for one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelAvailability {
    pub sms: bool,
    pub data: bool,
    pub bluetooth: bool,
}

impl Default for ChannelAvailability {
    fn default() -> Self {
        ChannelAvailability { sms: true, data: false, bluetooth: false }
    }
}

/// Picks the epoch's channel plan. SMS is mandatory: the nonces and
/// signatures are only meaningful on the identity-bound channel.
pub fn plan_channels(avail: &ChannelAvailability) -> Result<ChannelPlan, ProtocolError> {
    if !avail.sms {
        return Err(ProtocolError::NoSmsChannel);
    }
    let offload = if avail.data {
        Some(ChannelKind::Data)
    } else if avail.bluetooth {
        Some(ChannelKind::Bluetooth)
    } else {
        None
    };
    Ok(ChannelPlan { offload })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum MessageBody {
    /// Sealed `(L1, t1, U1, D1, a)`.
    Dialing1 { envelope: CipherEnvelope },
    /// `S2(a)` plus sealed `(L2, t2, U2, D2, b, a)`.
    Dialing2 { param_sig: Signature, envelope: CipherEnvelope },
    /// `S3(b ∥ a)` plus sealed `(b)`.
    Dialing3 { chain_sig: Signature, envelope: CipherEnvelope },
    /// Initiator link `S_{2i}` plus sealed `(L, t, U1, D1, S_{2i})`.
    ConnInitiator { index: u32, link_sig: Signature, envelope: CipherEnvelope },
    /// Participant link `S_{2i+1}` plus sealed `(L, t, U2, D2, S_{2i+1})`.
    ConnParticipant { index: u32, link_sig: Signature, envelope: CipherEnvelope },
    /// Signed completion tag gating the next epoch's inception.
    EpochEndTag { epoch_index: u32, tag_sig: Signature },
    /// Cloud-provider probe, sealed to the device.
    CloudProbe { probe_id: u64, envelope: CipherEnvelope },
    /// Signed device answer, sealed to the provider.
    CloudResponse { probe_id: u64, response_sig: Signature, envelope: CipherEnvelope },
    /// Trusted endpoint's offer: sealed `(s(L,t), U_T, D_T, c1)`.
    TrustedLocOffer { envelope: CipherEnvelope },
    /// Device ack: `S_U(c1)` plus sealed `(L, t, U, D, c2, c1)`.
    TrustedLocAck { challenge_sig: Signature, envelope: CipherEnvelope },
    /// Third-party verifier proof for quick bootstrap.
    IdentityProof(IdentityProof),
}

impl MessageBody {
    pub fn variant_name(&self) -> &'static str {
        match self {
            MessageBody::Dialing1 { .. } => "Dialing1",
            MessageBody::Dialing2 { .. } => "Dialing2",
            MessageBody::Dialing3 { .. } => "Dialing3",
            MessageBody::ConnInitiator { .. } => "ConnInitiator",
            MessageBody::ConnParticipant { .. } => "ConnParticipant",
            MessageBody::EpochEndTag { .. } => "EpochEndTag",
            MessageBody::CloudProbe { .. } => "CloudProbe",
            MessageBody::CloudResponse { .. } => "CloudResponse",
            MessageBody::TrustedLocOffer { .. } => "TrustedLocOffer",
            MessageBody::TrustedLocAck { .. } => "TrustedLocAck",
            MessageBody::IdentityProof(_) => "IdentityProof",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolMessage {
    pub sender: PrincipalIdentity,
    pub recipient: PrincipalIdentity,
    pub body: MessageBody,
    /// Channel carrying the bulk of the message; challenge-response parts
    /// of offloaded messages still ride SMS.
    pub channel: ChannelKind,
    pub sms_segments: u32,
}

impl ProtocolMessage {
    /// SMS segments this message charges against the sender's quota; zero
    /// for proximity-only traffic.
    pub fn sms_cost(&self) -> u32 {
        match self.channel {
            ChannelKind::Sms | ChannelKind::Data => self.sms_segments,
            ChannelKind::Bluetooth | ChannelKind::Nfc => 0,
        }
    }
}

fn envelope_len(env: &CipherEnvelope) -> usize {
    env.encoded_len()
}

/// Builds a message and prices its SMS share under the plan.
fn finalize(
    sender: &PrincipalIdentity,
    recipient: &PrincipalIdentity,
    body: MessageBody,
    plan: &ChannelPlan,
) -> ProtocolMessage {
    let (channel, sms_len) = match &body {
        // Dialing carries the random parameters: SMS, whole message.
        MessageBody::Dialing1 { envelope } => (ChannelKind::Sms, envelope_len(envelope)),
        MessageBody::Dialing2 { param_sig, envelope } => {
            (ChannelKind::Sms, param_sig.encoded_len() + envelope_len(envelope))
        }
        MessageBody::Dialing3 { chain_sig, envelope } => {
            (ChannelKind::Sms, chain_sig.encoded_len() + envelope_len(envelope))
        }
        MessageBody::ConnInitiator { link_sig, envelope, .. }
        | MessageBody::ConnParticipant { link_sig, envelope, .. } => match plan.offload {
            Some(kind) => (kind, link_sig.encoded_len()),
            None => (ChannelKind::Sms, link_sig.encoded_len() + envelope_len(envelope)),
        },
        MessageBody::EpochEndTag { tag_sig, .. } => (ChannelKind::Sms, tag_sig.encoded_len()),
        MessageBody::CloudProbe { envelope, .. } => (ChannelKind::Sms, envelope_len(envelope)),
        MessageBody::CloudResponse { response_sig, envelope, .. } => {
            (ChannelKind::Sms, response_sig.encoded_len() + envelope_len(envelope))
        }
        MessageBody::TrustedLocOffer { envelope } => (ChannelKind::Bluetooth, envelope_len(envelope)),
        MessageBody::TrustedLocAck { challenge_sig, envelope } => {
            (ChannelKind::Bluetooth, challenge_sig.encoded_len() + envelope_len(envelope))
        }
        MessageBody::IdentityProof(_) => (ChannelKind::Data, 64),
    };
    ProtocolMessage {
        sender: sender.clone(),
        recipient: recipient.clone(),
        body,
        channel,
        sms_segments: sms_segments(sms_len),
    }
}

/// Effects surfaced to the host: ledger crediting flows through
/// `InteractionVerified`; `IncreaseRep` summarizes a completed epoch for
/// bookkeeping and must not be credited a second time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Effect {
    InteractionVerified { peer: PrincipalIdentity, record: InteractionRecord },
    IncreaseRep { peer: PrincipalIdentity, interactions: Vec<InteractionRecord> },
    EpochCompleted { peer: PrincipalIdentity, epoch_index: u32, exchanges: u32 },
    EpochAborted { peer: PrincipalIdentity, epoch_index: u32, reason: AbortReason },
    EndTagReceived { peer: PrincipalIdentity, epoch_index: u32 },
    AuditDrop { reason: AbortReason },
}

/// One step's output: messages to send and effects to apply.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepOutput {
    pub outbound: Vec<ProtocolMessage>,
    pub effects: Vec<Effect>,
}

impl StepOutput {
    fn none() -> Self {
        StepOutput::default()
    }

    pub fn aborted(&self) -> bool {
        self.effects.iter().any(|e| matches!(e, Effect::EpochAborted { .. }))
    }
}

/// Local identity material plus what is known about the peer.
#[derive(Debug, Clone)]
pub struct PeerContext {
    pub me: PrincipalIdentity,
    pub my_keys: KeyPair,
    pub peer: PrincipalIdentity,
    pub peer_key: PublicKey,
}

fn dialing1_payload(loc: &LocationReport, t: SimTime, me: &PrincipalIdentity, a: &Nonce) -> Vec<u8> {
    WireWriter::new()
        .field(&loc.wire_encoding())
        .u64(t.as_millis())
        .str(&me.user_id)
        .str(&me.device_id)
        .field(a.as_bytes())
        .finish()
}

fn dialing2_payload(
    loc: &LocationReport,
    t: SimTime,
    me: &PrincipalIdentity,
    b: &Nonce,
    a: &Nonce,
) -> Vec<u8> {
    WireWriter::new()
        .field(&loc.wire_encoding())
        .u64(t.as_millis())
        .str(&me.user_id)
        .str(&me.device_id)
        .field(b.as_bytes())
        .field(a.as_bytes())
        .finish()
}

fn conn_payload(loc: &LocationReport, t: SimTime, me: &PrincipalIdentity, link: &Signature) -> Vec<u8> {
    WireWriter::new()
        .field(&loc.wire_encoding())
        .u64(t.as_millis())
        .str(&me.user_id)
        .str(&me.device_id)
        .field(&link.to_bytes())
        .finish()
}

fn params_payload(b: &Nonce, a: &Nonce) -> Vec<u8> {
    WireWriter::new().field(b.as_bytes()).field(a.as_bytes()).finish()
}

fn end_tag_payload(epoch_index: u32, head: &Signature) -> Vec<u8> {
    WireWriter::new().u64(epoch_index as u64).field(&head.to_bytes()).finish()
}

fn parse_location(bytes: &[u8]) -> Option<LocationReport> {
    let mut r = WireReader::new(bytes);
    let x = r.f64().ok()?;
    let y = r.f64().ok()?;
    let t = r.u64().ok()?;
    let flag = r.field().ok()?;
    let trust = match flag {
        [0u8] => LocationTrust::Untrusted,
        [1u8] => {
            let user = String::from(r.str().ok()?);
            let device = String::from(r.str().ok()?);
            let endpoint_id = r.u64().ok()?;
            let key = PublicKey::from_bytes(r.field().ok()?.to_vec()).ok()?;
            let root_cert = signature_from_bytes(r.field().ok()?)?;
            let signature = signature_from_bytes(r.field().ok()?)?;
            let ttl = Duration::from_millis(r.u64().ok()?);
            let bound_flag = r.field().ok()?.first().copied()?;
            let bound = String::from(r.str().ok()?);
            LocationTrust::Trusted(TrustedStamp {
                issuer: PrincipalIdentity {
                    user_id: user,
                    device_id: device,
                    kind: PrincipalKind::TrustedLocationEndpoint,
                },
                endpoint_id,
                endpoint_key: key,
                root_cert,
                signature,
                ttl,
                bound_device: if bound_flag == 1 { Some(bound) } else { None },
            })
        }
        _ => return None,
    };
    Some(LocationReport { position: Position::new(x, y), time: SimTime(t), trust })
}

fn signature_from_bytes(bytes: &[u8]) -> Option<Signature> {
    let mut r = WireReader::new(bytes);
    let key_id = r.field().ok()?.to_vec();
    let digest = r.field().ok()?.to_vec();
    Some(Signature::from_parts(key_id, digest))
}

struct TuplePayload {
    location: LocationReport,
    time: SimTime,
    user_id: String,
    device_id: String,
    tail: Vec<Vec<u8>>,
}

fn parse_tuple(bytes: &[u8], tail_fields: usize) -> Option<TuplePayload> {
    let mut r = WireReader::new(bytes);
    let loc = parse_location(r.field().ok()?)?;
    let time = SimTime(r.u64().ok()?);
    let user = String::from(r.str().ok()?);
    let device = String::from(r.str().ok()?);
    let mut tail = Vec::with_capacity(tail_fields);
    for _ in 0..tail_fields {
        tail.push(r.field().ok()?.to_vec());
    }
    Some(TuplePayload { location: loc, time, user_id: user, device_id: device, tail })
}

/// One side of one epoch.
#[derive(Debug, Clone)]
pub struct EpochMachine {
    ctx: PeerContext,
    cfg: ProtocolConfig,
    pub role: Role,
    pub epoch_index: u32,
    pub phase: Phase,
    plan: ChannelPlan,
    my_param: Nonce,
    peer_param: Option<Nonce>,
    /// `S2` kept by the participant until the genesis is complete.
    dialing_s2: Option<Signature>,
    genesis: Option<ChainGenesis>,
    head_index: u32,
    head_sig: Option<Signature>,
    pub exchanges_done: u32,
    pub end_tag_sent: bool,
    pub end_tag_seen: bool,
    awaiting_reply: bool,
    interactions: Vec<InteractionRecord>,
    links: Vec<ChainLink>,
    last_peer_time: SimTime,
    last_inbound: Option<ProtocolMessage>,
    last_outbound: Option<ProtocolMessage>,
}

impl EpochMachine {
    /// Gate for starting a new epoch with a peer: the previous one must
    /// have completed and exchanged its end tag, or aborted.
    pub fn can_start_new(previous: Option<&EpochMachine>) -> Result<(), ProtocolError> {
        match previous {
            None => Ok(()),
            Some(m) => match m.phase {
                Phase::Aborted => Ok(()),
                Phase::Completed if m.end_tag_sent || m.end_tag_seen => Ok(()),
                _ => Err(ProtocolError::EpochStillOpen),
            },
        }
    }

    /// Initiator side: opens the dialing phase with a fresh parameter `a`.
    pub fn initiate(
        ctx: PeerContext,
        cfg: ProtocolConfig,
        plan: ChannelPlan,
        epoch_index: u32,
        now: SimTime,
        location: &LocationReport,
        rng: &mut SimRng,
    ) -> (EpochMachine, ProtocolMessage) {
        let a = Nonce::generate(rng, &cfg.security);
        let payload = dialing1_payload(location, now, &ctx.me, &a);
        let envelope = seal(&ctx.peer_key, &payload);
        let msg = finalize(&ctx.me, &ctx.peer, MessageBody::Dialing1 { envelope }, &plan);
        let machine = EpochMachine {
            ctx,
            cfg,
            role: Role::Initiator,
            epoch_index,
            phase: Phase::Dialing,
            plan,
            my_param: a,
            peer_param: None,
            dialing_s2: None,
            genesis: None,
            head_index: 0,
            head_sig: None,
            exchanges_done: 0,
            end_tag_sent: false,
            end_tag_seen: false,
            awaiting_reply: false,
            interactions: Vec::new(),
            links: Vec::new(),
            last_peer_time: SimTime::ZERO,
            last_inbound: None,
            last_outbound: Some(msg.clone()),
        };
        (machine, msg)
    }

    /// Participant side: admits a Dialing1 message and answers it.
    ///
    /// Returns no machine when the message is not a valid, fresh opening —
    /// the caller audits and drops.
    pub fn accept(
        ctx: PeerContext,
        cfg: ProtocolConfig,
        plan: ChannelPlan,
        epoch_index: u32,
        msg: &ProtocolMessage,
        now: SimTime,
        my_location: &LocationReport,
        rng: &mut SimRng,
    ) -> (Option<EpochMachine>, StepOutput) {
        let envelope = match &msg.body {
            MessageBody::Dialing1 { envelope } => envelope,
            _ => {
                return (
                    None,
                    StepOutput {
                        outbound: Vec::new(),
                        effects: alloc::vec![Effect::AuditDrop { reason: AbortReason::UnexpectedMessage }],
                    },
                )
            }
        };
        let audit = |reason: AbortReason| {
            (
                None,
                StepOutput { outbound: Vec::new(), effects: alloc::vec![Effect::AuditDrop { reason }] },
            )
        };
        let plaintext = match open(&ctx.my_keys.private_key, envelope) {
            Ok(p) => p,
            Err(_) => return audit(AbortReason::DecryptFailure),
        };
        let tuple = match parse_tuple(&plaintext, 1) {
            Some(t) => t,
            None => return audit(AbortReason::Malformed),
        };
        if tuple.user_id != ctx.peer.user_id || tuple.device_id != ctx.peer.device_id {
            return audit(AbortReason::IdentityMismatch);
        }
        // Replay guard: the sealed timestamp must be fresh.
        if now.saturating_sub(tuple.time) > cfg.freshness || tuple.time > now + cfg.freshness {
            return audit(AbortReason::StaleTimestamp);
        }
        if let LocationCheck::Invalid(reason) =
            check_location(&tuple.location, &cfg, tuple.time, &ctx.peer.device_id)
        {
            return audit(reason);
        }
        let a = Nonce::from_bytes(tuple.tail[0].clone());
        let b = Nonce::generate(rng, &cfg.security);
        let s2 = sign(&ctx.my_keys.private_key, a.as_bytes());
        let payload = dialing2_payload(my_location, now, &ctx.me, &b, &a);
        let reply_env = seal(&ctx.peer_key, &payload);
        let reply = finalize(
            &ctx.me,
            &ctx.peer,
            MessageBody::Dialing2 { param_sig: s2.clone(), envelope: reply_env },
            &plan,
        );
        let machine = EpochMachine {
            ctx,
            cfg,
            role: Role::Participant,
            epoch_index,
            phase: Phase::Dialing,
            plan,
            my_param: b,
            peer_param: Some(a),
            dialing_s2: Some(s2),
            genesis: None,
            head_index: 0,
            head_sig: None,
            exchanges_done: 0,
            end_tag_sent: false,
            end_tag_seen: false,
            awaiting_reply: false,
            interactions: Vec::new(),
            links: Vec::new(),
            last_peer_time: tuple.time,
            last_inbound: Some(msg.clone()),
            last_outbound: Some(reply.clone()),
        };
        (Some(machine), StepOutput { outbound: alloc::vec![reply], effects: Vec::new() })
    }

    fn abort_now(&mut self, reason: AbortReason) -> StepOutput {
        if matches!(self.phase, Phase::Aborted | Phase::Completed) {
            return StepOutput {
                outbound: Vec::new(),
                effects: alloc::vec![Effect::AuditDrop { reason }],
            };
        }
        self.phase = Phase::Aborted;
        StepOutput {
            outbound: Vec::new(),
            effects: alloc::vec![Effect::EpochAborted {
                peer: self.ctx.peer.clone(),
                epoch_index: self.epoch_index,
                reason,
            }],
        }
    }

    /// Host-driven abort (retransmissions exhausted, peer timeout, or a
    /// superseding fresh dialing attempt).
    pub fn abort(&mut self, reason: AbortReason) -> StepOutput {
        self.abort_now(reason)
    }

    /// Advances the machine on an inbound message.
    pub fn handle_message(
        &mut self,
        msg: &ProtocolMessage,
        now: SimTime,
        my_location: &LocationReport,
    ) -> StepOutput {
        if msg.recipient != self.ctx.me {
            return StepOutput {
                outbound: Vec::new(),
                effects: alloc::vec![Effect::AuditDrop { reason: AbortReason::UnexpectedMessage }],
            };
        }
        // Exact duplicate of the last applied inbound: retransmit our last
        // reply instead of re-walking the state machine.
        if self.last_inbound.as_ref() == Some(msg) {
            return StepOutput {
                outbound: self.last_outbound.clone().into_iter().collect(),
                effects: Vec::new(),
            };
        }
        match (self.role, &msg.body) {
            (Role::Initiator, MessageBody::Dialing2 { param_sig, envelope }) => {
                self.on_dialing2(msg, param_sig.clone(), envelope, now)
            }
            (Role::Participant, MessageBody::Dialing3 { chain_sig, envelope }) => {
                self.on_dialing3(msg, chain_sig.clone(), envelope)
            }
            (Role::Participant, MessageBody::ConnInitiator { index, link_sig, envelope }) => {
                self.on_conn(msg, *index, link_sig.clone(), envelope, now, Some(my_location))
            }
            (Role::Initiator, MessageBody::ConnParticipant { index, link_sig, envelope }) => {
                self.on_conn(msg, *index, link_sig.clone(), envelope, now, None)
            }
            (Role::Participant, MessageBody::EpochEndTag { epoch_index, tag_sig }) => {
                self.on_end_tag(*epoch_index, tag_sig)
            }
            _ => self.abort_now(AbortReason::UnexpectedMessage),
        }
    }

    fn on_dialing2(
        &mut self,
        msg: &ProtocolMessage,
        param_sig: Signature,
        envelope: &CipherEnvelope,
        now: SimTime,
    ) -> StepOutput {
        if self.phase != Phase::Dialing {
            return self.abort_now(AbortReason::UnexpectedMessage);
        }
        if !verify(&self.ctx.peer_key, self.my_param.as_bytes(), &param_sig).unwrap_or(false) {
            return self.abort_now(AbortReason::BadSignature);
        }
        let plaintext = match open(&self.ctx.my_keys.private_key, envelope) {
            Ok(p) => p,
            Err(_) => return self.abort_now(AbortReason::DecryptFailure),
        };
        let tuple = match parse_tuple(&plaintext, 2) {
            Some(t) => t,
            None => return self.abort_now(AbortReason::Malformed),
        };
        if tuple.user_id != self.ctx.peer.user_id || tuple.device_id != self.ctx.peer.device_id {
            return self.abort_now(AbortReason::IdentityMismatch);
        }
        if tuple.tail[1] != self.my_param.as_bytes() {
            return self.abort_now(AbortReason::ParamMismatch);
        }
        if now.saturating_sub(tuple.time) > self.cfg.freshness {
            return self.abort_now(AbortReason::StaleTimestamp);
        }
        if let LocationCheck::Invalid(reason) =
            check_location(&tuple.location, &self.cfg, tuple.time, &self.ctx.peer.device_id)
        {
            return self.abort_now(reason);
        }
        let b = Nonce::from_bytes(tuple.tail[0].clone());
        let s3 = sign(&self.ctx.my_keys.private_key, &params_payload(&b, &self.my_param));
        let reply_env = seal(&self.ctx.peer_key, b.as_bytes());
        self.genesis = Some(ChainGenesis { s2: param_sig, s3: s3.clone() });
        self.head_index = 3;
        self.head_sig = Some(s3.clone());
        self.peer_param = Some(b);
        self.phase = Phase::Connection;
        self.last_peer_time = tuple.time;
        let reply = finalize(
            &self.ctx.me,
            &self.ctx.peer,
            MessageBody::Dialing3 { chain_sig: s3, envelope: reply_env },
            &self.plan,
        );
        self.last_inbound = Some(msg.clone());
        self.last_outbound = Some(reply.clone());
        StepOutput { outbound: alloc::vec![reply], effects: Vec::new() }
    }

    fn on_dialing3(
        &mut self,
        msg: &ProtocolMessage,
        chain_sig: Signature,
        envelope: &CipherEnvelope,
    ) -> StepOutput {
        if self.phase != Phase::Dialing {
            return self.abort_now(AbortReason::UnexpectedMessage);
        }
        let a = match &self.peer_param {
            Some(a) => a.clone(),
            None => return self.abort_now(AbortReason::ParamMismatch),
        };
        if !verify(&self.ctx.peer_key, &params_payload(&self.my_param, &a), &chain_sig)
            .unwrap_or(false)
        {
            return self.abort_now(AbortReason::BadSignature);
        }
        let plaintext = match open(&self.ctx.my_keys.private_key, envelope) {
            Ok(p) => p,
            Err(_) => return self.abort_now(AbortReason::DecryptFailure),
        };
        if plaintext != self.my_param.as_bytes() {
            return self.abort_now(AbortReason::ParamMismatch);
        }
        let s2 = self.dialing_s2.clone().expect("participant stored S2");
        self.genesis = Some(ChainGenesis { s2, s3: chain_sig.clone() });
        self.head_index = 3;
        self.head_sig = Some(chain_sig);
        self.phase = Phase::Connection;
        self.last_inbound = Some(msg.clone());
        self.last_outbound = None;
        StepOutput::none()
    }

    /// Shared connection-phase link handler. The participant passes its
    /// own location to produce the echo link; the initiator passes none
    /// and counts the exchange on the verified reply.
    fn on_conn(
        &mut self,
        msg: &ProtocolMessage,
        index: u32,
        link_sig: Signature,
        envelope: &CipherEnvelope,
        now: SimTime,
        reply_location: Option<&LocationReport>,
    ) -> StepOutput {
        if self.phase != Phase::Connection {
            return self.abort_now(AbortReason::UnexpectedMessage);
        }
        if index != self.head_index + 1 {
            return self.abort_now(AbortReason::OutOfOrder);
        }
        let plaintext = match open(&self.ctx.my_keys.private_key, envelope) {
            Ok(p) => p,
            Err(_) => return self.abort_now(AbortReason::DecryptFailure),
        };
        let tuple = match parse_tuple(&plaintext, 1) {
            Some(t) => t,
            None => return self.abort_now(AbortReason::Malformed),
        };
        if tuple.user_id != self.ctx.peer.user_id || tuple.device_id != self.ctx.peer.device_id {
            return self.abort_now(AbortReason::IdentityMismatch);
        }
        if tuple.tail[0] != link_sig.to_bytes() {
            return self.abort_now(AbortReason::BadSignature);
        }
        if tuple.time <= self.last_peer_time {
            return self.abort_now(AbortReason::OutOfOrder);
        }
        if now.saturating_sub(tuple.time) > self.cfg.freshness {
            return self.abort_now(AbortReason::StaleTimestamp);
        }
        if let LocationCheck::Invalid(reason) =
            check_location(&tuple.location, &self.cfg, tuple.time, &self.ctx.peer.device_id)
        {
            return self.abort_now(reason);
        }
        // The peer's link must sign (peer_param ∥ previous link ∥ L ∥ t).
        let peer_param = match &self.peer_param {
            Some(p) => p.clone(),
            None => return self.abort_now(AbortReason::ParamMismatch),
        };
        let prev = self.head_sig.clone().expect("connection phase has a head");
        let expected_state = SignatureChainState {
            last_signature: prev,
            index: self.head_index,
            owner_param: peer_param,
        };
        let loc_bytes = tuple.location.wire_encoding();
        let verified = crate::crypto::chain_link_matches(
            &expected_state,
            &self.ctx.peer_key,
            &loc_bytes,
            tuple.time,
            &link_sig,
        );
        if !verified {
            return self.abort_now(AbortReason::BrokenChain);
        }
        // Accept the peer link.
        self.head_index = index;
        self.head_sig = Some(link_sig.clone());
        self.last_peer_time = tuple.time;
        self.links.push(ChainLink {
            signature: link_sig,
            location_encoding: loc_bytes,
            time: tuple.time,
            from_peer: true,
        });
        // Appendix-style asymmetry: a responder's self-declared location is
        // usable by the querier; an initiator's self-declaration is not
        // credible to the participant. Trusted stamps are credible either
        // way.
        let self_declared_credible = self.role == Role::Initiator;
        let record = InteractionRecord {
            position: tuple.location.position,
            time: tuple.time,
            observation: observe(&tuple.location, self_declared_credible),
        };
        self.interactions.push(record.clone());
        let mut effects = alloc::vec![Effect::InteractionVerified {
            peer: self.ctx.peer.clone(),
            record,
        }];
        let mut outbound = Vec::new();
        self.last_inbound = Some(msg.clone());

        match self.role {
            Role::Participant => {
                // Echo a link of our own and count the exchange.
                let my_location = reply_location.expect("participant replies with a location");
                let state = SignatureChainState {
                    last_signature: self.head_sig.clone().expect("head"),
                    index: self.head_index,
                    owner_param: self.my_param.clone(),
                };
                let (next, my_sig) = chain_extend(
                    &state,
                    &self.ctx.my_keys.private_key,
                    &my_location.wire_encoding(),
                    now,
                )
                .expect("chain state is well-formed");
                self.head_index = next.index;
                self.head_sig = Some(my_sig.clone());
                self.links.push(ChainLink {
                    signature: my_sig.clone(),
                    location_encoding: my_location.wire_encoding(),
                    time: now,
                    from_peer: false,
                });
                let payload = conn_payload(my_location, now, &self.ctx.me, &my_sig);
                let env = seal(&self.ctx.peer_key, &payload);
                let reply = finalize(
                    &self.ctx.me,
                    &self.ctx.peer,
                    MessageBody::ConnParticipant {
                        index: next.index,
                        link_sig: my_sig,
                        envelope: env,
                    },
                    &self.plan,
                );
                self.last_outbound = Some(reply.clone());
                outbound.push(reply);
                self.exchanges_done += 1;
                if self.exchanges_done == self.cfg.k {
                    let completion = self.complete_epoch(now).expect("k exchanges done");
                    outbound.extend(completion.outbound);
                    effects.extend(completion.effects);
                }
            }
            Role::Initiator => {
                self.awaiting_reply = false;
                self.last_outbound = None;
                self.exchanges_done += 1;
                if self.exchanges_done == self.cfg.k {
                    let completion = self.complete_epoch(now).expect("k exchanges done");
                    outbound.extend(completion.outbound);
                    effects.extend(completion.effects);
                }
            }
        }
        StepOutput { outbound, effects }
    }

    fn on_end_tag(&mut self, epoch_index: u32, tag_sig: &Signature) -> StepOutput {
        if self.phase != Phase::Completed {
            return self.abort_now(AbortReason::UnexpectedMessage);
        }
        let head = match &self.head_sig {
            Some(h) => h.clone(),
            None => return self.abort_now(AbortReason::BrokenChain),
        };
        let ok = epoch_index == self.epoch_index
            && verify(&self.ctx.peer_key, &end_tag_payload(epoch_index, &head), tag_sig)
                .unwrap_or(false);
        if !ok {
            return StepOutput {
                outbound: Vec::new(),
                effects: alloc::vec![Effect::AuditDrop { reason: AbortReason::BadSignature }],
            };
        }
        self.end_tag_seen = true;
        StepOutput {
            outbound: Vec::new(),
            effects: alloc::vec![Effect::EndTagReceived {
                peer: self.ctx.peer.clone(),
                epoch_index,
            }],
        }
    }

    /// Initiator slot action: extend the chain with a fresh link, or
    /// retransmit the outstanding one while a reply is pending.
    pub fn next_exchange(
        &mut self,
        now: SimTime,
        location: &LocationReport,
    ) -> Result<ProtocolMessage, ProtocolError> {
        if self.role != Role::Initiator || self.phase != Phase::Connection {
            return Err(ProtocolError::WrongState);
        }
        if self.awaiting_reply {
            return Ok(self.last_outbound.clone().expect("outstanding link cached"));
        }
        let state = SignatureChainState {
            last_signature: self.head_sig.clone().expect("connection phase has a head"),
            index: self.head_index,
            owner_param: self.my_param.clone(),
        };
        let (next, sig) = chain_extend(
            &state,
            &self.ctx.my_keys.private_key,
            &location.wire_encoding(),
            now,
        )
        .expect("chain state is well-formed");
        self.head_index = next.index;
        self.head_sig = Some(sig.clone());
        self.links.push(ChainLink {
            signature: sig.clone(),
            location_encoding: location.wire_encoding(),
            time: now,
            from_peer: false,
        });
        let payload = conn_payload(location, now, &self.ctx.me, &sig);
        let env = seal(&self.ctx.peer_key, &payload);
        let msg = finalize(
            &self.ctx.me,
            &self.ctx.peer,
            MessageBody::ConnInitiator { index: next.index, link_sig: sig, envelope: env },
            &self.plan,
        );
        self.awaiting_reply = true;
        self.last_outbound = Some(msg.clone());
        Ok(msg)
    }

    /// Closes a fully exchanged epoch: emits the reputation summary and,
    /// on the initiator side, the end tag.
    pub fn complete_epoch(&mut self, _now: SimTime) -> Result<StepOutput, ProtocolError> {
        if self.exchanges_done < self.cfg.k {
            return Err(ProtocolError::CompletionEarly);
        }
        if matches!(self.phase, Phase::Aborted) {
            return Err(ProtocolError::WrongState);
        }
        self.phase = Phase::Completed;
        let mut outbound = Vec::new();
        if self.role == Role::Initiator && !self.end_tag_sent {
            let head = self.head_sig.clone().expect("completed epoch has a head");
            let tag = sign(
                &self.ctx.my_keys.private_key,
                &end_tag_payload(self.epoch_index, &head),
            );
            let msg = finalize(
                &self.ctx.me,
                &self.ctx.peer,
                MessageBody::EpochEndTag { epoch_index: self.epoch_index, tag_sig: tag },
                &self.plan,
            );
            self.end_tag_sent = true;
            self.last_outbound = Some(msg.clone());
            outbound.push(msg);
        }
        let effects = alloc::vec![
            Effect::IncreaseRep {
                peer: self.ctx.peer.clone(),
                interactions: self.interactions.clone(),
            },
            Effect::EpochCompleted {
                peer: self.ctx.peer.clone(),
                epoch_index: self.epoch_index,
                exchanges: self.exchanges_done,
            },
        ];
        Ok(StepOutput { outbound, effects })
    }

    /// Chain transcript for verification oracles.
    pub fn transcript(&self) -> Option<(&ChainGenesis, &[ChainLink])> {
        self.genesis.as_ref().map(|g| (g, self.links.as_slice()))
    }

    pub fn peer_param(&self) -> Option<&Nonce> {
        self.peer_param.as_ref()
    }

    pub fn my_param(&self) -> &Nonce {
        &self.my_param
    }

    pub fn peer(&self) -> &PrincipalIdentity {
        &self.ctx.peer
    }

    pub fn last_outbound(&self) -> Option<&ProtocolMessage> {
        self.last_outbound.as_ref()
    }

    /// True while an initiator link is outstanding and unanswered.
    pub fn awaiting_reply(&self) -> bool {
        self.awaiting_reply
    }

    pub fn max_retries(&self) -> u32 {
        self.cfg.max_retries
    }

    pub fn retry_timeout(&self) -> Duration {
        self.cfg.retry_timeout
    }

    pub fn interactions(&self) -> &[InteractionRecord] {
        &self.interactions
    }
}

// ---------------------------------------------------------------------------
// Trusted-location synchronization
// ---------------------------------------------------------------------------

/// A deployed trusted-location endpoint with its root-issued certificate.
#[derive(Debug, Clone)]
pub struct EndpointDevice {
    pub endpoint_id: u64,
    pub identity: PrincipalIdentity,
    pub keys: KeyPair,
    pub root_cert: Signature,
    pub position: Position,
}

impl EndpointDevice {
    pub fn new(
        endpoint_id: u64,
        identity: PrincipalIdentity,
        keys: KeyPair,
        root_private: &crate::crypto::PrivateKey,
        position: Position,
    ) -> Self {
        let root_cert = sign(root_private, &cert_payload(&keys.public_key, &identity));
        EndpointDevice { endpoint_id, identity, keys, root_cert, position }
    }
}

/// Three-way proximity handshake with a trusted endpoint. On success the
/// device walks away with a TTL-bounded trusted location report.
pub fn trusted_location_handshake(
    device: &PeerContext,
    device_position: &Position,
    endpoint: &EndpointDevice,
    cfg: &ProtocolConfig,
    now: SimTime,
    rng: &mut SimRng,
) -> Result<(LocationReport, Vec<ProtocolMessage>), ProtocolError> {
    if device_position.distance(&endpoint.position) > cfg.proximity_radius_m {
        return Err(ProtocolError::ProximityViolated);
    }
    let root = cfg.trust_root.as_ref().ok_or(ProtocolError::UntrustedIssuer)?;
    let cert_ok = verify(
        root,
        &cert_payload(&endpoint.keys.public_key, &endpoint.identity),
        &endpoint.root_cert,
    )
    .unwrap_or(false);
    if !cert_ok {
        return Err(ProtocolError::UntrustedIssuer);
    }

    let bound = cfg.bind_device_id.then(|| device.me.device_id.clone());
    let stamp_sig = sign(
        &endpoint.keys.private_key,
        &stamp_payload(&endpoint.position, now, bound.as_deref()),
    );
    let stamp = TrustedStamp {
        issuer: endpoint.identity.clone(),
        endpoint_id: endpoint.endpoint_id,
        endpoint_key: endpoint.keys.public_key.clone(),
        root_cert: endpoint.root_cert.clone(),
        signature: stamp_sig,
        ttl: cfg.trusted_ttl,
        bound_device: bound,
    };
    let report = LocationReport {
        position: endpoint.position,
        time: now,
        trust: LocationTrust::Trusted(stamp),
    };

    // Challenge-response over the proximity channel, recorded for traces.
    let c1 = Nonce::generate(rng, &cfg.security);
    let c2 = Nonce::generate(rng, &cfg.security);
    let plan = ChannelPlan { offload: None };
    let offer_payload = WireWriter::new()
        .field(&report.wire_encoding())
        .str(&endpoint.identity.user_id)
        .str(&endpoint.identity.device_id)
        .field(c1.as_bytes())
        .finish();
    let offer = finalize(
        &endpoint.identity,
        &device.me,
        MessageBody::TrustedLocOffer { envelope: seal(&device.my_keys.public_key, &offer_payload) },
        &plan,
    );
    let ack_sig = sign(&device.my_keys.private_key, c1.as_bytes());
    let ack_payload = WireWriter::new().field(c2.as_bytes()).field(c1.as_bytes()).finish();
    let ack = finalize(
        &device.me,
        &endpoint.identity,
        MessageBody::TrustedLocAck {
            challenge_sig: ack_sig.clone(),
            envelope: seal(&endpoint.keys.public_key, &ack_payload),
        },
        &plan,
    );
    // The endpoint checks the challenge echo before releasing the stamp.
    if !verify(&device.my_keys.public_key, c1.as_bytes(), &ack_sig).unwrap_or(false) {
        return Err(ProtocolError::ProofRejected);
    }
    Ok((report, alloc::vec![offer, ack]))
}

// ---------------------------------------------------------------------------
// Cloud validation
// ---------------------------------------------------------------------------

/// Provider-side record of an outstanding probe.
#[derive(Debug, Clone, PartialEq)]
pub struct PendingProbe {
    pub probe_id: u64,
    pub challenge: Nonce,
    pub sent_at: SimTime,
}

/// Builds one random probe from a provider to a device.
pub fn make_cloud_probe(
    provider: &PeerContext,
    probe_id: u64,
    now: SimTime,
    cfg: &ProtocolConfig,
    rng: &mut SimRng,
) -> (PendingProbe, ProtocolMessage) {
    let challenge = Nonce::generate(rng, &cfg.security);
    let payload = WireWriter::new()
        .str(&provider.me.user_id)
        .str(&provider.me.device_id)
        .u64(now.as_millis())
        .field(challenge.as_bytes())
        .finish();
    let env = seal(&provider.peer_key, &payload);
    let msg = finalize(
        &provider.me,
        &provider.peer,
        MessageBody::CloudProbe { probe_id, envelope: env },
        &ChannelPlan { offload: None },
    );
    (PendingProbe { probe_id, challenge, sent_at: now }, msg)
}

/// Device side: answers a probe with its signed location tuple.
pub fn answer_cloud_probe(
    device: &PeerContext,
    msg: &ProtocolMessage,
    location: &LocationReport,
    now: SimTime,
) -> Result<ProtocolMessage, AbortReason> {
    let (probe_id, envelope) = match &msg.body {
        MessageBody::CloudProbe { probe_id, envelope } => (*probe_id, envelope),
        _ => return Err(AbortReason::UnexpectedMessage),
    };
    let plaintext = open(&device.my_keys.private_key, envelope).map_err(|_| AbortReason::DecryptFailure)?;
    let mut r = WireReader::new(&plaintext);
    let user = r.str().map_err(|_| AbortReason::Malformed)?;
    let dev = r.str().map_err(|_| AbortReason::Malformed)?;
    let _t = r.u64().map_err(|_| AbortReason::Malformed)?;
    let challenge = r.field().map_err(|_| AbortReason::Malformed)?;
    if user != device.peer.user_id || dev != device.peer.device_id {
        return Err(AbortReason::IdentityMismatch);
    }
    let response_payload = WireWriter::new()
        .field(&location.wire_encoding())
        .u64(now.as_millis())
        .str(&device.me.user_id)
        .str(&device.me.device_id)
        .field(challenge)
        .finish();
    let sig = sign(&device.my_keys.private_key, &response_payload);
    let env = seal(&device.peer_key, &response_payload);
    Ok(finalize(
        &device.me,
        &device.peer,
        MessageBody::CloudResponse { probe_id, response_sig: sig, envelope: env },
        &ChannelPlan { offload: None },
    ))
}

/// Provider side: validates a probe response and extracts the observation
/// that feeds its ledger.
pub fn validate_probe_response(
    provider: &PeerContext,
    pending: &PendingProbe,
    msg: &ProtocolMessage,
    cfg: &ProtocolConfig,
    now: SimTime,
) -> Result<InteractionRecord, AbortReason> {
    let (probe_id, response_sig, envelope) = match &msg.body {
        MessageBody::CloudResponse { probe_id, response_sig, envelope } => {
            (*probe_id, response_sig, envelope)
        }
        _ => return Err(AbortReason::UnexpectedMessage),
    };
    if probe_id != pending.probe_id {
        return Err(AbortReason::OutOfOrder);
    }
    let plaintext = open(&provider.my_keys.private_key, envelope).map_err(|_| AbortReason::DecryptFailure)?;
    if !verify(&provider.peer_key, &plaintext, response_sig).unwrap_or(false) {
        return Err(AbortReason::BadSignature);
    }
    let tuple = parse_tuple(&plaintext, 1).ok_or(AbortReason::Malformed)?;
    if tuple.user_id != provider.peer.user_id || tuple.device_id != provider.peer.device_id {
        return Err(AbortReason::IdentityMismatch);
    }
    if tuple.tail[0] != pending.challenge.as_bytes() {
        return Err(AbortReason::ParamMismatch);
    }
    if now.saturating_sub(tuple.time) > cfg.freshness {
        return Err(AbortReason::StaleTimestamp);
    }
    if let LocationCheck::Invalid(reason) =
        check_location(&tuple.location, cfg, tuple.time, &provider.peer.device_id)
    {
        return Err(reason);
    }
    // The provider queried at a random time: the device's answer is a
    // usable observation.
    Ok(InteractionRecord {
        position: tuple.location.position,
        time: tuple.time,
        observation: observe(&tuple.location, true),
    })
}

// ---------------------------------------------------------------------------
// Third-party identity proofs
// ---------------------------------------------------------------------------

/// Proof of identity issued by a third-party verifier after a successful
/// probe history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityProof {
    pub subject: PrincipalIdentity,
    pub verifier: PrincipalIdentity,
    pub issued_at: SimTime,
    pub signature: Signature,
}

fn proof_payload(subject: &PrincipalIdentity, issued_at: SimTime) -> Vec<u8> {
    WireWriter::new()
        .str(&subject.user_id)
        .str(&subject.device_id)
        .u64(issued_at.as_millis())
        .finish()
}

pub fn issue_identity_proof(
    verifier: &PrincipalIdentity,
    verifier_keys: &KeyPair,
    subject: &PrincipalIdentity,
    now: SimTime,
) -> IdentityProof {
    IdentityProof {
        subject: subject.clone(),
        verifier: verifier.clone(),
        issued_at: now,
        signature: sign(&verifier_keys.private_key, &proof_payload(subject, now)),
    }
}

/// Kind gate plus transcript check: only third-party verifiers may mint
/// proofs, and the signature must match the claimed subject and time.
pub fn validate_identity_proof(
    proof: &IdentityProof,
    verifier_key: &PublicKey,
) -> Result<(), ProtocolError> {
    if proof.verifier.kind != PrincipalKind::ThirdPartyVerifier {
        return Err(ProtocolError::ProofRejected);
    }
    let ok = verify(
        verifier_key,
        &proof_payload(&proof.subject, proof.issued_at),
        &proof.signature,
    )
    .unwrap_or(false);
    if !ok {
        return Err(ProtocolError::ProofRejected);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{chain_verify, generate_keypair};
    use crate::units::SECS_PER_HOUR;
    use alloc::vec;

    fn alice() -> PrincipalIdentity {
        PrincipalIdentity::mobile("alice", "d-0001")
    }

    fn bob() -> PrincipalIdentity {
        PrincipalIdentity::mobile("bob", "d-0002")
    }

    struct Pair {
        a: PeerContext,
        b: PeerContext,
        root: KeyPair,
    }

    fn pair() -> Pair {
        let ka = generate_keypair(100);
        let kb = generate_keypair(200);
        let root = generate_keypair(300);
        Pair {
            a: PeerContext {
                me: alice(),
                my_keys: ka.clone(),
                peer: bob(),
                peer_key: kb.public_key.clone(),
            },
            b: PeerContext {
                me: bob(),
                my_keys: kb,
                peer: alice(),
                peer_key: ka.public_key,
            },
            root,
        }
    }

    fn cfg_with_root(k: u32, root: &KeyPair) -> ProtocolConfig {
        ProtocolConfig {
            k,
            trust_root: Some(root.public_key.clone()),
            ..ProtocolConfig::default()
        }
    }

    fn plan() -> ChannelPlan {
        ChannelPlan { offload: None }
    }

    fn uloc(x: f64, t: SimTime) -> LocationReport {
        LocationReport::untrusted(Position::new(x, 0.0), t)
    }

    const HOP: Duration = Duration(8_000); // one message transit

    struct EpochRun {
        am: EpochMachine,
        bm: EpochMachine,
        a_effects: Vec<Effect>,
        b_effects: Vec<Effect>,
        messages: Vec<ProtocolMessage>,
    }

    /// Drives one honest epoch of `k` exchanges, hourly slots.
    fn run_epoch(k: u32, offload: Option<ChannelKind>) -> EpochRun {
        let p = pair();
        let cfg = cfg_with_root(k, &p.root);
        let plan = ChannelPlan { offload };
        let mut rng_a = SimRng::derive(1, "a", 0);
        let mut rng_b = SimRng::derive(1, "b", 0);
        let t0 = SimTime::from_hours(1);
        let mut messages = Vec::new();
        let mut a_effects = Vec::new();
        let mut b_effects = Vec::new();

        let (mut am, d1) =
            EpochMachine::initiate(p.a.clone(), cfg.clone(), plan, 1, t0, &uloc(10.0, t0), &mut rng_a);
        messages.push(d1.clone());
        let now = t0 + HOP;
        let (bm, out) =
            EpochMachine::accept(p.b.clone(), cfg.clone(), plan, 1, &d1, now, &uloc(20.0, now), &mut rng_b);
        let mut bm = bm.expect("dialing accepted");
        b_effects.extend(out.effects.clone());
        let d2 = out.outbound[0].clone();
        messages.push(d2.clone());

        let now = now + HOP;
        let out = am.handle_message(&d2, now, &uloc(10.0, now));
        a_effects.extend(out.effects.clone());
        let d3 = out.outbound[0].clone();
        messages.push(d3.clone());

        let now = now + HOP;
        let out = bm.handle_message(&d3, now, &uloc(20.0, now));
        b_effects.extend(out.effects.clone());
        assert!(out.outbound.is_empty());

        for i in 0..k {
            let slot = t0 + Duration::from_secs((i as u64 + 1) * SECS_PER_HOUR);
            let m = am.next_exchange(slot, &uloc(10.0 + i as f64, slot)).unwrap();
            messages.push(m.clone());
            let now = slot + HOP;
            let out = bm.handle_message(&m, now, &uloc(20.0 + i as f64, now));
            b_effects.extend(out.effects.clone());
            let mut tag_and_reply = out.outbound.clone();
            assert!(!tag_and_reply.is_empty(), "participant must reply at exchange {i}");
            let reply = tag_and_reply.remove(0);
            messages.push(reply.clone());
            let now = now + HOP;
            let out = am.handle_message(&reply, now, &uloc(10.0, now));
            a_effects.extend(out.effects.clone());
            for tag in out.outbound {
                messages.push(tag.clone());
                let out = bm.handle_message(&tag, now + HOP, &uloc(20.0, now + HOP));
                b_effects.extend(out.effects);
            }
        }
        EpochRun { am, bm, a_effects, b_effects, messages }
    }

    fn count_increase_rep(effects: &[Effect]) -> usize {
        effects.iter().filter(|e| matches!(e, Effect::IncreaseRep { .. })).count()
    }

    #[test]
    fn dialing1_seals_the_expected_tuple() {
        let p = pair();
        let cfg = cfg_with_root(24, &p.root);
        let mut rng = SimRng::derive(2, "a", 0);
        let t0 = SimTime::from_hours(2);
        let (am, d1) =
            EpochMachine::initiate(p.a.clone(), cfg, plan(), 1, t0, &uloc(5.0, t0), &mut rng);
        let env = match &d1.body {
            MessageBody::Dialing1 { envelope } => envelope,
            _ => panic!("wrong variant"),
        };
        let plaintext = open(&p.b.my_keys.private_key, env).unwrap();
        let tuple = parse_tuple(&plaintext, 1).unwrap();
        assert_eq!(tuple.user_id, "alice");
        assert_eq!(tuple.device_id, "d-0001");
        assert_eq!(tuple.time, t0);
        assert_eq!(tuple.tail[0], am.my_param().as_bytes());
        assert_eq!(d1.channel, ChannelKind::Sms);
        assert!(d1.sms_segments > 1, "128-byte nonce cannot fit one segment");
    }

    #[test]
    fn honest_dialing_establishes_both_params() {
        let run = run_epoch(1, None);
        assert_eq!(run.am.peer_param().unwrap(), run.bm.my_param());
        assert_eq!(run.bm.peer_param().unwrap(), run.am.my_param());
    }

    #[test]
    fn full_epoch_completes_with_one_increase_rep_each() {
        let run = run_epoch(3, None);
        assert_eq!(run.am.phase, Phase::Completed);
        assert_eq!(run.bm.phase, Phase::Completed);
        assert_eq!(run.am.exchanges_done, 3);
        assert_eq!(run.bm.exchanges_done, 3);
        assert_eq!(count_increase_rep(&run.a_effects), 1);
        assert_eq!(count_increase_rep(&run.b_effects), 1);
        let tags = run
            .messages
            .iter()
            .filter(|m| matches!(m.body, MessageBody::EpochEndTag { .. }))
            .count();
        assert_eq!(tags, 1, "completed epoch emits exactly one end tag");
        assert!(run.am.end_tag_sent);
        assert!(run.bm.end_tag_seen);
    }

    #[test]
    fn twenty_four_exchanges_complete_a_default_epoch() {
        let run = run_epoch(24, None);
        assert_eq!(run.am.exchanges_done, 24);
        assert_eq!(run.bm.phase, Phase::Completed);
        // The transcript chain verifies from the genesis on both sides.
        let (genesis, links) = run.bm.transcript().unwrap();
        assert_eq!(links.len(), 48);
        assert!(chain_verify(genesis, links, &pair().a.my_keys.public_key, run.bm.peer_param().unwrap()));
    }

    #[test]
    fn second_start_before_end_tag_is_refused() {
        let p = pair();
        let cfg = cfg_with_root(24, &p.root);
        let mut rng = SimRng::derive(3, "a", 0);
        let t0 = SimTime::from_hours(1);
        let (am, _) = EpochMachine::initiate(p.a, cfg, plan(), 1, t0, &uloc(1.0, t0), &mut rng);
        assert_eq!(
            EpochMachine::can_start_new(Some(&am)),
            Err(ProtocolError::EpochStillOpen)
        );
    }

    #[test]
    fn completed_epoch_with_tag_admits_the_next() {
        let run = run_epoch(2, None);
        assert!(EpochMachine::can_start_new(Some(&run.am)).is_ok());
        assert!(EpochMachine::can_start_new(Some(&run.bm)).is_ok());
        assert!(EpochMachine::can_start_new(None).is_ok());
    }

    #[test]
    fn aborted_epoch_admits_the_next() {
        let p = pair();
        let cfg = cfg_with_root(24, &p.root);
        let mut rng = SimRng::derive(4, "a", 0);
        let t0 = SimTime::from_hours(1);
        let (mut am, _) = EpochMachine::initiate(p.a, cfg, plan(), 1, t0, &uloc(1.0, t0), &mut rng);
        let out = am.abort(AbortReason::RetriesExhausted);
        assert!(out.aborted());
        assert!(EpochMachine::can_start_new(Some(&am)).is_ok());
    }

    #[test]
    fn aborted_epoch_emits_no_increase_rep() {
        let p = pair();
        let cfg = cfg_with_root(24, &p.root);
        let mut rng = SimRng::derive(5, "a", 0);
        let t0 = SimTime::from_hours(1);
        let (mut am, _) = EpochMachine::initiate(p.a, cfg, plan(), 1, t0, &uloc(1.0, t0), &mut rng);
        let out = am.abort(AbortReason::RetriesExhausted);
        assert_eq!(count_increase_rep(&out.effects), 0);
        assert_eq!(am.phase, Phase::Aborted);
        // Completion can no longer be forced.
        assert!(am.complete_epoch(t0).is_err());
    }

    #[test]
    fn early_completion_is_an_error() {
        let run = run_epoch(1, None);
        let p = pair();
        let cfg = cfg_with_root(24, &p.root);
        let mut rng = SimRng::derive(6, "a", 0);
        let t0 = SimTime::from_hours(1);
        let (mut am, _) = EpochMachine::initiate(p.a, cfg, plan(), 1, t0, &uloc(1.0, t0), &mut rng);
        assert_eq!(am.complete_epoch(t0), Err(ProtocolError::CompletionEarly));
        // But a finished machine reports its completion idempotently.
        assert_eq!(run.am.phase, Phase::Completed);
    }

    #[test]
    fn replayed_dialing1_is_rejected_as_stale() {
        let p = pair();
        let cfg = cfg_with_root(24, &p.root);
        let mut rng_a = SimRng::derive(7, "a", 0);
        let mut rng_b = SimRng::derive(7, "b", 0);
        let t0 = SimTime::from_hours(1);
        let (_, d1) =
            EpochMachine::initiate(p.a.clone(), cfg.clone(), plan(), 1, t0, &uloc(1.0, t0), &mut rng_a);
        // Replay an hour later: outside the freshness window.
        let later = t0 + Duration::from_hours(1);
        let (machine, out) =
            EpochMachine::accept(p.b, cfg, plan(), 2, &d1, later, &uloc(2.0, later), &mut rng_b);
        assert!(machine.is_none());
        assert_eq!(out.effects, vec![Effect::AuditDrop { reason: AbortReason::StaleTimestamp }]);
    }

    #[test]
    fn replayed_conn_link_from_old_epoch_aborts() {
        let first = run_epoch(2, None);
        let old_link = first
            .messages
            .iter()
            .find(|m| matches!(m.body, MessageBody::ConnInitiator { .. }))
            .unwrap()
            .clone();

        // Fresh epoch between the same parties.
        let p = pair();
        let cfg = cfg_with_root(24, &p.root);
        let mut rng_a = SimRng::derive(8, "a", 0);
        let mut rng_b = SimRng::derive(8, "b", 0);
        let t0 = SimTime::from_days(2);
        let (mut am, d1) =
            EpochMachine::initiate(p.a, cfg.clone(), plan(), 2, t0, &uloc(1.0, t0), &mut rng_a);
        let (bm, out) =
            EpochMachine::accept(p.b, cfg, plan(), 2, &d1, t0 + HOP, &uloc(2.0, t0 + HOP), &mut rng_b);
        let mut bm = bm.unwrap();
        let d2 = out.outbound[0].clone();
        let out = am.handle_message(&d2, t0 + HOP + HOP, &uloc(1.0, t0));
        let d3 = out.outbound[0].clone();
        bm.handle_message(&d3, t0 + Duration(24_000), &uloc(2.0, t0));
        assert_eq!(bm.phase, Phase::Connection);

        // Inject the recorded link from the previous epoch: its chain was
        // seeded with different random parameters.
        let out = bm.handle_message(&old_link, t0 + Duration(30_000), &uloc(2.0, t0));
        assert!(out.aborted(), "replay must abort: {:?}", out.effects);
        assert_eq!(bm.phase, Phase::Aborted);
    }

    #[test]
    fn tampered_envelope_aborts_with_decrypt_failure() {
        let p = pair();
        let cfg = cfg_with_root(24, &p.root);
        let mut rng_a = SimRng::derive(9, "a", 0);
        let mut rng_b = SimRng::derive(9, "b", 0);
        let t0 = SimTime::from_hours(1);
        let (mut am, d1) =
            EpochMachine::initiate(p.a, cfg.clone(), plan(), 1, t0, &uloc(1.0, t0), &mut rng_a);
        let (_, out) =
            EpochMachine::accept(p.b, cfg, plan(), 1, &d1, t0 + HOP, &uloc(2.0, t0 + HOP), &mut rng_b);
        let mut d2 = out.outbound[0].clone();
        if let MessageBody::Dialing2 { envelope, .. } = &mut d2.body {
            *envelope = envelope.tampered();
        }
        let out = am.handle_message(&d2, t0 + HOP + HOP, &uloc(1.0, t0));
        assert!(out.aborted());
        assert!(matches!(
            out.effects[0],
            Effect::EpochAborted { reason: AbortReason::DecryptFailure, .. }
        ));
    }

    #[test]
    fn duplicate_inbound_resends_the_cached_reply() {
        let p = pair();
        let cfg = cfg_with_root(24, &p.root);
        let mut rng_a = SimRng::derive(10, "a", 0);
        let mut rng_b = SimRng::derive(10, "b", 0);
        let t0 = SimTime::from_hours(1);
        let (mut am, d1) =
            EpochMachine::initiate(p.a, cfg.clone(), plan(), 1, t0, &uloc(1.0, t0), &mut rng_a);
        let (_, out) =
            EpochMachine::accept(p.b, cfg, plan(), 1, &d1, t0 + HOP, &uloc(2.0, t0 + HOP), &mut rng_b);
        let d2 = out.outbound[0].clone();
        let first = am.handle_message(&d2, t0 + Duration(16_000), &uloc(1.0, t0));
        let again = am.handle_message(&d2, t0 + Duration(24_000), &uloc(1.0, t0));
        assert_eq!(first.outbound, again.outbound);
        assert!(again.effects.is_empty());
        assert_eq!(am.phase, Phase::Connection);
    }

    #[test]
    fn unexpected_message_kind_aborts() {
        let p = pair();
        let cfg = cfg_with_root(24, &p.root);
        let mut rng = SimRng::derive(11, "a", 0);
        let t0 = SimTime::from_hours(1);
        let (mut am, d1) =
            EpochMachine::initiate(p.a, cfg, plan(), 1, t0, &uloc(1.0, t0), &mut rng);
        // An initiator never expects a Dialing1.
        let mut echo = d1.clone();
        echo.recipient = alice();
        echo.sender = bob();
        let out = am.handle_message(&echo, t0 + HOP, &uloc(1.0, t0));
        assert!(out.aborted());
    }

    #[test]
    fn trusted_handshake_yields_a_ttl_bounded_report() {
        let p = pair();
        let cfg = cfg_with_root(24, &p.root);
        let mut rng = SimRng::derive(12, "t", 0);
        let endpoint_identity = PrincipalIdentity {
            user_id: String::from("ep"),
            device_id: String::from("ep-7"),
            kind: PrincipalKind::TrustedLocationEndpoint,
        };
        let endpoint = EndpointDevice::new(
            7,
            endpoint_identity,
            generate_keypair(700),
            &p.root.private_key,
            Position::new(100.0, 100.0),
        );
        let now = SimTime::from_hours(3);
        let near = Position::new(110.0, 100.0);
        let (report, msgs) =
            trusted_location_handshake(&p.a, &near, &endpoint, &cfg, now, &mut rng).unwrap();
        assert!(report.is_trusted());
        assert_eq!(report.time, now);
        if let LocationTrust::Trusted(stamp) = &report.trust {
            assert_eq!(stamp.ttl, cfg.trusted_ttl);
            assert_eq!(stamp.endpoint_id, 7);
        }
        assert_eq!(msgs.len(), 2);

        // Out of range: refused.
        let far = Position::new(500.0, 100.0);
        assert_eq!(
            trusted_location_handshake(&p.a, &far, &endpoint, &cfg, now, &mut rng).unwrap_err(),
            ProtocolError::ProximityViolated
        );

        // Forged root certificate: refused.
        let rogue_root = generate_keypair(999);
        let forged = EndpointDevice::new(
            8,
            PrincipalIdentity {
                user_id: String::from("ep"),
                device_id: String::from("ep-8"),
                kind: PrincipalKind::TrustedLocationEndpoint,
            },
            generate_keypair(800),
            &rogue_root.private_key,
            Position::new(100.0, 100.0),
        );
        assert_eq!(
            trusted_location_handshake(&p.a, &near, &forged, &cfg, now, &mut rng).unwrap_err(),
            ProtocolError::UntrustedIssuer
        );
    }

    /// Runs a dialing phase and one initiator link carrying `report`,
    /// returning the participant's step output for that link.
    fn deliver_link_with_report(report: LocationReport, cfg: ProtocolConfig) -> StepOutput {
        let p = pair();
        let mut rng_a = SimRng::derive(13, "a", 0);
        let mut rng_b = SimRng::derive(13, "b", 0);
        let t0 = SimTime::from_hours(4);
        let (mut am, d1) =
            EpochMachine::initiate(p.a, cfg.clone(), plan(), 1, t0, &uloc(1.0, t0), &mut rng_a);
        let (bm, out) =
            EpochMachine::accept(p.b, cfg, plan(), 1, &d1, t0 + HOP, &uloc(2.0, t0 + HOP), &mut rng_b);
        let mut bm = bm.unwrap();
        let d2 = out.outbound[0].clone();
        let out = am.handle_message(&d2, t0 + Duration(16_000), &uloc(1.0, t0));
        let d3 = out.outbound[0].clone();
        bm.handle_message(&d3, t0 + Duration(24_000), &uloc(2.0, t0));
        let slot = t0 + Duration::from_hours(2);
        let link = am.next_exchange(slot, &report).unwrap();
        bm.handle_message(&link, slot + HOP, &uloc(2.0, slot))
    }

    #[test]
    fn stale_trusted_report_aborts_on_ttl() {
        let p = pair();
        let cfg = cfg_with_root(24, &p.root);
        let mut rng = SimRng::derive(14, "t", 0);
        let endpoint = EndpointDevice::new(
            9,
            PrincipalIdentity {
                user_id: String::from("ep"),
                device_id: String::from("ep-9"),
                kind: PrincipalKind::TrustedLocationEndpoint,
            },
            generate_keypair(900),
            &p.root.private_key,
            Position::new(100.0, 100.0),
        );
        // Stamp issued long before the exchange slot: TTL (1 h) expires.
        let issued = SimTime::from_hours(4);
        let (report, _) = trusted_location_handshake(
            &p.a,
            &Position::new(100.0, 100.0),
            &endpoint,
            &cfg,
            issued,
            &mut rng,
        )
        .unwrap();
        let out = deliver_link_with_report(report, cfg);
        assert!(out.aborted());
        assert!(matches!(
            out.effects[0],
            Effect::EpochAborted { reason: AbortReason::StaleTtl, .. }
        ));
    }

    #[test]
    fn fresh_trusted_report_is_credited_as_trusted_and_credible() {
        let p = pair();
        let cfg = cfg_with_root(24, &p.root);
        let mut rng = SimRng::derive(15, "t", 0);
        let endpoint = EndpointDevice::new(
            10,
            PrincipalIdentity {
                user_id: String::from("ep"),
                device_id: String::from("ep-10"),
                kind: PrincipalKind::TrustedLocationEndpoint,
            },
            generate_keypair(1000),
            &p.root.private_key,
            Position::new(100.0, 100.0),
        );
        // deliver_link_with_report dials at hour 4 and exchanges at hour 6;
        // stamp right at the slot so the TTL holds.
        let issued = SimTime::from_hours(6);
        let (report, _) = trusted_location_handshake(
            &p.a,
            &Position::new(100.0, 100.0),
            &endpoint,
            &cfg,
            issued,
            &mut rng,
        )
        .unwrap();
        let out = deliver_link_with_report(report, cfg);
        assert!(!out.aborted(), "fresh stamp must pass: {:?}", out.effects);
        let verified = out
            .effects
            .iter()
            .find_map(|e| match e {
                Effect::InteractionVerified { record, .. } => Some(record.clone()),
                _ => None,
            })
            .unwrap();
        assert_eq!(verified.observation.trust, ObservedTrust::Trusted { endpoint: 10 });
        assert!(verified.observation.credible);
    }

    #[test]
    fn initiator_self_declared_location_is_not_credible_to_participant() {
        let run = run_epoch(2, None);
        // Participant-side records (about the initiator's locations).
        let b_obs: Vec<_> = run
            .b_effects
            .iter()
            .filter_map(|e| match e {
                Effect::InteractionVerified { record, .. } => Some(record.observation),
                _ => None,
            })
            .collect();
        assert!(!b_obs.is_empty());
        assert!(b_obs.iter().all(|o| !o.credible), "initiator self-declarations are not credible");
        // Initiator-side records (about the responder's locations).
        let a_obs: Vec<_> = run
            .a_effects
            .iter()
            .filter_map(|e| match e {
                Effect::InteractionVerified { record, .. } => Some(record.observation),
                _ => None,
            })
            .collect();
        assert!(a_obs.iter().all(|o| o.credible), "responder locations are usable");
    }

    #[test]
    fn sms_only_plan_keeps_everything_on_sms() {
        let run = run_epoch(3, None);
        assert!(run.messages.iter().all(|m| m.channel == ChannelKind::Sms));
    }

    #[test]
    fn data_offload_reduces_sms_segments() {
        let sms_only: u32 = run_epoch(5, None).messages.iter().map(|m| m.sms_cost()).sum();
        let offloaded: u32 =
            run_epoch(5, Some(ChannelKind::Data)).messages.iter().map(|m| m.sms_cost()).sum();
        assert!(
            offloaded < sms_only,
            "offload plan must cost fewer SMS segments ({offloaded} vs {sms_only})"
        );
    }

    #[test]
    fn zero_sms_capacity_is_rejected() {
        let avail = ChannelAvailability { sms: false, data: true, bluetooth: true };
        assert_eq!(plan_channels(&avail).unwrap_err(), ProtocolError::NoSmsChannel);
        let sms_only = ChannelAvailability::default();
        assert_eq!(plan_channels(&sms_only).unwrap(), ChannelPlan { offload: None });
        let with_data = ChannelAvailability { sms: true, data: true, bluetooth: false };
        assert_eq!(
            plan_channels(&with_data).unwrap(),
            ChannelPlan { offload: Some(ChannelKind::Data) }
        );
    }

    #[test]
    fn cloud_probe_roundtrip_validates() {
        let device_keys = generate_keypair(50);
        let provider_keys = generate_keypair(60);
        let provider_id = PrincipalIdentity {
            user_id: String::from("cloud"),
            device_id: String::from("cloud-1"),
            kind: PrincipalKind::CloudProvider,
        };
        let provider = PeerContext {
            me: provider_id.clone(),
            my_keys: provider_keys.clone(),
            peer: alice(),
            peer_key: device_keys.public_key.clone(),
        };
        let device = PeerContext {
            me: alice(),
            my_keys: device_keys,
            peer: provider_id,
            peer_key: provider_keys.public_key,
        };
        let cfg = ProtocolConfig::default();
        let mut rng = SimRng::derive(16, "probe", 0);
        let now = SimTime::from_hours(9);
        let (pending, probe) = make_cloud_probe(&provider, 1, now, &cfg, &mut rng);
        assert_eq!(probe.channel, ChannelKind::Sms);
        let answer_at = now + HOP;
        let response =
            answer_cloud_probe(&device, &probe, &uloc(42.0, answer_at), answer_at).unwrap();
        let record =
            validate_probe_response(&provider, &pending, &response, &cfg, answer_at + HOP).unwrap();
        assert_eq!(record.observation.trust, ObservedTrust::Untrusted);
        assert!(record.observation.credible);

        // Tampered response is rejected.
        let mut bad = response.clone();
        if let MessageBody::CloudResponse { envelope, .. } = &mut bad.body {
            *envelope = envelope.tampered();
        }
        assert!(validate_probe_response(&provider, &pending, &bad, &cfg, answer_at + HOP).is_err());
    }

    #[test]
    fn identity_proof_kind_gate() {
        let verifier_keys = generate_keypair(70);
        let verifier = PrincipalIdentity {
            user_id: String::from("verisign"),
            device_id: String::from("v-1"),
            kind: PrincipalKind::ThirdPartyVerifier,
        };
        let now = SimTime::from_hours(1);
        let proof = issue_identity_proof(&verifier, &verifier_keys, &alice(), now);
        assert!(validate_identity_proof(&proof, &verifier_keys.public_key).is_ok());

        // A mobile principal cannot mint proofs.
        let mobile = PrincipalIdentity::mobile("mallory", "d-666");
        let fake = issue_identity_proof(&mobile, &verifier_keys, &alice(), now);
        assert_eq!(
            validate_identity_proof(&fake, &verifier_keys.public_key).unwrap_err(),
            ProtocolError::ProofRejected
        );

        // Altered subject is rejected.
        let mut altered = proof.clone();
        altered.subject = bob();
        assert!(validate_identity_proof(&altered, &verifier_keys.public_key).is_err());
    }
}
