//! Identity records, identity→key bindings, conflicting-key detection and
//! revocation broadcast.
//!
//! A binding store is one observer's view of which public key belongs to
//! which identity. Registering a second, different key for an identity that
//! already holds an active binding is the conflicting-key event: both keys
//! are marked conflicted and the identity stays unauthenticatable until an
//! explicit administrative reset, regardless of any reputation it earned.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::crypto::PublicKey;
use crate::units::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PrincipalKind {
    Mobile,
    CloudProvider,
    TrustedLocationEndpoint,
    ThirdPartyVerifier,
}

/// A participant: user id plus unique device id, with an immutable kind.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PrincipalIdentity {
    pub user_id: String,
    pub device_id: String,
    pub kind: PrincipalKind,
}

impl PrincipalIdentity {
    pub fn mobile(user_id: &str, device_id: &str) -> Self {
        PrincipalIdentity {
            user_id: String::from(user_id),
            device_id: String::from(device_id),
            kind: PrincipalKind::Mobile,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BindingStatus {
    Active,
    Revoked,
    Conflicted,
}

/// An identity bound to a public key, as held by one observer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyBinding {
    pub identity: PrincipalIdentity,
    pub public_key: PublicKey,
    pub status: BindingStatus,
    pub established_at: SimTime,
}

/// Two different keys claimed for the same identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConflictRecord {
    pub identity: PrincipalIdentity,
    pub key_a: PublicKey,
    pub key_b: PublicKey,
    pub detected_at: SimTime,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum RegisterOutcome {
    Bound(KeyBinding),
    /// Re-registration of the identical key; nothing changed.
    Unchanged,
    Conflict(ConflictRecord),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum RevocationEvent {
    /// Deliver a revocation notice to one peer that holds reputation for
    /// the identity.
    Notify {
        peer: PrincipalIdentity,
        identity: PrincipalIdentity,
        at: SimTime,
    },
    /// Revocation requested for a binding that is not active.
    AlreadyInactive { identity: PrincipalIdentity },
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum IdentityError {
    #[error("no binding exists for this identity")]
    UnknownIdentity,
    #[error("identity is conflicted and locked until administrative reset")]
    ConflictLocked,
}

/// Single-writer store of identity→key bindings.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct BindingStore {
    bindings: Vec<KeyBinding>,
    conflicts: Vec<ConflictRecord>,
}

impl BindingStore {
    pub fn new() -> Self {
        BindingStore::default()
    }

    pub fn get(&self, identity: &PrincipalIdentity) -> Option<&KeyBinding> {
        self.bindings.iter().find(|b| &b.identity == identity)
    }

    pub fn status(&self, identity: &PrincipalIdentity) -> Option<BindingStatus> {
        self.get(identity).map(|b| b.status)
    }

    pub fn conflicts(&self) -> &[ConflictRecord] {
        &self.conflicts
    }

    /// Registers `public_key` for `identity`.
    ///
    /// First registration creates an active binding. Re-registering the
    /// identical key is idempotent. A different key against an active
    /// binding produces a conflict record and poisons the binding. A
    /// conflicted identity rejects all further registrations.
    pub fn register_binding(
        &mut self,
        identity: &PrincipalIdentity,
        public_key: &PublicKey,
        now: SimTime,
    ) -> Result<RegisterOutcome, IdentityError> {
        if let Some(pos) = self.bindings.iter().position(|b| &b.identity == identity) {
            let existing = &mut self.bindings[pos];
            return match existing.status {
                BindingStatus::Conflicted => Err(IdentityError::ConflictLocked),
                BindingStatus::Active | BindingStatus::Revoked
                    if existing.public_key == *public_key =>
                {
                    Ok(RegisterOutcome::Unchanged)
                }
                BindingStatus::Active => {
                    let record = ConflictRecord {
                        identity: identity.clone(),
                        key_a: existing.public_key.clone(),
                        key_b: public_key.clone(),
                        detected_at: now,
                    };
                    existing.status = BindingStatus::Conflicted;
                    self.conflicts.push(record.clone());
                    Ok(RegisterOutcome::Conflict(record))
                }
                BindingStatus::Revoked => {
                    // A revoked identity may re-register with a fresh key.
                    existing.public_key = public_key.clone();
                    existing.status = BindingStatus::Active;
                    existing.established_at = now;
                    Ok(RegisterOutcome::Bound(existing.clone()))
                }
            };
        }
        let binding = KeyBinding {
            identity: identity.clone(),
            public_key: public_key.clone(),
            status: BindingStatus::Active,
            established_at: now,
        };
        self.bindings.push(binding.clone());
        Ok(RegisterOutcome::Bound(binding))
    }

    /// Revokes the active binding for `identity` and returns one
    /// notification per peer in `reputation_holders`.
    pub fn revoke_key(
        &mut self,
        identity: &PrincipalIdentity,
        reputation_holders: &[PrincipalIdentity],
        now: SimTime,
    ) -> Result<Vec<RevocationEvent>, IdentityError> {
        let binding = self
            .bindings
            .iter_mut()
            .find(|b| &b.identity == identity)
            .ok_or(IdentityError::UnknownIdentity)?;
        if binding.status != BindingStatus::Active {
            return Ok(alloc::vec![RevocationEvent::AlreadyInactive {
                identity: identity.clone(),
            }]);
        }
        binding.status = BindingStatus::Revoked;
        Ok(reputation_holders
            .iter()
            .map(|peer| RevocationEvent::Notify {
                peer: peer.clone(),
                identity: identity.clone(),
                at: now,
            })
            .collect())
    }

    /// Administrative reset of a conflicted identity; the only way back.
    pub fn admin_reset(&mut self, identity: &PrincipalIdentity) -> Result<(), IdentityError> {
        let pos = self
            .bindings
            .iter()
            .position(|b| &b.identity == identity)
            .ok_or(IdentityError::UnknownIdentity)?;
        self.bindings.remove(pos);
        Ok(())
    }
}
