//! Preinstalled-key secure mode and consistency-check replay protection.
//!
//! Secure frames are AES-128-CCM with an 8-byte tag. The nonce is built from
//! the claimed sender and the frame counter, so counters must never repeat for
//! a sender. Replay protection keeps, per peer, the highest counter seen; a
//! stale counter (or a DIO from a peer never verified) is held in quarantine
//! until a challenge/response round with that peer completes.

use std::collections::BTreeMap;

use aes::Aes128;
use ccm::aead::{Aead, KeyInit, Payload};
use ccm::consts::{U13, U8};
use ccm::Ccm;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::messages::{
    decode, encode, Cc, ControlKind, ControlMessage, SecureEnvelope, SecurityHeader, SecurityLevel,
    MAC_LEN,
};
use crate::types::{NodeId, SimTime};

type Cipher = Ccm<Aes128, U8, U13>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SecurityMode {
    /// Unsecured: base control messages only.
    Um,
    /// Preinstalled key, no replay protection.
    Psm,
    /// Preinstalled key with consistency checks.
    Psmrp,
}

impl SecurityMode {
    pub fn is_secure(self) -> bool {
        self != SecurityMode::Um
    }
}

impl std::str::FromStr for SecurityMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "um" => Ok(SecurityMode::Um),
            "psm" => Ok(SecurityMode::Psm),
            "psmrp" | "psm_rp" | "psm-rp" => Ok(SecurityMode::Psmrp),
            other => Err(format!("unknown security mode `{other}` (um|psm|psmrp)")),
        }
    }
}

/// 128-bit network-wide preinstalled key.
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct Key(pub [u8; 16]);

impl Key {
    pub fn from_hex(s: &str) -> Result<Self, String> {
        let bytes = hex::decode(s.trim()).map_err(|e| format!("key is not hex: {e}"))?;
        let arr: [u8; 16] = bytes
            .try_into()
            .map_err(|v: Vec<u8>| format!("key must be 16 bytes, got {}", v.len()))?;
        Ok(Key(arr))
    }
}

impl std::fmt::Debug for Key {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("Key(..)")
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SecurityError {
    #[error("node holds no preinstalled key")]
    NoKey,
    #[error("secure operation attempted in unsecured mode")]
    Unsecured,
    #[error("authentication failed")]
    AuthFailure,
    #[error("possible replay ({reason:?}); held for consistency check")]
    ReplaySuspect {
        reason: SuspectReason,
        message: Box<ControlMessage>,
        counter: u32,
    },
    #[error("a challenge to this peer is already pending")]
    ChallengeAlreadyPending,
    #[error("consistency-check response matches no pending challenge")]
    UnknownChallenge,
    #[error("consistency checks are disabled in this mode")]
    ReplayProtectionOff,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SuspectReason {
    /// Counter not above the highest one seen from the peer.
    StaleCounter,
    /// DIO from a peer that never answered a challenge.
    FirstContact,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PeerState {
    pub highest_seen: u32,
    pub seen_any: bool,
    pub verified: bool,
}

#[derive(Clone, Debug)]
pub struct Challenge {
    pub nonce: u32,
    pub issued_at: SimTime,
    /// Requests sent so far for this nonce.
    pub attempts: u32,
    pub quarantined: Option<ControlMessage>,
}

/// Result of handling a received consistency-check message.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CcOutcome {
    Respond(ControlMessage),
    Verified { released: Option<ControlMessage> },
}

#[derive(Debug)]
pub struct SecurityContext {
    pub id: NodeId,
    pub mode: SecurityMode,
    pub level: SecurityLevel,
    key: Option<Key>,
    cipher: Option<Cipher>,
    tx_counter: u32,
    peers: BTreeMap<NodeId, PeerState>,
    pending: BTreeMap<NodeId, Challenge>,
    nonce_rng: ChaCha8Rng,
    /// Wrap and unwrap attempts, charged as CPU energy.
    pub crypto_ops: u64,
}

impl SecurityContext {
    pub fn new(id: NodeId, mode: SecurityMode, key: Option<Key>, nonce_seed: u64) -> Self {
        let cipher = key.map(|k| Cipher::new_from_slice(&k.0).expect("16-byte key"));
        Self {
            id,
            mode,
            level: SecurityLevel::EncMac,
            key,
            cipher,
            tx_counter: 0,
            peers: BTreeMap::new(),
            pending: BTreeMap::new(),
            nonce_rng: ChaCha8Rng::seed_from_u64(nonce_seed),
            crypto_ops: 0,
        }
    }

    pub fn has_key(&self) -> bool {
        self.key.is_some()
    }

    pub fn tx_counter(&self) -> u32 {
        self.tx_counter
    }

    pub fn peer(&self, id: NodeId) -> Option<&PeerState> {
        self.peers.get(&id)
    }

    pub fn pending(&self, id: NodeId) -> Option<&Challenge> {
        self.pending.get(&id)
    }

    pub fn pending_peers(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.pending.keys().copied()
    }

    fn nonce(sender: NodeId, hdr: &SecurityHeader) -> [u8; 13] {
        let mut n = [0u8; 13];
        n[..2].copy_from_slice(&sender.0.to_le_bytes());
        n[2..6].copy_from_slice(&hdr.counter.to_le_bytes());
        n[6] = hdr.key_id;
        n[7] = hdr.level.code();
        n
    }

    /// Protects `msg` under the preinstalled key and advances the counter.
    pub fn secure_wrap(&mut self, msg: &ControlMessage) -> Result<SecureEnvelope, SecurityError> {
        let cipher = self.cipher.as_ref().ok_or(SecurityError::NoKey)?;
        if !self.mode.is_secure() {
            return Err(SecurityError::Unsecured);
        }
        let header = SecurityHeader {
            kind: msg.kind(),
            level: self.level,
            key_id: 0,
            counter: self.tx_counter,
        };
        let nonce = Self::nonce(self.id, &header);
        let hdr = header.to_bytes();
        let plain = encode(msg);
        let ciphertext = match self.level {
            SecurityLevel::EncMac => cipher
                .encrypt(
                    (&nonce).into(),
                    Payload {
                        msg: &plain,
                        aad: &hdr,
                    },
                )
                .expect("ccm encrypt"),
            SecurityLevel::MacOnly => {
                let mut aad = hdr.to_vec();
                aad.extend_from_slice(&plain);
                let tag = cipher
                    .encrypt(
                        (&nonce).into(),
                        Payload {
                            msg: &[],
                            aad: &aad,
                        },
                    )
                    .expect("ccm mac");
                let mut out = plain;
                out.extend_from_slice(&tag);
                out
            }
        };
        self.tx_counter = self.tx_counter.wrapping_add(1);
        self.crypto_ops += 1;
        Ok(SecureEnvelope { header, ciphertext })
    }

    /// Authenticates and decrypts without touching replay state.
    pub fn open(
        &mut self,
        env: &SecureEnvelope,
        claimed_sender: NodeId,
    ) -> Result<ControlMessage, SecurityError> {
        let cipher = self.cipher.as_ref().ok_or(SecurityError::NoKey)?;
        self.crypto_ops += 1;
        let nonce = Self::nonce(claimed_sender, &env.header);
        let hdr = env.header.to_bytes();
        let plain = match env.header.level {
            SecurityLevel::EncMac => cipher
                .decrypt(
                    (&nonce).into(),
                    Payload {
                        msg: &env.ciphertext,
                        aad: &hdr,
                    },
                )
                .map_err(|_| SecurityError::AuthFailure)?,
            SecurityLevel::MacOnly => {
                if env.ciphertext.len() < MAC_LEN {
                    return Err(SecurityError::AuthFailure);
                }
                let (plain, tag) = env.ciphertext.split_at(env.ciphertext.len() - MAC_LEN);
                let mut aad = hdr.to_vec();
                aad.extend_from_slice(plain);
                let mut ct = Vec::with_capacity(MAC_LEN);
                ct.extend_from_slice(tag);
                cipher
                    .decrypt(
                        (&nonce).into(),
                        Payload {
                            msg: &ct,
                            aad: &aad,
                        },
                    )
                    .map_err(|_| SecurityError::AuthFailure)?;
                plain.to_vec()
            }
        };
        let msg = decode(&plain).map_err(|_| SecurityError::AuthFailure)?;
        if msg.kind() != env.header.kind || msg.sender() != claimed_sender {
            return Err(SecurityError::AuthFailure);
        }
        Ok(msg)
    }

    /// Verifies an envelope and applies the mode's replay policy.
    ///
    /// Under `Psm` any authentic envelope is accepted, replayed or not. Under
    /// `Psmrp` a stale counter, or a DIO from an unverified peer, comes back as
    /// [`SecurityError::ReplaySuspect`] carrying the decoded message.
    pub fn secure_unwrap(
        &mut self,
        env: &SecureEnvelope,
        claimed_sender: NodeId,
    ) -> Result<ControlMessage, SecurityError> {
        if !self.mode.is_secure() {
            return Err(SecurityError::Unsecured);
        }
        let msg = self.open(env, claimed_sender)?;
        let counter = env.header.counter;
        let peer = self.peers.get(&claimed_sender).copied().unwrap_or_default();
        // CC freshness rests on the nonce, not the counter.
        if self.mode == SecurityMode::Psm || msg.kind() == ControlKind::Cc {
            self.record_counter(claimed_sender, counter);
            return Ok(msg);
        }
        if peer.seen_any && counter <= peer.highest_seen {
            return Err(SecurityError::ReplaySuspect {
                reason: SuspectReason::StaleCounter,
                message: Box::new(msg),
                counter,
            });
        }
        if !peer.verified && msg.kind() == ControlKind::Dio {
            return Err(SecurityError::ReplaySuspect {
                reason: SuspectReason::FirstContact,
                message: Box::new(msg),
                counter,
            });
        }
        self.record_counter(claimed_sender, counter);
        Ok(msg)
    }

    /// Accepts a first-contact message without a challenge (it cannot
    /// influence parent selection). Stale counters are never accepted here.
    pub fn accept_unverified(&mut self, peer: NodeId, counter: u32) -> bool {
        let st = self.peers.get(&peer).copied().unwrap_or_default();
        if st.seen_any && counter <= st.highest_seen {
            return false;
        }
        self.record_counter(peer, counter);
        true
    }

    fn record_counter(&mut self, peer: NodeId, counter: u32) {
        let st = self.peers.entry(peer).or_default();
        if !st.seen_any || counter > st.highest_seen {
            st.highest_seen = counter;
        }
        st.seen_any = true;
    }

    /// Opens a challenge to `peer` with a fresh nonce.
    pub fn issue_cc_request(
        &mut self,
        peer: NodeId,
        now: SimTime,
    ) -> Result<ControlMessage, SecurityError> {
        if self.mode != SecurityMode::Psmrp {
            return Err(SecurityError::ReplayProtectionOff);
        }
        if self.pending.contains_key(&peer) {
            return Err(SecurityError::ChallengeAlreadyPending);
        }
        let nonce: u32 = self.nonce_rng.random();
        self.pending.insert(
            peer,
            Challenge {
                nonce,
                issued_at: now,
                attempts: 1,
                quarantined: None,
            },
        );
        Ok(self.cc_request(nonce))
    }

    fn cc_request(&self, nonce: u32) -> ControlMessage {
        ControlMessage::Cc(Cc {
            sender: self.id,
            response: false,
            nonce,
            counter: 0,
        })
    }

    /// Holds `msg` until the pending challenge to `peer` resolves. Only the
    /// latest message is kept.
    pub fn quarantine(&mut self, peer: NodeId, msg: ControlMessage) {
        if let Some(ch) = self.pending.get_mut(&peer) {
            ch.quarantined = Some(msg);
        }
    }

    /// Re-sends the pending request if attempts remain, otherwise expires the
    /// challenge and returns `Err` with the discarded quarantined message.
    pub fn reissue(
        &mut self,
        peer: NodeId,
        max_attempts: u32,
    ) -> Result<ControlMessage, Option<ControlMessage>> {
        let Some(ch) = self.pending.get_mut(&peer) else {
            return Err(None);
        };
        if ch.attempts < max_attempts {
            ch.attempts += 1;
            let nonce = ch.nonce;
            Ok(self.cc_request(nonce))
        } else {
            let ch = self.pending.remove(&peer).expect("present");
            Err(ch.quarantined)
        }
    }

    /// Handles a received CC request or response from `from`.
    pub fn handle_cc(&mut self, cc: &Cc, from: NodeId) -> Result<CcOutcome, SecurityError> {
        if self.mode != SecurityMode::Psmrp {
            return Err(SecurityError::ReplayProtectionOff);
        }
        if !cc.response {
            return Ok(CcOutcome::Respond(ControlMessage::Cc(Cc {
                sender: self.id,
                response: true,
                nonce: cc.nonce,
                counter: self.tx_counter,
            })));
        }
        match self.pending.get(&from) {
            Some(ch) if ch.nonce == cc.nonce => {
                let ch = self.pending.remove(&from).expect("present");
                let st = self.peers.entry(from).or_default();
                st.verified = true;
                if !st.seen_any || cc.counter > st.highest_seen {
                    st.highest_seen = cc.counter;
                }
                st.seen_any = true;
                Ok(CcOutcome::Verified {
                    released: ch.quarantined,
                })
            }
            _ => Err(SecurityError::UnknownChallenge),
        }
    }
}
