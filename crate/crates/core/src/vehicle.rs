//! On-board unit side of the protocols: ticket requests, CSR generation,
//! batch acquisition and verification, and refill decisions.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::cert::{CaIdentity, LongTermCertificate, TrustStore};
use crate::credential::{Csr, SignedPseudonym, SignedTicket};
use crate::crypto::{gen_rnd, keypair_serde, KeyPair, PublicKey};
use crate::derive;
use crate::envelope::{Clock, Envelope};
use crate::ltca::{ForeignTicketRequest, LtcaError, RegistrationRequest, TicketRequest};
use crate::pca::{PcaError, PseudonymRequest, PseudonymResponse};
use crate::ra::ValidationRequest;
use crate::transport::{LtcaApi, PcaApi};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ClientError {
    #[error("vehicle is not registered")]
    NotRegistered,
    #[error("invalid window [{0}, {1})")]
    InvalidWindow(u64, u64),
    #[error("LTCA: {0}")]
    Ltca(#[from] LtcaError),
    #[error("PCA: {0}")]
    Pca(#[from] PcaError),
    #[error("provider misbehavior: {0}")]
    ProviderMisbehavior(String),
    #[error("batch overlaps pseudonyms already in the pool")]
    PoolOverlap,
    #[error("no pseudonym valid at {0}")]
    NoValidPseudonym(u64),
    #[error("state file: {0}")]
    State(String),
}

fn misbehavior(msg: impl Into<String>) -> ClientError {
    ClientError::ProviderMisbehavior(msg.into())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoolEntry {
    pub pseudonym: SignedPseudonym,
    #[serde(with = "keypair_serde")]
    pub key: KeyPair,
}

/// A ticket plus the secrets the vehicle keeps for it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeldTicket {
    pub ticket: SignedTicket,
    /// Identifier of the CA the ticket is bound to.
    pub target_id: String,
    /// Opens `ticket.target_hash` for the target.
    #[serde(with = "crate::b64::array")]
    pub rnd_tkt: [u8; 32],
    #[serde(with = "crate::b64::array")]
    pub rnd_ik_tkt: [u8; 32],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VehicleState {
    #[serde(with = "keypair_serde")]
    pub key: KeyPair,
    pub ltc: Option<LongTermCertificate>,
    pub home_ltca: CaIdentity,
    pub trust: TrustStore,
    pub pool: Vec<PoolEntry>,
    pub tickets: Vec<HeldTicket>,
}

/// The PCA a batch is requested from, as published by discovery.
#[derive(Debug, Clone, Copy)]
pub struct PcaTarget<'a> {
    pub identity: &'a CaIdentity,
    pub tau_p: u64,
}

pub struct Vehicle {
    pub state: VehicleState,
    clock: Arc<dyn Clock>,
    /// Refill when coverage drops below this; defaults to `2 * τ_P`.
    pub low_water_s: Option<u64>,
}

impl std::fmt::Debug for Vehicle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Vehicle")
            .field("registered", &self.state.ltc.is_some())
            .field("pool", &self.state.pool.len())
            .finish()
    }
}

impl Vehicle {
    pub fn new(home_ltca: CaIdentity, trust: TrustStore, clock: Arc<dyn Clock>) -> Self {
        Self::from_state(
            VehicleState {
                key: KeyPair::generate(),
                ltc: None,
                home_ltca,
                trust,
                pool: Vec::new(),
                tickets: Vec::new(),
            },
            clock,
        )
    }

    pub fn from_state(state: VehicleState, clock: Arc<dyn Clock>) -> Self {
        Vehicle {
            state,
            clock,
            low_water_s: None,
        }
    }

    pub fn load(path: impl AsRef<Path>, clock: Arc<dyn Clock>) -> Result<Self, ClientError> {
        let bytes = std::fs::read(path).map_err(|e| ClientError::State(e.to_string()))?;
        let state =
            serde_json::from_slice(&bytes).map_err(|e| ClientError::State(e.to_string()))?;
        Ok(Self::from_state(state, clock))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ClientError> {
        let bytes = serde_json::to_vec_pretty(&self.state)
            .map_err(|e| ClientError::State(e.to_string()))?;
        std::fs::write(path, bytes).map_err(|e| ClientError::State(e.to_string()))
    }

    pub fn public_key(&self) -> &PublicKey {
        self.state.key.public()
    }

    pub fn ltc(&self) -> Option<&LongTermCertificate> {
        self.state.ltc.as_ref()
    }

    pub fn pool(&self) -> &[PoolEntry] {
        &self.state.pool
    }

    pub fn register(
        &mut self,
        ltca: &dyn LtcaApi,
        validity: Option<(u64, u64)>,
    ) -> Result<&LongTermCertificate, ClientError> {
        let (valid_from, valid_to) = validity.unwrap_or((0, 0));
        let ltc = ltca.register(&RegistrationRequest {
            public_key: self.public_key().clone(),
            valid_from,
            valid_to,
        })?;
        if !ltc.verify_signature(self.state.home_ltca.public_key())
            || &ltc.subject_public_key != self.public_key()
        {
            return Err(misbehavior("LTC does not verify or names another key"));
        }
        Ok(self.state.ltc.insert(ltc))
    }

    /// Builds a signed ticket request bound to `target_ca_id` without
    /// revealing it; returns the opening random as well.
    pub fn build_ticket_request(
        &self,
        target_ca_id: &str,
        t_s: u64,
        t_e: u64,
    ) -> Result<(TicketRequest, [u8; 32]), ClientError> {
        if t_s >= t_e {
            return Err(ClientError::InvalidWindow(t_s, t_e));
        }
        let ltc = self.state.ltc.clone().ok_or(ClientError::NotRegistered)?;
        let rnd_tkt = gen_rnd();
        let req = TicketRequest::new(
            Envelope::new_request(self.clock.now_ms()),
            derive::target_hash(target_ca_id, &rnd_tkt),
            t_s,
            t_e,
            ltc,
            &self.state.key,
        );
        Ok((req, rnd_tkt))
    }

    /// Obtains a ticket for `target_ca_id` from the home LTCA and verifies
    /// everything the vehicle can check about it.
    pub fn request_ticket(
        &mut self,
        ltca: &dyn LtcaApi,
        target_ca_id: &str,
        t_s: u64,
        t_e: u64,
    ) -> Result<HeldTicket, ClientError> {
        let (req, rnd_tkt) = self.build_ticket_request(target_ca_id, t_s, t_e)?;
        let res = ltca.issue_ticket(&req)?;
        let t = &res.ticket.ticket;
        if !res.envelope.answers(&req.envelope) {
            return Err(misbehavior("ticket response nonce mismatch"));
        }
        if !res.ticket.verify(self.state.home_ltca.public_key()) {
            return Err(misbehavior("ticket signature"));
        }
        let ik = derive::ticket_ik(&req.ltc.encode(), t_s, t_e, &res.rnd_ik_tkt);
        if t.target_hash != req.target_hash
            || t.t_s != t_s
            || t.t_e != t_e
            || t.ik_tkt != ik
            || t.exp_tkt < t_e
        {
            return Err(misbehavior("ticket fields differ from the request"));
        }
        let held = HeldTicket {
            ticket: res.ticket,
            target_id: target_ca_id.to_string(),
            rnd_tkt,
            rnd_ik_tkt: res.rnd_ik_tkt,
        };
        self.state.tickets.push(held.clone());
        Ok(held)
    }

    /// Builds `n` CSRs, requests a batch with `ticket`, verifies it and adds
    /// it to the pool.
    pub fn acquire_pseudonyms(
        &mut self,
        pca: &dyn PcaApi,
        target: PcaTarget<'_>,
        ticket: &HeldTicket,
        n: usize,
    ) -> Result<Vec<SignedPseudonym>, ClientError> {
        let keys: Vec<KeyPair> = (0..n).map(|_| KeyPair::generate()).collect();
        let req = PseudonymRequest {
            envelope: Envelope::new_request(self.clock.now_ms()),
            rnd_n_tkt: ticket.rnd_tkt,
            ticket: ticket.ticket.clone(),
            csrs: keys.iter().map(Csr::new).collect(),
        };
        let res = pca.issue_pseudonyms(&req)?;
        self.state.tickets.retain(|t| t.ticket != ticket.ticket);
        if !res.envelope.answers(&req.envelope) {
            return Err(misbehavior("pseudonym response nonce mismatch"));
        }
        verify_batch(&res, &req, target).map_err(misbehavior)?;
        let overlaps = res.pseudonyms.iter().any(|new| {
            self.state.pool.iter().any(|old| {
                let (a, b) = (&new.pseudonym, &old.pseudonym.pseudonym);
                a.t_s < b.t_e && b.t_s < a.t_e
            })
        });
        if overlaps {
            return Err(ClientError::PoolOverlap);
        }
        self.state.pool.extend(
            res.pseudonyms
                .iter()
                .cloned()
                .zip(keys)
                .map(|(pseudonym, key)| PoolEntry { pseudonym, key }),
        );
        self.state.pool.sort_by_key(|e| e.pseudonym.pseudonym.t_s);
        Ok(res.pseudonyms)
    }

    /// Foreign-domain acquisition: a foreign ticket from the home LTCA, a
    /// native ticket for the foreign PCA from the foreign LTCA, then the batch.
    #[allow(clippy::too_many_arguments)]
    pub fn acquire_foreign(
        &mut self,
        home_ltca: &dyn LtcaApi,
        foreign_ltca: &dyn LtcaApi,
        foreign_ltca_identity: &CaIdentity,
        pca: &dyn PcaApi,
        target: PcaTarget<'_>,
        t_s: u64,
        t_e: u64,
        n: usize,
    ) -> Result<Vec<SignedPseudonym>, ClientError> {
        let ftkt = self.request_ticket(home_ltca, &foreign_ltca_identity.id, t_s, t_e)?;
        self.state.tickets.retain(|t| t.ticket != ftkt.ticket);
        let rnd_tkt = gen_rnd();
        let req = ForeignTicketRequest {
            envelope: Envelope::new_request(self.clock.now_ms()),
            target_hash: derive::target_hash(&target.identity.id, &rnd_tkt),
            t_s,
            t_e,
            foreign_ticket: ftkt.ticket.clone(),
            rnd_ftkt: ftkt.rnd_tkt,
        };
        let res = foreign_ltca.issue_foreign_ticket(&req)?;
        let t = &res.ticket.ticket;
        if !res.envelope.answers(&req.envelope)
            || !res.ticket.verify(foreign_ltca_identity.public_key())
        {
            return Err(misbehavior("foreign LTCA response"));
        }
        let ik = derive::ticket_ik(&ftkt.ticket.encode(), t_s, t_e, &res.rnd_ik_tkt);
        if t.target_hash != req.target_hash || t.t_s != t_s || t.t_e != t_e || t.ik_tkt != ik {
            return Err(misbehavior("native ticket fields differ from the request"));
        }
        let ntkt = HeldTicket {
            ticket: res.ticket,
            target_id: target.identity.id.clone(),
            rnd_tkt,
            rnd_ik_tkt: res.rnd_ik_tkt,
        };
        self.acquire_pseudonyms(pca, target, &ntkt, n)
    }

    /// Seconds of pseudonym coverage left from `now`.
    pub fn coverage(&self, now: u64) -> u64 {
        coverage(&self.state.pool, now)
    }

    pub fn refill_needed(&self, now: u64, trip_remaining: u64, tau_p: u64) -> bool {
        refill_needed(
            &self.state.pool,
            now,
            trip_remaining,
            self.low_water_s.unwrap_or(2 * tau_p),
        )
    }

    pub fn current(&self, now: u64) -> Option<&PoolEntry> {
        self.state
            .pool
            .iter()
            .find(|e| e.pseudonym.pseudonym.is_valid_at(now))
    }

    /// Drops pseudonyms that expired before `now`.
    pub fn prune(&mut self, now: u64) -> usize {
        let before = self.state.pool.len();
        self.state.pool.retain(|e| e.pseudonym.pseudonym.t_e > now);
        before - self.state.pool.len()
    }

    /// Reports `suspicious` to the RA, signed with the current pseudonym.
    pub fn report(&self, suspicious: SignedPseudonym) -> Result<ValidationRequest, ClientError> {
        let now_ms = self.clock.now_ms();
        let me = self
            .current(now_ms / 1000)
            .ok_or(ClientError::NoValidPseudonym(now_ms / 1000))?;
        Ok(ValidationRequest::new(
            Envelope::new_request(now_ms),
            suspicious,
            me.pseudonym.clone(),
            &me.key,
        ))
    }
}

/// Checks a batch response against its request: signatures, one pseudonym
/// per CSR in order, aligned abutting slots inside the ticket window, and
/// the full identifiable-key and serial chain.
pub fn verify_batch(
    res: &PseudonymResponse,
    req: &PseudonymRequest,
    target: PcaTarget<'_>,
) -> Result<(), String> {
    let n = req.csrs.len();
    if res.pseudonyms.len() != n {
        return Err(format!(
            "asked for {n} pseudonyms, got {}",
            res.pseudonyms.len()
        ));
    }
    let t = &req.ticket.ticket;
    let tau = target.tau_p;
    let keys: Vec<PublicKey> = req.csrs.iter().map(|c| c.public_key.clone()).collect();
    let slots = derive::assign_slots(t.t_s, tau, n);
    let chain = derive::derive_chain(&t.ik_tkt, &keys, &slots, &res.rnd_v);
    for (i, ((sp, slot), link)) in res.pseudonyms.iter().zip(&slots).zip(&chain).enumerate() {
        let p = &sp.pseudonym;
        if !sp.verify(target.identity.public_key()) || p.issuer_id != target.identity.id {
            return Err(format!("pseudonym {i}: bad signature or issuer"));
        }
        if p.public_key != keys[i] {
            return Err(format!("pseudonym {i}: key does not match CSR"));
        }
        if (p.t_s, p.t_e) != (slot.t_s, slot.t_e) || p.t_e > t.t_e {
            return Err(format!(
                "pseudonym {i}: slot [{}, {}) not aligned, abutting and inside the ticket",
                p.t_s, p.t_e
            ));
        }
        if p.ik_p != link.ik_p {
            return Err(format!(
                "pseudonym {i}: identifiable key does not recompute"
            ));
        }
        if p.serial != link.serial {
            return Err(format!("pseudonym {i}: serial chain broken"));
        }
    }
    Ok(())
}

/// Seconds of validity left in `pool` from `now` on.
pub fn coverage(pool: &[PoolEntry], now: u64) -> u64 {
    pool.iter()
        .map(|e| &e.pseudonym.pseudonym)
        .filter(|p| p.t_e > now)
        .map(|p| p.t_e - p.t_s.max(now))
        .sum()
}

/// True when coverage is below both the remaining trip and the low-water mark.
pub fn refill_needed(pool: &[PoolEntry], now: u64, trip_remaining: u64, low_water_s: u64) -> bool {
    coverage(pool, now) < trip_remaining.max(low_water_s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::credential::Pseudonym;
    use crate::crypto::Digest;

    fn entry(t_s: u64, t_e: u64) -> PoolEntry {
        let key = KeyPair::generate();
        PoolEntry {
            pseudonym: Pseudonym {
                serial: Digest([0; 32]),
                public_key: key.public().clone(),
                ik_p: Digest([0; 32]),
                t_s,
                t_e,
                issuer_id: "pca".into(),
            }
            .sign(&key),
            key,
        }
    }

    #[test]
    fn refill_rules() {
        assert!(refill_needed(&[], 0, 0, 1));
        let two_hours = vec![entry(0, 3600), entry(3600, 7200)];
        assert!(!refill_needed(&two_hours, 0, 3600, 600));
        let ten_minutes = vec![entry(0, 600)];
        assert!(refill_needed(&ten_minutes, 0, 0, 900));
    }

    #[test]
    fn coverage_counts_only_the_future() {
        let pool = vec![entry(0, 300), entry(300, 600), entry(600, 900)];
        assert_eq!(coverage(&pool, 0), 900);
        assert_eq!(coverage(&pool, 450), 450);
        assert_eq!(coverage(&pool, 900), 0);
    }
}
