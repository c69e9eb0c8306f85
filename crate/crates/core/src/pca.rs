//! Pseudonym CA: turns one ticket into one batch of pseudonyms and answers
//! resolution queries from the RA.
//!
//! Pseudonyms of a batch get abutting slots of length `τ_P` aligned to the
//! domain clock. Their serials form a hash chain seeded by `Rnd_v`, so one
//! serial plus `Rnd_v` identifies the whole batch.

use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};

use crate::cert::{CaIdentity, LongTermCertificate};
use crate::credential::{Csr, Pseudonym, SignedPseudonym, SignedTicket, Ticket};
use crate::crypto::{gen_rnd, iterated_hash, Digest, KeyPair, PublicKey, Serial, Signature};
use crate::derive::{self, ChainLink, Slot};
use crate::encoding::Fields;
use crate::envelope::{Clock, Envelope};
use crate::gateway::metrics::{LoadMeter, ServiceMetrics};
use crate::guard::{FailPolicy, GuardError, GuardKey, OnceClaim, SharedGuard, Space};
use crate::records::{PseudonymBatchRecord, RecordError, RecordStore};
use crate::service::{FaultInjector, Health};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[serde(tag = "error", content = "detail")]
pub enum PcaError {
    #[error("request timestamp outside the freshness window")]
    StaleTimestamp,
    #[error("ticket not signed by a trusted LTCA")]
    UntrustedLtca,
    #[error("ticket is bound to another PCA")]
    TargetMismatch,
    #[error("ticket expired")]
    ExpiredTicket,
    #[error("ticket already used")]
    TicketReused,
    #[error("CSR {0} failed proof of possession")]
    BadCsr(usize),
    #[error("batch of {n} exceeds the maximum of {max}")]
    BatchTooLarge { n: usize, max: usize },
    #[error("batch is empty")]
    EmptyBatch,
    #[error("batch does not fit the ticket window: {0}")]
    WindowMisaligned(String),
    #[error("sybil guard unavailable")]
    GuardUnavailable,
    #[error("no pseudonym with that serial")]
    NotFound,
    #[error("caller is not an authorized RA")]
    UnauthorizedCaller,
    #[error("record queue full, retry later")]
    Busy,
    #[error("internal error: {0}")]
    Internal(String),
    #[error("transport error: {0}")]
    Transport(String),
}

/// Sent over a server-authenticated channel: it carries no client
/// credential, only the ticket and fresh pseudonym keys.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PseudonymRequest {
    pub envelope: Envelope,
    /// Opens `ticket.target_hash` for this PCA.
    #[serde(with = "crate::b64::array")]
    pub rnd_n_tkt: [u8; 32],
    pub ticket: SignedTicket,
    pub csrs: Vec<Csr>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PseudonymResponse {
    pub envelope: Envelope,
    pub pseudonyms: Vec<SignedPseudonym>,
    #[serde(with = "crate::b64::array")]
    pub rnd_v: [u8; 32],
}

/// RA-signed request to open one pseudonym.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolveRequest {
    pub envelope: Envelope,
    pub pseudonym: SignedPseudonym,
    pub ra_certificate: LongTermCertificate,
    pub signature: Signature,
}

impl ResolveRequest {
    pub fn signed_payload(envelope: &Envelope, pseudonym: &SignedPseudonym) -> Vec<u8> {
        envelope
            .fields(Fields::new().str("resolve-request"))
            .bytes(pseudonym.encode())
            .finish_small()
    }

    pub fn new(
        envelope: Envelope,
        pseudonym: SignedPseudonym,
        ra_certificate: LongTermCertificate,
        ra_key: &KeyPair,
    ) -> Self {
        let signature = ra_key.sign(&Self::signed_payload(&envelope, &pseudonym));
        ResolveRequest {
            envelope,
            pseudonym,
            ra_certificate,
            signature,
        }
    }
}

/// `χ = (SN_P^i, tkt_σ, Rnd_IK_P^i)` signed by the PCA.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolveResponse {
    pub envelope: Envelope,
    pub serial: Digest,
    #[serde(with = "crate::b64")]
    pub ticket: Vec<u8>,
    pub rnd_ik_p: Digest,
    pub signature: Signature,
}

impl ResolveResponse {
    pub fn signed_payload(
        envelope: &Envelope,
        serial: &Digest,
        ticket: &[u8],
        rnd_ik_p: &Digest,
    ) -> Vec<u8> {
        envelope
            .fields(Fields::new().str("resolve-response"))
            .bytes(serial)
            .bytes(ticket)
            .bytes(rnd_ik_p)
            .finish_small()
    }

    pub fn sign(
        envelope: Envelope,
        serial: Digest,
        ticket: Vec<u8>,
        rnd_ik_p: Digest,
        key: &KeyPair,
    ) -> Self {
        let signature = key.sign(&Self::signed_payload(
            &envelope, &serial, &ticket, &rnd_ik_p,
        ));
        ResolveResponse {
            envelope,
            serial,
            ticket,
            rnd_ik_p,
            signature,
        }
    }

    pub fn verify(&self, pca: &PublicKey) -> bool {
        pca.verify(
            &Self::signed_payload(&self.envelope, &self.serial, &self.ticket, &self.rnd_ik_p),
            &self.signature,
        )
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PcaConfig {
    pub id: String,
    /// Pseudonym lifetime `τ_P`, seconds.
    pub tau_p: u64,
    pub max_batch: usize,
    pub freshness_window_s: u64,
    pub fail_policy: FailPolicy,
    pub workers: usize,
}

impl PcaConfig {
    pub fn new(id: &str, tau_p: u64) -> Self {
        PcaConfig {
            id: id.to_string(),
            tau_p,
            max_batch: 1000,
            freshness_window_s: 300,
            fail_policy: FailPolicy::FailClose,
            workers: 1,
        }
    }
}

/// Lifetime that spreads `n` pseudonyms evenly over `coverage_s` seconds.
pub fn lifetime_for(coverage_s: u64, n: u64) -> u64 {
    coverage_s / n.max(1)
}

#[derive(Debug)]
struct Shared {
    config: PcaConfig,
    identity: CaIdentity,
    key: KeyPair,
    rogue_key: KeyPair,
    guard: SharedGuard,
    records: Arc<RecordStore>,
    clock: Arc<dyn Clock>,
    ltcas: RwLock<Vec<CaIdentity>>,
    ras: RwLock<Vec<LongTermCertificate>>,
    faults: Arc<FaultInjector>,
    /// Stands in for an LTCA during the self-check; trusted nowhere else.
    dummy_ltca: KeyPair,
}

#[derive(Debug, Clone)]
pub struct Pca {
    shared: Arc<Shared>,
    meter: Arc<LoadMeter>,
}

impl Pca {
    pub fn new(
        config: PcaConfig,
        identity: CaIdentity,
        key: KeyPair,
        guard: SharedGuard,
        records: Arc<RecordStore>,
        clock: Arc<dyn Clock>,
    ) -> Self {
        assert!(config.tau_p > 0, "pseudonym lifetime must be positive");
        let meter = Arc::new(LoadMeter::new(config.workers));
        Pca {
            shared: Arc::new(Shared {
                config,
                identity,
                key,
                rogue_key: KeyPair::generate(),
                guard,
                records,
                clock,
                ltcas: RwLock::new(Vec::new()),
                ras: RwLock::new(Vec::new()),
                faults: Arc::new(FaultInjector::new()),
                dummy_ltca: KeyPair::generate(),
            }),
            meter,
        }
    }

    pub fn replica(&self) -> Self {
        Pca {
            shared: self.shared.clone(),
            meter: Arc::new(LoadMeter::new(self.shared.config.workers)),
        }
    }

    pub fn id(&self) -> &str {
        &self.shared.config.id
    }

    pub fn identity(&self) -> &CaIdentity {
        &self.shared.identity
    }

    pub fn config(&self) -> &PcaConfig {
        &self.shared.config
    }

    pub fn faults(&self) -> &FaultInjector {
        &self.shared.faults
    }

    pub fn records(&self) -> &Arc<RecordStore> {
        &self.shared.records
    }

    pub fn meter(&self) -> &Arc<LoadMeter> {
        &self.meter
    }

    pub fn trust_ltca(&self, ltca: CaIdentity) {
        self.shared.ltcas.write().unwrap().push(ltca);
    }

    /// Allows the holder of `ra` to resolve pseudonyms.
    pub fn authorize_ra(&self, ra: LongTermCertificate) {
        self.shared.ras.write().unwrap().push(ra);
    }

    fn signing_key(&self) -> &KeyPair {
        if self.shared.faults.corrupt_signing_key() {
            &self.shared.rogue_key
        } else {
            &self.shared.key
        }
    }

    /// Checks that need no guard access, in protocol order.
    fn precheck(&self, req: &PseudonymRequest, now_ms: u64) -> Result<(), PcaError> {
        let s = &self.shared;
        if !req.envelope.is_fresh(now_ms, s.config.freshness_window_s) {
            return Err(PcaError::StaleTimestamp);
        }
        let trusted = s
            .ltcas
            .read()
            .unwrap()
            .iter()
            .any(|l| req.ticket.verify(l.public_key()));
        if !trusted {
            return Err(PcaError::UntrustedLtca);
        }
        let t = &req.ticket.ticket;
        if derive::target_hash(&s.config.id, &req.rnd_n_tkt) != t.target_hash {
            return Err(PcaError::TargetMismatch);
        }
        if now_ms / 1000 > t.exp_tkt {
            return Err(PcaError::ExpiredTicket);
        }
        let n = req.csrs.len();
        if n == 0 {
            return Err(PcaError::EmptyBatch);
        }
        if n > s.config.max_batch {
            return Err(PcaError::BatchTooLarge {
                n,
                max: s.config.max_batch,
            });
        }
        let tau = s.config.tau_p;
        let start = derive::align_up(t.t_s, tau);
        let end = (n as u64)
            .checked_mul(tau)
            .and_then(|d| start.checked_add(d));
        match end {
            Some(end) if t.t_s < t.t_e && end <= t.t_e => Ok(()),
            _ => Err(PcaError::WindowMisaligned(format!(
                "{n} x {tau} s from {start} exceeds t_e {}",
                t.t_e
            ))),
        }
    }

    pub fn issue_pseudonyms(&self, req: &PseudonymRequest) -> Result<PseudonymResponse, PcaError> {
        let _busy = self.meter.track();
        let s = &self.shared;
        let now_ms = s.clock.now_ms();
        self.precheck(req, now_ms)?;
        let key = GuardKey::live(req.ticket.ticket.serial);
        let fail_open = match s.guard.claim_ticket_once(key) {
            Ok(OnceClaim::Granted) => false,
            Ok(OnceClaim::Denied) => return Err(PcaError::TicketReused),
            Err(GuardError::Unavailable(msg)) if s.config.fail_policy == FailPolicy::FailOpen => {
                log::warn!("guard unavailable, issuing fail-open: {msg}");
                true
            }
            Err(_) => return Err(PcaError::GuardUnavailable),
        };
        let result = self.finish_batch(req, fail_open);
        if result.is_err() && !fail_open {
            if let Err(e) = s.guard.revert_ticket_once(key) {
                log::error!("could not revert pseudonym claim for {key:?}: {e}");
            }
        }
        result
    }

    fn slots(&self, t_s: u64, n: usize) -> Vec<Slot> {
        let tau = self.shared.config.tau_p;
        let mut slots = derive::assign_slots(t_s, tau, n);
        if self.shared.faults.overlap_slots() {
            let start = derive::align_up(t_s, tau);
            for (i, slot) in slots.iter_mut().enumerate() {
                slot.t_s = start + i as u64 * tau / 2;
                slot.t_e = slot.t_s + tau;
            }
        }
        slots
    }

    fn chain(
        &self,
        ik_tkt: &Digest,
        keys: &[PublicKey],
        slots: &[Slot],
        rnd_v: &[u8; 32],
    ) -> Vec<ChainLink> {
        let faults = &self.shared.faults;
        let ik_tkt = if faults.fabricate_ik() {
            Digest(gen_rnd())
        } else {
            *ik_tkt
        };
        let mut chain = derive::derive_chain(&ik_tkt, keys, slots, rnd_v);
        if faults.break_chain() {
            let idx = usize::from(chain.len() > 1);
            if let Some(link) = chain.get_mut(idx) {
                link.serial.0[0] ^= 1;
            }
        }
        chain
    }

    fn finish_batch(
        &self,
        req: &PseudonymRequest,
        fail_open: bool,
    ) -> Result<PseudonymResponse, PcaError> {
        let s = &self.shared;
        if let Some(bad) = req.csrs.iter().position(|c| !c.verify()) {
            return Err(PcaError::BadCsr(bad));
        }
        let t = &req.ticket.ticket;
        let keys: Vec<PublicKey> = req.csrs.iter().map(|c| c.public_key.clone()).collect();
        let slots = self.slots(t.t_s, keys.len());
        let rnd_v = gen_rnd();
        let chain = self.chain(&t.ik_tkt, &keys, &slots, &rnd_v);
        if s.faults.take_post_grant_failure() {
            return Err(PcaError::Internal("injected failure".into()));
        }
        let signer = self.signing_key();
        let pseudonyms: Vec<SignedPseudonym> = keys
            .into_iter()
            .zip(&slots)
            .zip(&chain)
            .map(|((public_key, slot), link)| {
                Pseudonym {
                    serial: link.serial,
                    public_key,
                    ik_p: link.ik_p,
                    t_s: slot.t_s,
                    t_e: slot.t_e,
                    issuer_id: s.config.id.clone(),
                }
                .sign(signer)
            })
            .collect();
        let now_ms = s.clock.now_ms();
        s.records
            .append_batch_record(PseudonymBatchRecord {
                sn_tkt: t.serial,
                rnd_v,
                serials: chain.iter().map(|l| l.serial).collect(),
                ticket: req.ticket.encode(),
                issued_at: now_ms / 1000,
                fail_open,
            })
            .map_err(|e| match e {
                RecordError::QueueFull => PcaError::Busy,
                e => PcaError::Internal(e.to_string()),
            })?;
        Ok(PseudonymResponse {
            envelope: req.envelope.reply(now_ms),
            pseudonyms,
            rnd_v,
        })
    }

    pub fn resolve_pseudonym(&self, req: &ResolveRequest) -> Result<ResolveResponse, PcaError> {
        let _busy = self.meter.track();
        let s = &self.shared;
        let now_ms = s.clock.now_ms();
        let authorized = s.ras.read().unwrap().contains(&req.ra_certificate)
            && req.ra_certificate.is_valid_at(now_ms / 1000)
            && req.ra_certificate.subject_public_key.verify(
                &ResolveRequest::signed_payload(&req.envelope, &req.pseudonym),
                &req.signature,
            );
        if !authorized {
            return Err(PcaError::UnauthorizedCaller);
        }
        if !req.envelope.is_fresh(now_ms, s.config.freshness_window_s) {
            return Err(PcaError::StaleTimestamp);
        }
        let serial = req.pseudonym.pseudonym.serial;
        let hit = s
            .records
            .lookup_by_pseudonym_serial(&serial)
            .map_err(|_| PcaError::NotFound)?;
        let rnd_ik_p =
            iterated_hash(&hit.batch.rnd_v, hit.index as u32).expect("indices are 1-based");
        Ok(ResolveResponse::sign(
            req.envelope.reply(now_ms),
            serial,
            hit.batch.ticket.clone(),
            rnd_ik_p,
            self.signing_key(),
        ))
    }

    /// Issues two dummy pseudonyms against a ticket from an internal dummy
    /// LTCA key, checks them, and throws them away.
    pub fn health_selfcheck(&self) -> Health {
        let health = self.selfcheck_inner();
        self.meter.set_healthy(health.is_healthy());
        health
    }

    fn selfcheck_inner(&self) -> Health {
        let s = &self.shared;
        let now = s.clock.now_s();
        let tau = s.config.tau_p;
        let rnd_tkt = gen_rnd();
        let ticket = Ticket {
            serial: Serial::random(),
            target_hash: derive::target_hash(&s.config.id, &rnd_tkt),
            ik_tkt: Digest(gen_rnd()),
            t_s: now,
            t_e: derive::align_up(now, tau) + 2 * tau,
            exp_tkt: derive::align_up(now, tau) + 2 * tau,
        }
        .sign(&s.dummy_ltca);
        if !ticket.verify(s.dummy_ltca.public())
            || derive::target_hash(&s.config.id, &rnd_tkt) != ticket.ticket.target_hash
        {
            return Health::unhealthy("ticket");
        }
        let key = GuardKey::new(Space::SelfCheck, ticket.ticket.serial);
        let claimed = match s.guard.claim_ticket_once(key) {
            Ok(OnceClaim::Granted) => true,
            Ok(OnceClaim::Denied) => return Health::unhealthy("guard"),
            Err(_) if s.config.fail_policy == FailPolicy::FailOpen => false,
            Err(_) => return Health::unhealthy("guard"),
        };
        let health = self.selfcheck_issue(&ticket.ticket);
        if claimed && s.guard.revert_ticket_once(key).is_err() {
            return Health::unhealthy("revert");
        }
        health
    }

    fn selfcheck_issue(&self, ticket: &Ticket) -> Health {
        let s = &self.shared;
        let vehicle_keys = [KeyPair::generate(), KeyPair::generate()];
        let csrs: Vec<Csr> = vehicle_keys.iter().map(Csr::new).collect();
        if !csrs.iter().all(Csr::verify) {
            return Health::unhealthy("csr");
        }
        let keys: Vec<PublicKey> = csrs.into_iter().map(|c| c.public_key).collect();
        let slots = self.slots(ticket.t_s, keys.len());
        let aligned = slots.windows(2).all(|w| w[0].t_e == w[1].t_s)
            && slots.iter().all(|s| s.t_s % self.shared.config.tau_p == 0);
        if !aligned {
            return Health::unhealthy("slots");
        }
        let rnd_v = gen_rnd();
        let chain = self.chain(&ticket.ik_tkt, &keys, &slots, &rnd_v);
        let reference = derive::derive_chain(&ticket.ik_tkt, &keys, &slots, &rnd_v);
        if chain != reference {
            return Health::unhealthy("chain");
        }
        let link = &chain[0];
        let signed = Pseudonym {
            serial: link.serial,
            public_key: keys[0].clone(),
            ik_p: link.ik_p,
            t_s: slots[0].t_s,
            t_e: slots[0].t_e,
            issuer_id: s.config.id.clone(),
        }
        .sign(self.signing_key());
        if !signed.verify(s.identity.public_key()) {
            return Health::unhealthy("sign");
        }
        Health::Healthy
    }

    pub fn metrics(&self) -> ServiceMetrics {
        self.meter.snapshot()
    }
}
