//! Long-term CA: vehicle registration and ticket issuance.
//!
//! A ticket authorizes one pseudonym batch from the PCA whose identifier is
//! hidden behind `target_hash`. The LTCA never sees that identifier. Every
//! ticket is bound to its holder only through the one-way `ik_tkt`, and the
//! Sybil guard keeps tickets of one vehicle from overlapping in time.

use std::collections::HashSet;
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};

use crate::cert::{CaIdentity, LongTermCertificate};
use crate::credential::{SignedTicket, Ticket};
use crate::crypto::{gen_rnd, Digest, KeyPair, PublicKey, Serial, Signature};
use crate::derive;
use crate::encoding::Fields;
use crate::envelope::{Clock, Envelope};
use crate::gateway::metrics::{LoadMeter, ServiceMetrics};
use crate::guard::{
    FailPolicy, GuardError, GuardKey, IntervalClaim, OnceClaim, SharedGuard, Space,
};
use crate::records::{RecordError, RecordStore, RegistrationRecord, TicketRecord};
use crate::service::{FaultInjector, Health};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[serde(tag = "error", content = "detail")]
pub enum LtcaError {
    #[error("request timestamp outside the freshness window")]
    StaleTimestamp,
    #[error("request signature does not verify")]
    BadSignature,
    #[error("long-term certificate unknown, expired or revoked")]
    UnknownOrExpiredLtc,
    #[error("invalid ticket window: {0}")]
    InvalidWindow(String),
    #[error("an overlapping ticket was already issued")]
    SybilDenied,
    #[error("sybil guard unavailable")]
    GuardUnavailable,
    #[error("foreign ticket issuer is not trusted")]
    UntrustedIssuer,
    #[error("foreign ticket already used")]
    ReusedForeignTicket,
    #[error("foreign ticket is not addressed to this LTCA")]
    TargetMismatch,
    #[error("foreign ticket expired")]
    ExpiredTicket,
    #[error("public key already registered")]
    DuplicateRegistration,
    #[error("malformed public key")]
    BadKey,
    #[error("record queue full, retry later")]
    Busy,
    #[error("internal error: {0}")]
    Internal(String),
    #[error("transport error: {0}")]
    Transport(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegistrationRequest {
    pub public_key: PublicKey,
    pub valid_from: u64,
    pub valid_to: u64,
}

/// Ticket request signed with the vehicle's long-term key.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TicketRequest {
    pub envelope: Envelope,
    pub target_hash: Digest,
    pub t_s: u64,
    pub t_e: u64,
    pub ltc: LongTermCertificate,
    pub signature: Signature,
}

impl TicketRequest {
    pub fn signed_payload(
        envelope: &Envelope,
        target_hash: &Digest,
        t_s: u64,
        t_e: u64,
    ) -> Vec<u8> {
        envelope
            .fields(Fields::new().str("ticket-request"))
            .bytes(target_hash)
            .u64(t_s)
            .u64(t_e)
            .finish_small()
    }

    pub fn new(
        envelope: Envelope,
        target_hash: Digest,
        t_s: u64,
        t_e: u64,
        ltc: LongTermCertificate,
        key: &KeyPair,
    ) -> Self {
        let signature = key.sign(&Self::signed_payload(&envelope, &target_hash, t_s, t_e));
        TicketRequest {
            envelope,
            target_hash,
            t_s,
            t_e,
            ltc,
            signature,
        }
    }

    pub fn verify_signature(&self) -> bool {
        let payload = Self::signed_payload(&self.envelope, &self.target_hash, self.t_s, self.t_e);
        self.ltc
            .subject_public_key
            .verify(&payload, &self.signature)
    }
}

/// Request for a native ticket, authenticated by a foreign ticket from the
/// requester's home LTCA instead of an LTC.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForeignTicketRequest {
    pub envelope: Envelope,
    pub target_hash: Digest,
    pub t_s: u64,
    pub t_e: u64,
    pub foreign_ticket: SignedTicket,
    /// Opens `foreign_ticket.target_hash` for this LTCA.
    #[serde(with = "crate::b64::array")]
    pub rnd_ftkt: [u8; 32],
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TicketResponse {
    pub envelope: Envelope,
    pub ticket: SignedTicket,
    #[serde(with = "crate::b64::array")]
    pub rnd_ik_tkt: [u8; 32],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LtcaConfig {
    pub id: String,
    /// Allowed `|t_now - clock|`, seconds.
    pub freshness_window_s: u64,
    /// `exp_tkt = t_e + grace_s`.
    pub grace_s: u64,
    /// Longest `t_e - t_s` a single ticket may cover.
    pub max_coverage_s: u64,
    pub fail_policy: FailPolicy,
    /// Validity given to newly registered LTCs when the request leaves it
    /// to the LTCA (`valid_to == 0`).
    pub ltc_lifetime_s: u64,
    pub workers: usize,
}

impl LtcaConfig {
    pub fn new(id: &str) -> Self {
        LtcaConfig {
            id: id.to_string(),
            freshness_window_s: 300,
            grace_s: 0,
            max_coverage_s: 7 * 24 * 3600,
            fail_policy: FailPolicy::FailClose,
            ltc_lifetime_s: 3 * 365 * 24 * 3600,
            workers: 1,
        }
    }
}

#[derive(Debug)]
struct Shared {
    config: LtcaConfig,
    identity: CaIdentity,
    key: KeyPair,
    /// Stand-in used while the signing-key fault is active.
    rogue_key: KeyPair,
    guard: SharedGuard,
    records: Arc<RecordStore>,
    clock: Arc<dyn Clock>,
    /// Home LTCAs whose foreign tickets are accepted.
    peers: RwLock<Vec<CaIdentity>>,
    revoked: RwLock<HashSet<Serial>>,
    registration: Mutex<()>,
    faults: Arc<FaultInjector>,
    /// Reserved credentials for the self-check.
    dummy_vehicle: KeyPair,
}

/// One LTCA replica. Clones share everything; [`Ltca::replica`] shares keys,
/// guard and records but gets its own load meter.
#[derive(Debug, Clone)]
pub struct Ltca {
    shared: Arc<Shared>,
    meter: Arc<LoadMeter>,
}

impl Ltca {
    pub fn new(
        config: LtcaConfig,
        identity: CaIdentity,
        key: KeyPair,
        guard: SharedGuard,
        records: Arc<RecordStore>,
        clock: Arc<dyn Clock>,
    ) -> Self {
        let meter = Arc::new(LoadMeter::new(config.workers));
        Ltca {
            shared: Arc::new(Shared {
                config,
                identity,
                key,
                rogue_key: KeyPair::generate(),
                guard,
                records,
                clock,
                peers: RwLock::new(Vec::new()),
                revoked: RwLock::new(HashSet::new()),
                registration: Mutex::new(()),
                faults: Arc::new(FaultInjector::new()),
                dummy_vehicle: KeyPair::generate(),
            }),
            meter,
        }
    }

    pub fn replica(&self) -> Self {
        Ltca {
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

    pub fn config(&self) -> &LtcaConfig {
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

    /// Accepts foreign tickets issued by `peer`.
    pub fn trust_peer(&self, peer: CaIdentity) {
        self.shared.peers.write().unwrap().push(peer);
    }

    pub fn revoke(&self, sn_ltc: Serial) {
        self.shared.revoked.write().unwrap().insert(sn_ltc);
    }

    fn signing_key(&self) -> &KeyPair {
        if self.shared.faults.corrupt_signing_key() {
            &self.shared.rogue_key
        } else {
            &self.shared.key
        }
    }

    pub fn register_vehicle(
        &self,
        req: &RegistrationRequest,
    ) -> Result<LongTermCertificate, LtcaError> {
        let _busy = self.meter.track();
        let s = &self.shared;
        if !req.public_key.is_well_formed() {
            return Err(LtcaError::BadKey);
        }
        let now = s.clock.now_s();
        let (from, to) = if req.valid_to == 0 {
            (now, now + s.config.ltc_lifetime_s)
        } else {
            (req.valid_from, req.valid_to)
        };
        if from >= to {
            return Err(LtcaError::InvalidWindow(format!(
                "validity [{from}, {to}) is empty"
            )));
        }
        // Check and insert under one lock so concurrent duplicates cannot
        // both pass.
        let _registration = s.registration.lock().unwrap();
        if s.records.is_key_registered(&req.public_key) {
            return Err(LtcaError::DuplicateRegistration);
        }
        let ltc =
            LongTermCertificate::issue(&s.key, &s.config.id, "", req.public_key.clone(), from, to)
                .map_err(|e| LtcaError::Internal(e.to_string()))?;
        s.records
            .append_registration(RegistrationRecord {
                sn_ltc: ltc.serial,
                public_key: req.public_key.clone(),
                ltc: ltc.encode(),
                issued_at: now,
            })
            .map_err(record_error)?;
        Ok(ltc)
    }

    fn check_ltc(&self, ltc: &LongTermCertificate, now_s: u64) -> Result<(), LtcaError> {
        let s = &self.shared;
        let ok = ltc.issuer_id == s.config.id
            && ltc.verify_signature(s.identity.public_key())
            && ltc.is_valid_at(now_s)
            && !s.revoked.read().unwrap().contains(&ltc.serial);
        if ok {
            Ok(())
        } else {
            Err(LtcaError::UnknownOrExpiredLtc)
        }
    }

    fn check_window(&self, t_s: u64, t_e: u64) -> Result<(), LtcaError> {
        if t_s >= t_e {
            return Err(LtcaError::InvalidWindow(format!("t_s {t_s} >= t_e {t_e}")));
        }
        if t_e - t_s > self.shared.config.max_coverage_s {
            return Err(LtcaError::InvalidWindow(format!(
                "coverage {} s exceeds {} s",
                t_e - t_s,
                self.shared.config.max_coverage_s
            )));
        }
        Ok(())
    }

    pub fn issue_ticket(&self, req: &TicketRequest) -> Result<TicketResponse, LtcaError> {
        let _busy = self.meter.track();
        let s = &self.shared;
        let now_ms = s.clock.now_ms();
        if !req.envelope.is_fresh(now_ms, s.config.freshness_window_s) {
            return Err(LtcaError::StaleTimestamp);
        }
        self.check_ltc(&req.ltc, now_ms / 1000)?;
        if !req.verify_signature() {
            return Err(LtcaError::BadSignature);
        }
        self.check_window(req.t_s, req.t_e)?;
        let exp_tkt = req.t_e + s.config.grace_s;
        let key = GuardKey::live(req.ltc.serial);

        let claim = match s.guard.claim_ticket_interval(key, req.t_s, exp_tkt) {
            Ok(IntervalClaim::Granted { prev }) => Claim::Granted(prev),
            Ok(IntervalClaim::Denied) => return Err(LtcaError::SybilDenied),
            Err(e) => self.on_guard_error(e)?,
        };
        let result = self.finish_ticket(
            &req.envelope,
            req.ltc.serial,
            &req.ltc.encode(),
            req.target_hash,
            req.t_s,
            req.t_e,
            exp_tkt,
            false,
            matches!(claim, Claim::FailOpen),
        );
        if result.is_err() {
            if let Claim::Granted(prev) = claim {
                if let Err(e) = s.guard.revert_ticket_interval(key, prev) {
                    log::error!("could not revert ticket claim for {key:?}: {e}");
                }
            }
        }
        result
    }

    pub fn issue_foreign_ticket(
        &self,
        req: &ForeignTicketRequest,
    ) -> Result<TicketResponse, LtcaError> {
        let _busy = self.meter.track();
        let s = &self.shared;
        let now_ms = s.clock.now_ms();
        if !req.envelope.is_fresh(now_ms, s.config.freshness_window_s) {
            return Err(LtcaError::StaleTimestamp);
        }
        let ftkt = &req.foreign_ticket;
        let trusted = s
            .peers
            .read()
            .unwrap()
            .iter()
            .any(|p| ftkt.verify(p.public_key()));
        if !trusted {
            return Err(LtcaError::UntrustedIssuer);
        }
        if derive::target_hash(&s.config.id, &req.rnd_ftkt) != ftkt.ticket.target_hash {
            return Err(LtcaError::TargetMismatch);
        }
        if now_ms / 1000 > ftkt.ticket.exp_tkt {
            return Err(LtcaError::ExpiredTicket);
        }
        self.check_window(req.t_s, req.t_e)?;
        if req.t_s < ftkt.ticket.t_s || req.t_e > ftkt.ticket.exp_tkt {
            return Err(LtcaError::InvalidWindow(
                "outside the foreign ticket window".into(),
            ));
        }
        let exp_tkt = req.t_e + s.config.grace_s;
        let key = GuardKey::new(Space::Foreign, ftkt.ticket.serial);

        let claim = match s.guard.claim_ticket_once(key) {
            Ok(OnceClaim::Granted) => Claim::Granted(None),
            Ok(OnceClaim::Denied) => return Err(LtcaError::ReusedForeignTicket),
            Err(e) => self.on_guard_error(e)?,
        };
        let result = self.finish_ticket(
            &req.envelope,
            ftkt.ticket.serial,
            &ftkt.encode(),
            req.target_hash,
            req.t_s,
            req.t_e,
            exp_tkt,
            true,
            matches!(claim, Claim::FailOpen),
        );
        if result.is_err() && matches!(claim, Claim::Granted(_)) {
            if let Err(e) = s.guard.revert_ticket_once(key) {
                log::error!("could not revert foreign ticket claim for {key:?}: {e}");
            }
        }
        result
    }

    fn on_guard_error(&self, e: GuardError) -> Result<Claim, LtcaError> {
        match (e, self.shared.config.fail_policy) {
            (GuardError::Unavailable(msg), FailPolicy::FailOpen) => {
                log::warn!("guard unavailable, issuing fail-open: {msg}");
                Ok(Claim::FailOpen)
            }
            (GuardError::Unavailable(_), FailPolicy::FailClose) => Err(LtcaError::GuardUnavailable),
            (e @ GuardError::InvalidInterval { .. }, _) => {
                Err(LtcaError::InvalidWindow(e.to_string()))
            }
        }
    }

    /// Everything after a granted claim. Any error here is rolled back by
    /// the caller.
    #[allow(clippy::too_many_arguments)]
    fn finish_ticket(
        &self,
        envelope: &Envelope,
        sn_credential: Serial,
        credential: &[u8],
        target_hash: Digest,
        t_s: u64,
        t_e: u64,
        exp_tkt: u64,
        foreign: bool,
        fail_open: bool,
    ) -> Result<TicketResponse, LtcaError> {
        let s = &self.shared;
        let rnd_ik_tkt = gen_rnd();
        let ticket = Ticket {
            serial: Serial::random(),
            target_hash,
            ik_tkt: derive::ticket_ik(credential, t_s, t_e, &rnd_ik_tkt),
            t_s,
            t_e,
            exp_tkt,
        };
        if s.faults.take_post_grant_failure() {
            return Err(LtcaError::Internal("injected failure".into()));
        }
        let signed = ticket.sign(self.signing_key());
        let now_ms = s.clock.now_ms();
        s.records
            .append_ticket_record(TicketRecord {
                sn_tkt: signed.ticket.serial,
                sn_ltc: sn_credential,
                ik_tkt: signed.ticket.ik_tkt,
                rnd_ik_tkt,
                t_s,
                t_e,
                exp_tkt,
                issued_at: now_ms / 1000,
                foreign,
                fail_open,
            })
            .map_err(record_error)?;
        Ok(TicketResponse {
            envelope: envelope.reply(now_ms),
            ticket: signed,
            rnd_ik_tkt,
        })
    }

    /// Runs a complete dummy issuance in isolation: reserved dummy LTC,
    /// self-check guard namespace, nothing persisted or returned.
    pub fn health_selfcheck(&self) -> Health {
        let health = self.selfcheck_inner();
        self.meter.set_healthy(health.is_healthy());
        health
    }

    fn selfcheck_inner(&self) -> Health {
        let s = &self.shared;
        let now = s.clock.now_s();
        let Ok(ltc) = LongTermCertificate::issue(
            self.signing_key(),
            &s.config.id,
            "",
            s.dummy_vehicle.public().clone(),
            now.saturating_sub(1),
            now + 3600,
        ) else {
            return Health::unhealthy("ltc");
        };
        if self.check_ltc(&ltc, now).is_err() {
            return Health::unhealthy("sign");
        }
        let t_s = now;
        let t_e = now + 60;
        let req = TicketRequest::new(
            Envelope::new_request(s.clock.now_ms()),
            derive::target_hash("selfcheck", &gen_rnd()),
            t_s,
            t_e,
            ltc.clone(),
            &s.dummy_vehicle,
        );
        if !req.verify_signature() {
            return Health::unhealthy("request");
        }
        let key = GuardKey::new(Space::SelfCheck, Serial::random());
        let prev = match s.guard.claim_ticket_interval(key, t_s, t_e) {
            Ok(IntervalClaim::Granted { prev }) => Some(prev),
            Ok(IntervalClaim::Denied) => return Health::unhealthy("guard"),
            Err(_) if s.config.fail_policy == FailPolicy::FailOpen => None,
            Err(_) => return Health::unhealthy("guard"),
        };
        let rnd_ik = gen_rnd();
        let ticket = Ticket {
            serial: Serial::random(),
            target_hash: req.target_hash,
            ik_tkt: derive::ticket_ik(&ltc.encode(), t_s, t_e, &rnd_ik),
            t_s,
            t_e,
            exp_tkt: t_e,
        };
        let signed = ticket.sign(self.signing_key());
        let signed_ok = signed.verify(s.identity.public_key());
        let reverted = match prev {
            Some(prev) => s.guard.revert_ticket_interval(key, prev).is_ok(),
            None => true,
        };
        if !signed_ok {
            return Health::unhealthy("sign");
        }
        if !reverted {
            return Health::unhealthy("revert");
        }
        Health::Healthy
    }

    pub fn metrics(&self) -> ServiceMetrics {
        self.meter.snapshot()
    }
}

enum Claim {
    Granted(Option<u64>),
    FailOpen,
}

fn record_error(e: RecordError) -> LtcaError {
    if e.is_retryable() {
        LtcaError::Busy
    } else {
        LtcaError::Internal(e.to_string())
    }
}
