//! Resolution authority: checks that a reported pseudonym was issued against
//! a valid ticket, without learning who holds it.
//!
//! The RA asks the issuing PCA to open the pseudonym. The PCA returns the
//! ticket and `H^i(Rnd_v)`. The RA then recomputes the pseudonym's
//! identifiable key from those and the pseudonym's own fields. Neither the
//! LTC nor its serial ever reaches the RA.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};

use crate::cert::CaIdentity;
use crate::credential::{Pseudonym, SignedPseudonym, SignedTicket};
use crate::crypto::{Digest, KeyPair, PublicKey, Serial, Signature};
use crate::derive;
use crate::encoding::Fields;
use crate::envelope::{Clock, Envelope};
use crate::gateway::metrics::{LoadMeter, ServiceMetrics};
use crate::pca::{PcaError, ResolveRequest};
use crate::transport::ResolveApi;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[serde(tag = "error", content = "detail")]
pub enum RaError {
    #[error("request timestamp outside the freshness window")]
    StaleTimestamp,
    #[error("reporter signature or pseudonym invalid")]
    BadReporterSignature,
    #[error("reporter exceeded the validation rate")]
    RateLimited,
    #[error("unknown PCA {0:?}")]
    UnknownPca(String),
    #[error("PCA refused to resolve: {0}")]
    PcaRefused(String),
    #[error("PCA response signature invalid")]
    BadPcaSignature,
    #[error("ticket signature invalid")]
    BadTicketSignature,
    #[error("transport error: {0}")]
    Transport(String),
}

/// A report about `suspicious`, signed with the key of the reporter's own
/// currently valid pseudonym.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationRequest {
    pub envelope: Envelope,
    pub suspicious: SignedPseudonym,
    pub reporter: SignedPseudonym,
    pub signature: Signature,
}

impl ValidationRequest {
    pub fn signed_payload(
        envelope: &Envelope,
        suspicious: &SignedPseudonym,
        reporter: &SignedPseudonym,
    ) -> Vec<u8> {
        envelope
            .fields(Fields::new().str("validation-request"))
            .bytes(suspicious.encode())
            .bytes(reporter.encode())
            .finish_small()
    }

    pub fn new(
        envelope: Envelope,
        suspicious: SignedPseudonym,
        reporter: SignedPseudonym,
        reporter_key: &KeyPair,
    ) -> Self {
        let signature = reporter_key.sign(&Self::signed_payload(&envelope, &suspicious, &reporter));
        ValidationRequest {
            envelope,
            suspicious,
            reporter,
            signature,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "kebab-case")]
pub enum Verdict {
    ValidIssuance,
    InvalidIssuance { stage: String },
}

impl Verdict {
    fn invalid(stage: &str) -> Self {
        Verdict::InvalidIssuance {
            stage: stage.into(),
        }
    }

    pub fn is_valid(&self) -> bool {
        matches!(self, Verdict::ValidIssuance)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Evidence {
    pub ticket_serial: Option<Serial>,
    pub pca_id: String,
    pub claimed_ik_p: Digest,
    pub recomputed_ik_p: Option<Digest>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub pseudonym_serial: Digest,
    pub verdict: Verdict,
    pub evidence: Evidence,
}

/// `H(IK_tkt || K || t_s || t_e || Rnd_IK_P) == IK_P`.
pub fn issuance_matches(pseudonym: &Pseudonym, ik_tkt: &Digest, rnd_ik_p: &Digest) -> bool {
    recompute_ik(pseudonym, ik_tkt, rnd_ik_p) == pseudonym.ik_p
}

fn recompute_ik(p: &Pseudonym, ik_tkt: &Digest, rnd_ik_p: &Digest) -> Digest {
    derive::pseudonym_ik(ik_tkt, &p.public_key, p.t_s, p.t_e, rnd_ik_p)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RaConfig {
    pub id: String,
    /// Validations allowed per reporter key per minute.
    pub rate_per_minute: u32,
    pub freshness_window_s: u64,
}

impl RaConfig {
    pub fn new(id: &str) -> Self {
        RaConfig {
            id: id.to_string(),
            rate_per_minute: 10,
            freshness_window_s: 300,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Bucket {
    tokens: f64,
    last_ms: u64,
}

struct PcaLink {
    identity: CaIdentity,
    api: Arc<dyn ResolveApi>,
}

impl std::fmt::Debug for PcaLink {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PcaLink")
            .field("id", &self.identity.id)
            .finish()
    }
}

#[derive(Debug)]
pub struct Ra {
    config: RaConfig,
    identity: CaIdentity,
    key: KeyPair,
    clock: Arc<dyn Clock>,
    pcas: RwLock<HashMap<String, PcaLink>>,
    ltcas: RwLock<Vec<CaIdentity>>,
    buckets: Mutex<HashMap<PublicKey, Bucket>>,
    meter: Arc<LoadMeter>,
}

impl Ra {
    pub fn new(
        config: RaConfig,
        identity: CaIdentity,
        key: KeyPair,
        clock: Arc<dyn Clock>,
    ) -> Self {
        Ra {
            config,
            identity,
            key,
            clock,
            pcas: RwLock::new(HashMap::new()),
            ltcas: RwLock::new(Vec::new()),
            buckets: Mutex::new(HashMap::new()),
            meter: Arc::new(LoadMeter::new(1)),
        }
    }

    pub fn id(&self) -> &str {
        &self.config.id
    }

    pub fn identity(&self) -> &CaIdentity {
        &self.identity
    }

    pub fn meter(&self) -> &Arc<LoadMeter> {
        &self.meter
    }

    pub fn add_pca(&self, identity: CaIdentity, api: Arc<dyn ResolveApi>) {
        self.pcas
            .write()
            .unwrap()
            .insert(identity.id.clone(), PcaLink { identity, api });
    }

    pub fn trust_ltca(&self, identity: CaIdentity) {
        self.ltcas.write().unwrap().push(identity);
    }

    fn pca_key(&self, id: &str) -> Option<PublicKey> {
        self.pcas
            .read()
            .unwrap()
            .get(id)
            .map(|l| l.identity.public_key().clone())
    }

    fn check_reporter(&self, req: &ValidationRequest, now_s: u64) -> Result<(), RaError> {
        let reporter = &req.reporter;
        let issuer = self
            .pca_key(&reporter.pseudonym.issuer_id)
            .ok_or(RaError::BadReporterSignature)?;
        let payload = ValidationRequest::signed_payload(&req.envelope, &req.suspicious, reporter);
        let ok = reporter.verify(&issuer)
            && reporter.pseudonym.is_valid_at(now_s)
            && reporter
                .pseudonym
                .public_key
                .verify(&payload, &req.signature);
        if ok {
            Ok(())
        } else {
            Err(RaError::BadReporterSignature)
        }
    }

    fn take_token(&self, reporter: &PublicKey, now_ms: u64) -> Result<(), RaError> {
        let capacity = f64::from(self.config.rate_per_minute);
        let mut buckets = self.buckets.lock().unwrap();
        let b = buckets.entry(reporter.clone()).or_insert(Bucket {
            tokens: capacity,
            last_ms: now_ms,
        });
        let elapsed_min = now_ms.saturating_sub(b.last_ms) as f64 / 60_000.0;
        b.tokens = (b.tokens + elapsed_min * capacity).min(capacity);
        b.last_ms = now_ms;
        if b.tokens >= 1.0 {
            b.tokens -= 1.0;
            Ok(())
        } else {
            Err(RaError::RateLimited)
        }
    }

    pub fn validate_issuance(&self, req: &ValidationRequest) -> Result<ValidationReport, RaError> {
        let _busy = self.meter.track();
        let now_ms = self.clock.now_ms();
        if !req
            .envelope
            .is_fresh(now_ms, self.config.freshness_window_s)
        {
            return Err(RaError::StaleTimestamp);
        }
        self.check_reporter(req, now_ms / 1000)?;
        self.take_token(&req.reporter.pseudonym.public_key, now_ms)?;

        let p = &req.suspicious.pseudonym;
        let (pca_key, api) = {
            let pcas = self.pcas.read().unwrap();
            let link = pcas
                .get(&p.issuer_id)
                .ok_or_else(|| RaError::UnknownPca(p.issuer_id.clone()))?;
            (link.identity.public_key().clone(), link.api.clone())
        };
        let mut evidence = Evidence {
            ticket_serial: None,
            pca_id: p.issuer_id.clone(),
            claimed_ik_p: p.ik_p,
            recomputed_ik_p: None,
        };
        let report = |verdict: Verdict, evidence: Evidence| ValidationReport {
            pseudonym_serial: p.serial,
            verdict,
            evidence,
        };
        if !req.suspicious.verify(&pca_key) {
            return Ok(report(Verdict::invalid("signature"), evidence));
        }

        let resolve = ResolveRequest::new(
            Envelope::new_request(now_ms),
            req.suspicious.clone(),
            self.identity.certificate.clone(),
            &self.key,
        );
        let answer = match api.resolve(&resolve) {
            Ok(a) => a,
            // The PCA signed this pseudonym but cannot show what it was issued for.
            Err(PcaError::NotFound) => return Ok(report(Verdict::invalid("unresolved"), evidence)),
            Err(e) => return Err(RaError::PcaRefused(e.to_string())),
        };
        if !answer.envelope.answers(&resolve.envelope)
            || !answer.verify(&pca_key)
            || answer.serial != p.serial
        {
            return Err(RaError::BadPcaSignature);
        }
        let ticket =
            SignedTicket::decode(&answer.ticket).map_err(|_| RaError::BadTicketSignature)?;
        let trusted = self
            .ltcas
            .read()
            .unwrap()
            .iter()
            .any(|l| ticket.verify(l.public_key()));
        if !trusted {
            return Err(RaError::BadTicketSignature);
        }
        let t = &ticket.ticket;
        evidence.ticket_serial = Some(t.serial);
        let recomputed = recompute_ik(p, &t.ik_tkt, &answer.rnd_ik_p);
        evidence.recomputed_ik_p = Some(recomputed);
        let verdict = if recomputed != p.ik_p {
            Verdict::invalid("ik")
        } else if p.t_s < t.t_s || p.t_e > t.t_e {
            Verdict::invalid("window")
        } else {
            Verdict::ValidIssuance
        };
        Ok(report(verdict, evidence))
    }

    pub fn metrics(&self) -> ServiceMetrics {
        self.meter.snapshot()
    }
}
