//! Long-term and CA certificates, plus the trust store used to validate them.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{KeyPair, PublicKey, Serial, Signature, SIG_ALG_ECDSA_P256_SHA256};
use crate::encoding::{EncodingError, FieldReader, Fields};

/// A certificate binding `subject_public_key` to a subject, signed by
/// `issuer_id`. Vehicle LTCs carry an empty subject; CA certificates carry
/// the CA identifier.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LongTermCertificate {
    pub serial: Serial,
    pub alg: String,
    pub subject: String,
    pub subject_public_key: PublicKey,
    pub issuer_id: String,
    pub valid_from: u64,
    pub valid_to: u64,
    pub signature: Signature,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CertError {
    #[error("validity window is empty: {from} >= {to}")]
    EmptyValidity { from: u64, to: u64 },
    #[error("malformed subject public key")]
    BadSubjectKey,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TrustError {
    #[error("issuer {0:?} is not trusted")]
    UnknownIssuer(String),
    #[error("signature by {0:?} does not verify")]
    BadSignature(String),
    #[error("certificate {0:?} is not valid at {1}")]
    Expired(String, u64),
    #[error("chain longer than {0}")]
    TooDeep(usize),
}

impl LongTermCertificate {
    /// Signs a new certificate with a fresh random serial.
    pub fn issue(
        issuer: &KeyPair,
        issuer_id: &str,
        subject: &str,
        subject_public_key: PublicKey,
        valid_from: u64,
        valid_to: u64,
    ) -> Result<Self, CertError> {
        if valid_from >= valid_to {
            return Err(CertError::EmptyValidity {
                from: valid_from,
                to: valid_to,
            });
        }
        if !subject_public_key.is_well_formed() {
            return Err(CertError::BadSubjectKey);
        }
        let mut cert = LongTermCertificate {
            serial: Serial::random(),
            alg: SIG_ALG_ECDSA_P256_SHA256.to_string(),
            subject: subject.to_string(),
            subject_public_key,
            issuer_id: issuer_id.to_string(),
            valid_from,
            valid_to,
            signature: Signature(Vec::new()),
        };
        cert.signature = issuer.sign(&cert.tbs_bytes());
        Ok(cert)
    }

    /// Self-signed trust anchor.
    pub fn self_signed(
        key: &KeyPair,
        id: &str,
        valid_from: u64,
        valid_to: u64,
    ) -> Result<Self, CertError> {
        Self::issue(key, id, id, key.public().clone(), valid_from, valid_to)
    }

    pub fn tbs_bytes(&self) -> Vec<u8> {
        Fields::new()
            .bytes(self.serial)
            .str(&self.alg)
            .str(&self.subject)
            .bytes(self.subject_public_key.as_bytes())
            .str(&self.issuer_id)
            .u64(self.valid_from)
            .u64(self.valid_to)
            .finish_small()
    }

    /// Full canonical encoding including the signature; this is the
    /// `LTC_v` byte string bound into ticket identifiable keys.
    pub fn encode(&self) -> Vec<u8> {
        Fields::new()
            .bytes(self.tbs_bytes())
            .bytes(&self.signature.0)
            .finish_small()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, EncodingError> {
        let mut outer = FieldReader::new(bytes);
        let tbs = outer.next_field()?;
        let signature = Signature(outer.vec()?);
        outer.finish()?;
        let mut r = FieldReader::new(tbs);
        let cert = LongTermCertificate {
            serial: Serial(r.fixed()?),
            alg: r.string()?,
            subject: r.string()?,
            subject_public_key: PublicKey(r.vec()?),
            issuer_id: r.string()?,
            valid_from: r.u64()?,
            valid_to: r.u64()?,
            signature,
        };
        r.finish()?;
        Ok(cert)
    }

    pub fn verify_signature(&self, issuer_key: &PublicKey) -> bool {
        self.alg == SIG_ALG_ECDSA_P256_SHA256
            && issuer_key.verify(&self.tbs_bytes(), &self.signature)
    }

    pub fn is_valid_at(&self, t: u64) -> bool {
        self.valid_from <= t && t < self.valid_to
    }

    pub fn is_self_signed(&self) -> bool {
        self.issuer_id == self.subject && self.verify_signature(&self.subject_public_key)
    }
}

/// A CA's routing identifier and its certificate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaIdentity {
    pub id: String,
    pub certificate: LongTermCertificate,
}

impl CaIdentity {
    pub fn public_key(&self) -> &PublicKey {
        &self.certificate.subject_public_key
    }
}

const MAX_CHAIN: usize = 4;

/// Trust anchors plus CA certificates that have been validated against them.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrustStore {
    anchors: HashMap<String, LongTermCertificate>,
    trusted: HashMap<String, LongTermCertificate>,
}

impl TrustStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Pins a certificate as a root of trust. Anchors are not checked.
    pub fn add_anchor(&mut self, cert: LongTermCertificate) {
        self.anchors.insert(cert.subject.clone(), cert);
    }

    /// Validates `cert` at time `at` and, on success, remembers it so later
    /// certificates may chain through it (cross certification).
    pub fn add_trusted(&mut self, cert: LongTermCertificate, at: u64) -> Result<(), TrustError> {
        self.validate(&cert, &[], at)?;
        self.trusted.insert(cert.subject.clone(), cert);
        Ok(())
    }

    /// Looks up an anchor or previously validated CA certificate by subject.
    pub fn lookup(&self, id: &str) -> Option<&LongTermCertificate> {
        self.trusted.get(id).or_else(|| self.anchors.get(id))
    }

    pub fn contains(&self, id: &str) -> bool {
        self.lookup(id).is_some()
    }

    pub fn trusted_ids(&self) -> impl Iterator<Item = &str> {
        self.trusted.keys().map(String::as_str)
    }

    /// Walks issuer links through `intermediates` and known certificates
    /// until reaching an anchor or an already trusted certificate.
    pub fn validate(
        &self,
        cert: &LongTermCertificate,
        intermediates: &[LongTermCertificate],
        at: u64,
    ) -> Result<(), TrustError> {
        let mut current = cert.clone();
        for _ in 0..MAX_CHAIN {
            if !current.is_valid_at(at) {
                return Err(TrustError::Expired(current.subject.clone(), at));
            }
            let issuer = self
                .lookup(&current.issuer_id)
                .cloned()
                .or_else(|| {
                    intermediates
                        .iter()
                        .find(|c| c.subject == current.issuer_id)
                        .cloned()
                })
                .ok_or_else(|| TrustError::UnknownIssuer(current.issuer_id.clone()))?;
            if !current.verify_signature(&issuer.subject_public_key) {
                return Err(TrustError::BadSignature(current.issuer_id.clone()));
            }
            if self.anchors.contains_key(&issuer.subject)
                || self.trusted.contains_key(&issuer.subject)
            {
                if !issuer.is_valid_at(at) {
                    return Err(TrustError::Expired(issuer.subject.clone(), at));
                }
                return Ok(());
            }
            current = issuer;
        }
        Err(TrustError::TooDeep(MAX_CHAIN))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn anchor(id: &str) -> (KeyPair, LongTermCertificate) {
        let k = KeyPair::generate();
        let c = LongTermCertificate::self_signed(&k, id, 0, 1_000).unwrap();
        (k, c)
    }

    #[test]
    fn issue_and_verify() {
        let (rk, rc) = anchor("rca");
        let vk = KeyPair::generate();
        let c = LongTermCertificate::issue(&rk, "rca", "", vk.public().clone(), 10, 20).unwrap();
        assert!(c.verify_signature(rk.public()));
        assert!(!c.verify_signature(vk.public()));
        assert!(rc.is_self_signed());
        assert!(c.is_valid_at(10) && !c.is_valid_at(20));
    }

    #[test]
    fn empty_validity_rejected() {
        let (rk, _) = anchor("rca");
        let err =
            LongTermCertificate::issue(&rk, "rca", "", rk.public().clone(), 5, 5).unwrap_err();
        assert_eq!(err, CertError::EmptyValidity { from: 5, to: 5 });
    }

    #[test]
    fn encode_decode_round_trip() {
        let (rk, _) = anchor("rca");
        let c =
            LongTermCertificate::issue(&rk, "rca", "ltca-a", rk.public().clone(), 1, 2).unwrap();
        assert_eq!(LongTermCertificate::decode(&c.encode()).unwrap(), c);
    }

    #[test]
    fn chain_and_cross_certification() {
        let (rk_b, rc_b) = anchor("rca-b");
        let ltca_b = KeyPair::generate();
        let ltca_b_cert =
            LongTermCertificate::issue(&rk_b, "rca-b", "ltca-b", ltca_b.public().clone(), 0, 1_000)
                .unwrap();
        let pca_c = KeyPair::generate();
        let cross = LongTermCertificate::issue(
            &ltca_b,
            "ltca-b",
            "pca-c",
            pca_c.public().clone(),
            0,
            1_000,
        )
        .unwrap();

        let mut store = TrustStore::new();
        store.add_anchor(rc_b);
        assert_eq!(
            store.validate(&cross, &[], 5),
            Err(TrustError::UnknownIssuer("ltca-b".into()))
        );
        assert!(store.validate(&cross, &[ltca_b_cert.clone()], 5).is_ok());
        store.add_trusted(ltca_b_cert, 5).unwrap();
        store.add_trusted(cross, 5).unwrap();
        assert!(store.contains("pca-c"));
    }

    #[test]
    fn forged_issuer_rejected() {
        let (_, rc) = anchor("rca");
        let mallory = KeyPair::generate();
        let forged =
            LongTermCertificate::issue(&mallory, "rca", "pca", mallory.public().clone(), 0, 10)
                .unwrap();
        let mut store = TrustStore::new();
        store.add_anchor(rc);
        assert_eq!(
            store.validate(&forged, &[], 1),
            Err(TrustError::BadSignature("rca".into()))
        );
    }
}
