//! Tickets, pseudonyms and certificate signing requests.

use serde::{Deserialize, Serialize};

use crate::crypto::{Digest, KeyPair, PublicKey, Serial, Signature};
use crate::encoding::{EncodingError, FieldReader, Fields};

/// Anonymized authorization ticket. Contains nothing about the holder except
/// the one-way `ik_tkt`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ticket {
    pub serial: Serial,
    pub target_hash: Digest,
    pub ik_tkt: Digest,
    pub t_s: u64,
    pub t_e: u64,
    pub exp_tkt: u64,
}

impl Ticket {
    pub fn tbs_bytes(&self) -> Vec<u8> {
        Fields::new()
            .bytes(self.serial)
            .bytes(self.target_hash)
            .bytes(self.ik_tkt)
            .u64(self.t_s)
            .u64(self.t_e)
            .u64(self.exp_tkt)
            .finish_small()
    }

    pub fn sign(self, key: &KeyPair) -> SignedTicket {
        let signature = key.sign(&self.tbs_bytes());
        SignedTicket {
            ticket: self,
            signature,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignedTicket {
    pub ticket: Ticket,
    pub signature: Signature,
}

impl SignedTicket {
    pub fn verify(&self, issuer: &PublicKey) -> bool {
        issuer.verify(&self.ticket.tbs_bytes(), &self.signature)
    }

    /// `tkt_σ` as stored and presented.
    pub fn encode(&self) -> Vec<u8> {
        Fields::new()
            .bytes(self.ticket.tbs_bytes())
            .bytes(&self.signature.0)
            .finish_small()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, EncodingError> {
        let mut outer = FieldReader::new(bytes);
        let tbs = outer.next_field()?;
        let signature = Signature(outer.vec()?);
        outer.finish()?;
        let mut r = FieldReader::new(tbs);
        let ticket = Ticket {
            serial: Serial(r.fixed()?),
            target_hash: Digest(r.fixed()?),
            ik_tkt: Digest(r.fixed()?),
            t_s: r.u64()?,
            t_e: r.u64()?,
            exp_tkt: r.u64()?,
        };
        r.finish()?;
        Ok(SignedTicket { ticket, signature })
    }
}

/// Short-lived pseudonym certificate. `issuer_id` names the PCA so that a
/// resolution authority can route validation requests.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pseudonym {
    pub serial: Digest,
    pub public_key: PublicKey,
    pub ik_p: Digest,
    pub t_s: u64,
    pub t_e: u64,
    pub issuer_id: String,
}

impl Pseudonym {
    pub fn tbs_bytes(&self) -> Vec<u8> {
        Fields::new()
            .bytes(self.serial)
            .bytes(self.public_key.as_bytes())
            .bytes(self.ik_p)
            .u64(self.t_s)
            .u64(self.t_e)
            .str(&self.issuer_id)
            .finish_small()
    }

    pub fn sign(self, key: &KeyPair) -> SignedPseudonym {
        let signature = key.sign(&self.tbs_bytes());
        SignedPseudonym {
            pseudonym: self,
            signature,
        }
    }

    pub fn is_valid_at(&self, t: u64) -> bool {
        self.t_s <= t && t < self.t_e
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignedPseudonym {
    pub pseudonym: Pseudonym,
    pub signature: Signature,
}

impl SignedPseudonym {
    pub fn verify(&self, issuer: &PublicKey) -> bool {
        issuer.verify(&self.pseudonym.tbs_bytes(), &self.signature)
    }

    pub fn encode(&self) -> Vec<u8> {
        Fields::new()
            .bytes(self.pseudonym.tbs_bytes())
            .bytes(&self.signature.0)
            .finish_small()
    }
}

/// Self-signed pseudonym key: the proof of possession of `k^i_v`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Csr {
    pub public_key: PublicKey,
    pub signature: Signature,
}

impl Csr {
    fn message(key: &PublicKey) -> Vec<u8> {
        Fields::new()
            .str("csr")
            .bytes(key.as_bytes())
            .finish_small()
    }

    pub fn new(key: &KeyPair) -> Self {
        Csr {
            public_key: key.public().clone(),
            signature: key.sign(&Self::message(key.public())),
        }
    }

    pub fn verify(&self) -> bool {
        self.public_key
            .verify(&Self::message(&self.public_key), &self.signature)
    }
}
