//! Offline root CA.

use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cert::{CaIdentity, CertError, LongTermCertificate};
use crate::crypto::{keypair_serde, KeyPair, PublicKey};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Rca {
    pub id: String,
    #[serde(with = "keypair_serde")]
    pub key: KeyPair,
    pub certificate: LongTermCertificate,
}

impl Rca {
    pub fn new(id: &str, valid_from: u64, valid_to: u64) -> Result<Self, CertError> {
        let key = KeyPair::generate();
        let certificate = LongTermCertificate::self_signed(&key, id, valid_from, valid_to)?;
        Ok(Rca {
            id: id.to_string(),
            key,
            certificate,
        })
    }

    /// Certifies a lower-level CA for the root's own validity period.
    pub fn certify(&self, ca_public_key: &PublicKey, ca_id: &str) -> Result<CaIdentity, CertError> {
        rca_certify(
            self,
            ca_public_key,
            ca_id,
            self.certificate.valid_from,
            self.certificate.valid_to,
        )
    }
}

/// A certified CA key: what a service needs to start.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CaCredential {
    pub identity: CaIdentity,
    #[serde(with = "keypair_serde")]
    pub key: KeyPair,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum IdentityFile {
    Credential { identity: CaIdentity },
    Identity(CaIdentity),
}

impl CaCredential {
    pub fn load(path: impl AsRef<Path>) -> io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> io::Result<()> {
        std::fs::write(
            path,
            serde_json::to_string_pretty(self).expect("credential serializes"),
        )
    }
}

/// Reads a CA identity from either a bare identity file or a credential
/// file, ignoring the key.
pub fn load_identity(path: impl AsRef<Path>) -> io::Result<CaIdentity> {
    let text = std::fs::read_to_string(path)?;
    match serde_json::from_str(&text).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))? {
        IdentityFile::Credential { identity } | IdentityFile::Identity(identity) => Ok(identity),
    }
}

impl Rca {
    pub fn load(path: impl AsRef<Path>) -> io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> io::Result<()> {
        std::fs::write(
            path,
            serde_json::to_string_pretty(self).expect("root serializes"),
        )
    }

    /// Generates a key for a new CA and certifies it.
    pub fn issue_credential(&self, ca_id: &str) -> Result<CaCredential, CertError> {
        let key = KeyPair::generate();
        let identity = self.certify(key.public(), ca_id)?;
        Ok(CaCredential { identity, key })
    }
}

pub fn rca_certify(
    rca: &Rca,
    ca_public_key: &PublicKey,
    ca_id: &str,
    valid_from: u64,
    valid_to: u64,
) -> Result<CaIdentity, CertError> {
    let certificate = LongTermCertificate::issue(
        &rca.key,
        &rca.id,
        ca_id,
        ca_public_key.clone(),
        valid_from,
        valid_to,
    )?;
    Ok(CaIdentity {
        id: ca_id.to_string(),
        certificate,
    })
}

/// Certificate for a CA of another domain, issued by a local CA, so the
/// local domain trusts it without a common root.
pub fn cross_certify(
    issuer_key: &KeyPair,
    issuer_id: &str,
    subject: &CaIdentity,
) -> Result<LongTermCertificate, CertError> {
    let c = &subject.certificate;
    LongTermCertificate::issue(
        issuer_key,
        issuer_id,
        &subject.id,
        c.subject_public_key.clone(),
        c.valid_from,
        c.valid_to,
    )
}
