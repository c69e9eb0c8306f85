//! Static directory of domains, answering unauthenticated lookups.

use std::collections::HashMap;
use std::path::Path;
use std::sync::RwLock;

use serde::{Deserialize, Serialize};

use crate::cert::{CaIdentity, LongTermCertificate, TrustError, TrustStore};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LtcaDescriptor {
    pub id: String,
    pub endpoint: String,
    pub certificate: LongTermCertificate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PcaDescriptor {
    pub id: String,
    pub endpoint: String,
    pub certificate: LongTermCertificate,
    /// Pseudonym lifetime, seconds.
    pub tau_p: u64,
    /// Coverage granted per ticket, seconds.
    pub gamma: u64,
}

impl PcaDescriptor {
    pub fn identity(&self) -> CaIdentity {
        CaIdentity {
            id: self.id.clone(),
            certificate: self.certificate.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainDescriptor {
    pub domain_id: String,
    pub ltca: LtcaDescriptor,
    pub pcas: Vec<PcaDescriptor>,
    /// Root of the slot grid, seconds since the Unix epoch.
    pub epoch: u64,
}

impl DomainDescriptor {
    pub fn ltca_identity(&self) -> CaIdentity {
        CaIdentity {
            id: self.ltca.id.clone(),
            certificate: self.ltca.certificate.clone(),
        }
    }

    pub fn pca(&self, id: &str) -> Option<&PcaDescriptor> {
        self.pcas.iter().find(|p| p.id == id)
    }

    pub fn certificates(&self) -> impl Iterator<Item = &LongTermCertificate> {
        std::iter::once(&self.ltca.certificate).chain(self.pcas.iter().map(|p| &p.certificate))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DiscoveryError {
    #[error("unknown domain {0:?}")]
    UnknownDomain(String),
    #[error("descriptor certificate does not chain to a trust anchor: {0}")]
    Untrusted(#[from] TrustError),
    #[error("registry file: {0}")]
    File(String),
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct RegistryFile {
    #[serde(default)]
    domain: Vec<DomainDescriptor>,
}

#[derive(Debug, Default)]
pub struct Registry {
    domains: RwLock<HashMap<String, DomainDescriptor>>,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a descriptor after checking every certificate in it against
    /// `trust` at time `at`.
    pub fn register(
        &self,
        desc: DomainDescriptor,
        trust: &TrustStore,
        at: u64,
    ) -> Result<(), DiscoveryError> {
        for cert in desc.certificates() {
            trust.validate(cert, &[], at)?;
        }
        self.domains
            .write()
            .unwrap()
            .insert(desc.domain_id.clone(), desc);
        Ok(())
    }

    pub fn discover(&self, domain_id: &str) -> Result<DomainDescriptor, DiscoveryError> {
        self.domains
            .read()
            .unwrap()
            .get(domain_id)
            .cloned()
            .ok_or_else(|| DiscoveryError::UnknownDomain(domain_id.to_string()))
    }

    pub fn domain_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.domains.read().unwrap().keys().cloned().collect();
        ids.sort();
        ids
    }

    pub fn to_toml(&self) -> String {
        let mut domain: Vec<DomainDescriptor> =
            self.domains.read().unwrap().values().cloned().collect();
        domain.sort_by(|a, b| a.domain_id.cmp(&b.domain_id));
        toml::to_string(&RegistryFile { domain }).expect("descriptors serialize")
    }

    pub fn from_toml(text: &str, trust: &TrustStore, at: u64) -> Result<Self, DiscoveryError> {
        let file: RegistryFile =
            toml::from_str(text).map_err(|e| DiscoveryError::File(e.to_string()))?;
        let reg = Registry::new();
        for d in file.domain {
            reg.register(d, trust, at)?;
        }
        Ok(reg)
    }

    pub fn load(
        path: impl AsRef<Path>,
        trust: &TrustStore,
        at: u64,
    ) -> Result<Self, DiscoveryError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| DiscoveryError::File(e.to_string()))?;
        Self::from_toml(&text, trust, at)
    }
}
