//! A whole domain in one process: root, LTCA, PCAs and RA sharing one guard
//! and one clock. Used by the examples, the harness and the test suites.

use std::sync::Arc;
use std::time::Duration;

use crate::cert::{CaIdentity, TrustStore};
use crate::crypto::KeyPair;
use crate::envelope::{Clock, SystemClock};
use crate::gateway::config::DomainConfig;
use crate::gateway::discovery::{DomainDescriptor, LtcaDescriptor, PcaDescriptor};
use crate::gateway::rca::{cross_certify, Rca};
use crate::guard::{FailPolicy, MemoryGuard, SharedGuard};
use crate::ltca::Ltca;
use crate::pca::Pca;
use crate::ra::Ra;
use crate::records::{MemorySink, RecordStore};
use crate::vehicle::{PcaTarget, Vehicle};

const YEAR_S: u64 = 365 * 24 * 3600;

#[derive(Debug, Clone)]
pub struct DomainBuilder {
    config: DomainConfig,
    pcas: usize,
    max_coverage_s: Option<u64>,
    guard: Option<SharedGuard>,
    clock: Option<Arc<dyn Clock>>,
}

impl DomainBuilder {
    pub fn new(id: &str) -> Self {
        DomainBuilder {
            config: DomainConfig {
                domain_id: id.to_string(),
                ..DomainConfig::default()
            },
            pcas: 1,
            max_coverage_s: None,
            guard: None,
            clock: None,
        }
    }

    pub fn from_config(config: DomainConfig) -> Self {
        DomainBuilder {
            config,
            ..Self::new("")
        }
    }

    pub fn tau_p(mut self, tau_p: u64) -> Self {
        self.config.tau_p = tau_p;
        self
    }

    pub fn gamma(mut self, gamma: u64) -> Self {
        self.config.gamma = gamma;
        self
    }

    pub fn pcas(mut self, n: usize) -> Self {
        self.pcas = n.max(1);
        self
    }

    pub fn fail_policy(mut self, policy: FailPolicy) -> Self {
        self.config.guard_policy = policy;
        self
    }

    pub fn grace(mut self, grace_s: u64) -> Self {
        self.config.grace_s = grace_s;
        self
    }

    pub fn max_batch(mut self, n: usize) -> Self {
        self.config.max_batch = n;
        self
    }

    pub fn max_coverage(mut self, s: u64) -> Self {
        self.max_coverage_s = Some(s);
        self
    }

    pub fn ra_rate(mut self, per_minute: u32) -> Self {
        self.config.ra_rate_per_minute = per_minute;
        self
    }

    pub fn workers(mut self, ltca: usize, pca: usize) -> Self {
        self.config.ltca_workers = ltca;
        self.config.pca_workers = pca;
        self
    }

    pub fn record_write_delay(mut self, delay: Duration) -> Self {
        self.config.record_write_delay_ms = delay.as_millis() as u64;
        self
    }

    /// Uses `guard` instead of a fresh embedded one.
    pub fn guard(mut self, guard: SharedGuard) -> Self {
        self.guard = Some(guard);
        self
    }

    pub fn clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = Some(clock);
        self
    }

    pub fn build(self) -> Domain {
        let c = self.config;
        let clock = self.clock.unwrap_or_else(|| Arc::new(SystemClock));
        let (memory_guard, guard): (Option<Arc<MemoryGuard>>, SharedGuard) = match self.guard {
            Some(g) => (None, g),
            None => {
                let m = Arc::new(MemoryGuard::new());
                (Some(m.clone()), m)
            }
        };
        let now = clock.now_s();
        let rca = Rca::new(
            &format!("rca-{}", c.domain_id),
            now.saturating_sub(YEAR_S),
            now + 20 * YEAR_S,
        )
        .expect("root certificate");
        let store_opts = c.store_options();
        let store = || {
            Arc::new(RecordStore::with_sink(
                Box::new(MemorySink::default()),
                store_opts.clone(),
                Vec::new(),
                None,
            ))
        };

        let ltca_key = KeyPair::generate();
        let ltca_identity = rca
            .certify(ltca_key.public(), &format!("ltca-{}", c.domain_id))
            .expect("ltca certificate");
        let mut lc = c.ltca_config(&ltca_identity.id);
        if let Some(m) = self.max_coverage_s {
            lc.max_coverage_s = m;
        }
        let ltca = Ltca::new(
            lc,
            ltca_identity.clone(),
            ltca_key.clone(),
            guard.clone(),
            store(),
            clock.clone(),
        );

        let ra_key = KeyPair::generate();
        let ra_identity = rca
            .certify(ra_key.public(), &format!("ra-{}", c.domain_id))
            .expect("ra certificate");
        let ra = Arc::new(Ra::new(
            c.ra_config(&ra_identity.id),
            ra_identity.clone(),
            ra_key.clone(),
            clock.clone(),
        ));
        ra.trust_ltca(ltca_identity.clone());

        let mut pcas = Vec::new();
        let mut pca_keys = Vec::new();
        for i in 0..self.pcas {
            let key = KeyPair::generate();
            let identity = rca
                .certify(key.public(), &format!("pca-{}-{}", c.domain_id, i + 1))
                .expect("pca certificate");
            let pca = Pca::new(
                c.pca_config(&identity.id),
                identity.clone(),
                key.clone(),
                guard.clone(),
                store(),
                clock.clone(),
            );
            pca.trust_ltca(ltca_identity.clone());
            pca.authorize_ra(ra_identity.certificate.clone());
            ra.add_pca(identity, Arc::new(pca.clone()));
            pcas.push(pca);
            pca_keys.push(key);
        }

        let mut trust = TrustStore::new();
        trust.add_anchor(rca.certificate.clone());

        Domain {
            id: c.domain_id.clone(),
            config: c,
            rca,
            clock,
            guard,
            memory_guard,
            ltca,
            ltca_key,
            pcas,
            pca_keys,
            ra,
            ra_key,
            trust,
        }
    }
}

/// Every key is exposed so tests can forge or tamper with credentials.
#[derive(Debug)]
pub struct Domain {
    pub id: String,
    pub config: DomainConfig,
    pub rca: Rca,
    pub clock: Arc<dyn Clock>,
    pub guard: SharedGuard,
    /// Set when the domain runs its own embedded guard.
    pub memory_guard: Option<Arc<MemoryGuard>>,
    pub ltca: Ltca,
    pub ltca_key: KeyPair,
    pub pcas: Vec<Pca>,
    pub pca_keys: Vec<KeyPair>,
    pub ra: Arc<Ra>,
    pub ra_key: KeyPair,
    /// What a vehicle of this domain trusts.
    pub trust: TrustStore,
}

impl Domain {
    pub fn builder(id: &str) -> DomainBuilder {
        DomainBuilder::new(id)
    }

    pub fn tau_p(&self) -> u64 {
        self.config.tau_p
    }

    pub fn pca(&self) -> &Pca {
        &self.pcas[0]
    }

    pub fn pca_target(&self, i: usize) -> PcaTarget<'_> {
        PcaTarget {
            identity: self.pcas[i].identity(),
            tau_p: self.config.tau_p,
        }
    }

    /// An unregistered vehicle homed here.
    pub fn vehicle(&self) -> Vehicle {
        Vehicle::new(
            self.ltca.identity().clone(),
            self.trust.clone(),
            self.clock.clone(),
        )
    }

    /// A vehicle that already holds an LTC.
    pub fn registered_vehicle(&self) -> Vehicle {
        let mut v = self.vehicle();
        v.register(&self.ltca, None).expect("registration");
        v
    }

    pub fn descriptor(&self, ltca_endpoint: &str, pca_endpoints: &[String]) -> DomainDescriptor {
        DomainDescriptor {
            domain_id: self.id.clone(),
            ltca: LtcaDescriptor {
                id: self.ltca.id().to_string(),
                endpoint: ltca_endpoint.to_string(),
                certificate: self.ltca.identity().certificate.clone(),
            },
            pcas: self
                .pcas
                .iter()
                .enumerate()
                .map(|(i, p)| PcaDescriptor {
                    id: p.id().to_string(),
                    endpoint: pca_endpoints.get(i).cloned().unwrap_or_default(),
                    certificate: p.identity().certificate.clone(),
                    tau_p: self.config.tau_p,
                    gamma: self.config.gamma,
                })
                .collect(),
            epoch: 0,
        }
    }

    /// Lets vehicles of `home` roam into `foreign`: the home LTCA
    /// cross-certifies the foreign CAs, and the foreign LTCA accepts foreign
    /// tickets signed by the home LTCA.
    pub fn federate(home: &mut Domain, foreign: &Domain) {
        let at = home.clock.now_s();
        let foreign_cas: Vec<CaIdentity> = std::iter::once(foreign.ltca.identity().clone())
            .chain(foreign.pcas.iter().map(|p| p.identity().clone()))
            .collect();
        home.trust
            .add_trusted(home.ltca.identity().certificate.clone(), at)
            .expect("home LTCA chains to the home root");
        for ca in &foreign_cas {
            let cross =
                cross_certify(&home.ltca_key, home.ltca.id(), ca).expect("cross certificate");
            home.trust
                .add_trusted(cross, at)
                .expect("cross certificate chains");
        }
        foreign.ltca.trust_peer(home.ltca.identity().clone());
    }

    pub fn flush(&self) {
        self.ltca.records().flush();
        for p in &self.pcas {
            p.records().flush();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envelope::ManualClock;

    #[test]
    fn native_and_foreign_acquisition() {
        let clock = ManualClock::at_secs(1_700_000_000);
        let mut a = Domain::builder("a").clock(Arc::new(clock.clone())).build();
        let b = Domain::builder("b")
            .clock(Arc::new(clock.clone()))
            .pcas(2)
            .build();
        Domain::federate(&mut a, &b);
        assert!(a.trust.contains(b.pcas[1].id()));

        let mut v = a.registered_vehicle();
        let (t_s, t_e) = (1_700_000_100, 1_700_003_700);
        let held = v.request_ticket(&a.ltca, a.pca().id(), t_s, t_e).unwrap();
        let got = v
            .acquire_pseudonyms(a.pca(), a.pca_target(0), &held, 12)
            .unwrap();
        assert_eq!(got.len(), 12);

        let (f_s, f_e) = (1_700_003_700, 1_700_007_300);
        let got = v
            .acquire_foreign(
                &a.ltca,
                &b.ltca,
                b.ltca.identity(),
                &b.pcas[1],
                b.pca_target(1),
                f_s,
                f_e,
                6,
            )
            .unwrap();
        assert_eq!(got[0].pseudonym.issuer_id, b.pcas[1].id());
        assert_eq!(v.pool().len(), 18);
    }
}
