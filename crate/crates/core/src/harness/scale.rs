//! Horizontal scaling: the replica-count controller and an in-process
//! replica pool it can drive.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};

use crate::cert::LongTermCertificate;
use crate::gateway::metrics::LoadMeter;
use crate::ltca::{
    ForeignTicketRequest, Ltca, LtcaError, RegistrationRequest, TicketRequest, TicketResponse,
};
use crate::pca::{Pca, PcaError, PseudonymRequest, PseudonymResponse};
use crate::transport::{LtcaApi, PcaApi};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalePolicy {
    pub min_replicas: usize,
    pub max_replicas: usize,
    pub target_utilization: f64,
}

impl ScalePolicy {
    pub fn ltca_default() -> Self {
        ScalePolicy {
            min_replicas: 1,
            max_replicas: 40,
            target_utilization: 0.6,
        }
    }

    pub fn pca_default() -> Self {
        ScalePolicy {
            min_replicas: 1,
            max_replicas: 120,
            target_utilization: 0.6,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.min_replicas < 1 || self.min_replicas > self.max_replicas {
            return Err(format!(
                "need 1 <= min_replicas <= max_replicas, got {}..{}",
                self.min_replicas, self.max_replicas
            ));
        }
        if !(self.target_utilization > 0.0 && self.target_utilization < 1.0) {
            return Err(format!(
                "target_utilization {} not in (0, 1)",
                self.target_utilization
            ));
        }
        Ok(())
    }

    /// `ceil(current * utilization / target)`, clamped to the policy range.
    pub fn desired(&self, current: usize, utilization: f64) -> usize {
        let raw = (current as f64 * utilization / self.target_utilization).ceil();
        let raw = if raw.is_finite() && raw > 0.0 {
            raw as usize
        } else {
            0
        };
        raw.clamp(self.min_replicas, self.max_replicas)
    }
}

/// Consecutive below-target ticks required before scaling in.
pub const SCALE_IN_TICKS: u32 = 3;

#[derive(Debug, Clone)]
pub struct ScaleController {
    policy: ScalePolicy,
    current: usize,
    below: u32,
}

impl ScaleController {
    pub fn new(policy: ScalePolicy) -> Self {
        ScaleController {
            current: policy.min_replicas,
            policy,
            below: 0,
        }
    }

    pub fn current(&self) -> usize {
        self.current
    }

    pub fn policy(&self) -> &ScalePolicy {
        &self.policy
    }

    /// Feeds one utilization reading and returns the new replica count.
    /// Scale-out is immediate; scale-in waits for a run of below-target
    /// readings.
    pub fn tick(&mut self, utilization: f64) -> usize {
        let desired = self.policy.desired(self.current, utilization);
        if utilization < self.policy.target_utilization {
            self.below += 1;
        } else {
            self.below = 0;
        }
        if desired > self.current || (desired < self.current && self.below >= SCALE_IN_TICKS) {
            self.current = desired;
        }
        self.current
    }
}

/// Replica counts produced by feeding `utilizations` one tick at a time.
pub fn scaling_controller(
    policy: ScalePolicy,
    utilizations: impl IntoIterator<Item = f64>,
) -> Vec<usize> {
    let mut c = ScaleController::new(policy);
    utilizations.into_iter().map(|u| c.tick(u)).collect()
}

pub trait Replica: Clone + Send + Sync {
    fn spawn_replica(&self) -> Self;
    fn load_meter(&self) -> &Arc<LoadMeter>;
}

impl Replica for Ltca {
    fn spawn_replica(&self) -> Self {
        self.replica()
    }
    fn load_meter(&self) -> &Arc<LoadMeter> {
        self.meter()
    }
}

impl Replica for Pca {
    fn spawn_replica(&self) -> Self {
        self.replica()
    }
    fn load_meter(&self) -> &Arc<LoadMeter> {
        self.meter()
    }
}

/// Round-robin pool of replicas sharing one guard and record store.
#[derive(Debug)]
pub struct ReplicaPool<T> {
    replicas: RwLock<Vec<T>>,
    next: AtomicUsize,
}

impl<T: Replica> ReplicaPool<T> {
    pub fn new(first: T, n: usize) -> Self {
        let pool = ReplicaPool {
            replicas: RwLock::new(vec![first]),
            next: AtomicUsize::new(0),
        };
        pool.resize(n.max(1));
        pool
    }

    pub fn len(&self) -> usize {
        self.replicas.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn resize(&self, n: usize) {
        let mut r = self.replicas.write().unwrap();
        let n = n.max(1);
        while r.len() < n {
            let fresh = r[0].spawn_replica();
            r.push(fresh);
        }
        r.truncate(n);
    }

    pub fn pick(&self) -> T {
        let r = self.replicas.read().unwrap();
        r[self.next.fetch_add(1, Ordering::Relaxed) % r.len()].clone()
    }

    /// Mean smoothed load across replicas, sampled now.
    pub fn utilization(&self) -> f64 {
        let r = self.replicas.read().unwrap();
        r.iter().map(|x| x.load_meter().sample()).sum::<f64>() / r.len() as f64
    }
}

impl LtcaApi for ReplicaPool<Ltca> {
    fn register(&self, req: &RegistrationRequest) -> Result<LongTermCertificate, LtcaError> {
        self.pick().register_vehicle(req)
    }
    fn issue_ticket(&self, req: &TicketRequest) -> Result<TicketResponse, LtcaError> {
        self.pick().issue_ticket(req)
    }
    fn issue_foreign_ticket(
        &self,
        req: &ForeignTicketRequest,
    ) -> Result<TicketResponse, LtcaError> {
        self.pick().issue_foreign_ticket(req)
    }
}

impl PcaApi for ReplicaPool<Pca> {
    fn issue_pseudonyms(&self, req: &PseudonymRequest) -> Result<PseudonymResponse, PcaError> {
        self.pick().issue_pseudonyms(req)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desired_formula() {
        let p = ScalePolicy {
            min_replicas: 1,
            max_replicas: 10,
            target_utilization: 0.6,
        };
        assert_eq!(p.desired(2, 0.9), 3);
        assert_eq!(p.desired(2, 0.6), 2);
        assert_eq!(p.desired(8, 1.0), 10);
        assert_eq!(p.desired(4, 0.0), 1);
    }

    #[test]
    fn scale_in_waits_three_ticks() {
        let p = ScalePolicy {
            min_replicas: 1,
            max_replicas: 10,
            target_utilization: 0.6,
        };
        let timeline = scaling_controller(p, [0.9, 0.9, 0.9, 0.1, 0.1, 0.1, 0.1]);
        assert_eq!(&timeline[..3], &[2, 3, 5]);
        assert_eq!(&timeline[3..], &[5, 5, 1, 1]);
    }

    #[test]
    fn a_high_reading_resets_the_count() {
        let p = ScalePolicy {
            min_replicas: 1,
            max_replicas: 10,
            target_utilization: 0.5,
        };
        let mut c = ScaleController::new(p);
        c.tick(1.0);
        c.tick(1.0);
        assert_eq!(c.current(), 4);
        c.tick(0.1);
        c.tick(0.1);
        c.tick(0.5);
        c.tick(0.1);
        c.tick(0.1);
        assert_eq!(c.current(), 4);
        assert_eq!(c.tick(0.1), 1);
    }

    #[test]
    fn policy_validation() {
        assert!(ScalePolicy::pca_default().validate().is_ok());
        let mut p = ScalePolicy::ltca_default();
        p.min_replicas = 0;
        assert!(p.validate().is_err());
        p = ScalePolicy::ltca_default();
        p.target_utilization = 1.0;
        assert!(p.validate().is_err());
    }
}
