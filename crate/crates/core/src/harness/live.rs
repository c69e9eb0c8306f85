//! Wall-clock load generation against real services.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use crate::cert::{CaIdentity, TrustStore};
use crate::credential::Csr;
use crate::crypto::KeyPair;
use crate::derive;
use crate::domain::Domain;
use crate::envelope::{Clock, Envelope};
use crate::ltca::{Ltca, LtcaError};
use crate::pca::{Pca, PcaError, PseudonymRequest};
use crate::transport::{LtcaApi, PcaApi};
use crate::vehicle::{verify_batch, PcaTarget, Vehicle};

use super::load::{vehicle_plans, LoadConfig, RunConfig, VehiclePlan};
use super::report::{LatencyReport, Op, Outcome, Recorder, ReplicaPoint, Sample};
use super::scale::{ReplicaPool, ScaleController, ScalePolicy};

/// Where the generated vehicles send their requests.
#[derive(Clone)]
pub struct Endpoints {
    pub ltca: Arc<dyn LtcaApi>,
    pub pca: Arc<dyn PcaApi>,
    pub ltca_identity: CaIdentity,
    pub pca_identity: CaIdentity,
    pub tau_p: u64,
    pub clock: Arc<dyn Clock>,
}

impl std::fmt::Debug for Endpoints {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Endpoints")
            .field("ltca", &self.ltca_identity.id)
            .field("pca", &self.pca_identity.id)
            .finish()
    }
}

/// In-process replica pools plus the controllers that size them.
pub struct Autoscale {
    pub ltca: Arc<ReplicaPool<Ltca>>,
    pub pca: Arc<ReplicaPool<Pca>>,
    pub ltca_policy: ScalePolicy,
    pub pca_policy: ScalePolicy,
    pub tick: Duration,
}

pub struct LiveOptions {
    /// Generator threads, i.e. requests in flight at most.
    pub concurrency: usize,
    /// Check every returned batch like a vehicle would.
    pub verify: bool,
    pub autoscale: Option<Autoscale>,
}

impl Default for LiveOptions {
    fn default() -> Self {
        LiveOptions {
            concurrency: 16,
            verify: true,
            autoscale: None,
        }
    }
}

struct Slot {
    plan: VehiclePlan,
    vehicle: Option<Vehicle>,
    last_t_e: u64,
    batch: usize,
}

#[derive(Default)]
struct Queue {
    due: BinaryHeap<Reverse<(u64, usize)>>,
    active: usize,
}

fn ltca_outcome(e: &LtcaError) -> Outcome {
    match e {
        LtcaError::SybilDenied | LtcaError::ReusedForeignTicket => Outcome::Denied,
        _ => Outcome::Failed,
    }
}

fn pca_outcome(e: &PcaError) -> Outcome {
    match e {
        PcaError::TicketReused => Outcome::Denied,
        _ => Outcome::Failed,
    }
}

/// Runs `cfg` against `endpoints`. Each vehicle registers on arrival, then
/// loops ticket, pseudonyms, think until its plan ends. Failures are
/// recorded and the run carries on.
pub fn run_load(
    cfg: &LoadConfig,
    endpoints: &Endpoints,
    seed: u64,
    opts: LiveOptions,
) -> LatencyReport {
    let recorder = Recorder::new();
    let plans = vehicle_plans(cfg, seed);
    let start = Instant::now();
    let elapsed_ms = || start.elapsed().as_millis() as u64;

    let mut queue = Queue::default();
    let slots: Vec<Mutex<Slot>> = plans
        .into_iter()
        .map(|mut plan| {
            queue.due.push(Reverse((plan.spawn_ms, plan.id)));
            let (_, batch) = plan.next_step();
            Mutex::new(Slot {
                plan,
                vehicle: None,
                last_t_e: 0,
                batch,
            })
        })
        .collect();
    let queue = Mutex::new(queue);
    let wake = Condvar::new();
    let done = AtomicBool::new(false);

    std::thread::scope(|scope| {
        if let Some(a) = &opts.autoscale {
            let (recorder, done) = (&recorder, &done);
            scope.spawn(move || {
                let mut lc = ScaleController::new(a.ltca_policy);
                let mut pc = ScaleController::new(a.pca_policy);
                a.ltca.resize(lc.current());
                a.pca.resize(pc.current());
                let mut last = Instant::now();
                while !done.load(Ordering::SeqCst) {
                    std::thread::sleep(Duration::from_millis(20));
                    if last.elapsed() < a.tick {
                        continue;
                    }
                    last = Instant::now();
                    let (lu, pu) = (a.ltca.utilization(), a.pca.utilization());
                    a.ltca.resize(lc.tick(lu));
                    a.pca.resize(pc.tick(pu));
                    recorder.replica_point(ReplicaPoint {
                        t_ms: elapsed_ms(),
                        ltca_replicas: a.ltca.len(),
                        pca_replicas: a.pca.len(),
                        ltca_utilization: lu,
                        pca_utilization: pu,
                    });
                }
            });
        }

        let workers: Vec<_> = (0..opts.concurrency.max(1))
            .map(|_| {
                let (slots, queue, wake, recorder) = (&slots, &queue, &wake, &recorder);
                let verify = opts.verify;
                scope.spawn(move || loop {
                    let idx = {
                        let mut q = queue.lock().unwrap();
                        loop {
                            match q.due.peek().copied() {
                                Some(Reverse((due, idx))) => {
                                    let now = elapsed_ms();
                                    if due <= now {
                                        q.due.pop();
                                        q.active += 1;
                                        break Some(idx);
                                    }
                                    q = wake
                                        .wait_timeout(q, Duration::from_millis(due - now))
                                        .unwrap()
                                        .0;
                                }
                                None if q.active == 0 => break None,
                                None => q = wake.wait(q).unwrap(),
                            }
                        }
                    };
                    let Some(idx) = idx else {
                        wake.notify_all();
                        return;
                    };
                    let mut slot = slots[idx].lock().unwrap();
                    let next = step(&mut slot, endpoints, recorder, start, verify);
                    let mut q = queue.lock().unwrap();
                    q.active -= 1;
                    if let Some(due) = next {
                        q.due.push(Reverse((due, idx)));
                    }
                    drop(q);
                    wake.notify_all();
                })
            })
            .collect();
        for w in workers {
            let _ = w.join();
        }
        done.store(true, Ordering::SeqCst);
    });
    recorder.finish()
}

/// One acquisition for one vehicle; returns when it should go again.
fn step(
    slot: &mut Slot,
    ep: &Endpoints,
    rec: &Recorder,
    start: Instant,
    verify: bool,
) -> Option<u64> {
    let now_ms = || start.elapsed().as_millis() as u64;
    if slot.vehicle.is_none() {
        let mut v = Vehicle::new(
            ep.ltca_identity.clone(),
            TrustStore::new(),
            ep.clock.clone(),
        );
        if let Err(e) = v.register(&*ep.ltca, None) {
            log::warn!("vehicle {} could not register: {e}", slot.plan.id);
            return None;
        }
        slot.vehicle = Some(v);
    }
    let vehicle = slot.vehicle.as_ref().unwrap();
    let batch = slot.batch;
    let tau = ep.tau_p;
    let t_s = derive::align_up(ep.clock.now_s(), tau).max(slot.last_t_e);
    let t_e = t_s + batch as u64 * tau;

    let t0 = now_ms();
    let began = Instant::now();
    rec.issue(Op::EndToEnd);
    rec.issue(Op::Ticket);
    let (req, rnd_tkt) = vehicle
        .build_ticket_request(&ep.pca_identity.id, t_s, t_e)
        .expect("registered vehicle");
    let sent = Instant::now();
    let ticket = ep.ltca.issue_ticket(&req);
    let ticket_ms = sent.elapsed().as_secs_f64() * 1e3;
    let end_to_end = |outcome| Sample {
        op: Op::EndToEnd,
        t_submit_ms: t0,
        latency_ms: began.elapsed().as_secs_f64() * 1e3,
        outcome,
        batch,
    };
    let ticket = match ticket {
        Ok(t) => {
            rec.record(Sample {
                op: Op::Ticket,
                t_submit_ms: t0,
                latency_ms: ticket_ms,
                outcome: Outcome::Granted,
                batch: 0,
            });
            t
        }
        Err(e) => {
            let outcome = ltca_outcome(&e);
            log::debug!("ticket for vehicle {}: {e}", slot.plan.id);
            rec.record(Sample {
                op: Op::Ticket,
                t_submit_ms: t0,
                latency_ms: ticket_ms,
                outcome,
                batch: 0,
            });
            rec.record(end_to_end(outcome));
            return next_due(slot, now_ms());
        }
    };
    slot.last_t_e = t_e;

    let keys: Vec<KeyPair> = (0..batch).map(|_| KeyPair::generate()).collect();
    let preq = PseudonymRequest {
        envelope: Envelope::new_request(ep.clock.now_ms()),
        rnd_n_tkt: rnd_tkt,
        ticket: ticket.ticket,
        csrs: keys.iter().map(Csr::new).collect(),
    };
    rec.issue(Op::Pseudonyms);
    let t1 = now_ms();
    let sent = Instant::now();
    let res = ep.pca.issue_pseudonyms(&preq);
    let pseudonyms_ms = sent.elapsed().as_secs_f64() * 1e3;
    let outcome = match &res {
        Ok(r) => {
            let target = PcaTarget {
                identity: &ep.pca_identity,
                tau_p: tau,
            };
            if verify && verify_batch(r, &preq, target).is_err() {
                Outcome::Failed
            } else {
                Outcome::Granted
            }
        }
        Err(e) => {
            log::debug!("pseudonyms for vehicle {}: {e}", slot.plan.id);
            pca_outcome(e)
        }
    };
    rec.record(Sample {
        op: Op::Pseudonyms,
        t_submit_ms: t1,
        latency_ms: pseudonyms_ms,
        outcome,
        batch,
    });
    rec.record(end_to_end(outcome));
    next_due(slot, now_ms())
}

fn next_due(slot: &mut Slot, now: u64) -> Option<u64> {
    let (think, batch) = slot.plan.next_step();
    slot.batch = batch;
    let due = now + think;
    (due < slot.plan.stop_ms).then_some(due)
}

/// Builds an in-process domain sized by `cfg` and runs the load against
/// autoscaled replica pools.
pub fn run_in_process(cfg: &RunConfig, seed: u64) -> LatencyReport {
    let domain = Domain::builder("load")
        .tau_p(cfg.tau_p)
        .max_coverage(u64::MAX / 4)
        .build();
    let ltca = Arc::new(ReplicaPool::new(
        domain.ltca.clone(),
        cfg.ltca_scale.min_replicas,
    ));
    let pca = Arc::new(ReplicaPool::new(
        domain.pca().clone(),
        cfg.pca_scale.min_replicas,
    ));
    let endpoints = Endpoints {
        ltca: ltca.clone(),
        pca: pca.clone(),
        ltca_identity: domain.ltca.identity().clone(),
        pca_identity: domain.pca().identity().clone(),
        tau_p: cfg.tau_p,
        clock: domain.clock.clone(),
    };
    let opts = LiveOptions {
        concurrency: cfg.concurrency,
        verify: true,
        autoscale: Some(Autoscale {
            ltca,
            pca,
            ltca_policy: cfg.ltca_scale,
            pca_policy: cfg.pca_scale,
            tick: Duration::from_secs(5),
        }),
    };
    run_load(&cfg.load, &endpoints, seed, opts)
}
