//! Virtual-time model of autoscaled LTCA and PCA replica pools.
//!
//! Each replica is one single-core worker serving a FIFO queue. Service
//! times come from a cost model calibrated against the real services, so a
//! flash crowd of thousands of vehicles can be replayed on one core in
//! seconds. The controllers read the same [`LoadMeter`] the services
//! publish, scaled to a per-replica CPU request the way a Kubernetes HPA
//! scales usage by the pod's request.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::credential::Csr;
use crate::crypto::KeyPair;
use crate::domain::Domain;
use crate::envelope::{Envelope, ManualClock};
use crate::gateway::metrics::LoadMeter;
use crate::pca::PseudonymRequest;
use crate::vehicle::Vehicle;

use super::load::{vehicle_plans, LoadConfig, VehiclePlan};
use super::report::{LatencyReport, Op, Outcome, Recorder, ReplicaPoint, Sample};
use super::scale::{ScaleController, ScalePolicy};

/// Single-core processing cost of each operation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub ticket_ms: f64,
    pub pseudonym_base_ms: f64,
    pub pseudonym_per_item_ms: f64,
    /// Added to every request, outside the replicas.
    pub network_ms: f64,
    /// Service times vary uniformly by `±jitter` (fraction).
    pub jitter: f64,
}

impl CostModel {
    pub fn pseudonyms_ms(&self, n: usize) -> f64 {
        self.pseudonym_base_ms + self.pseudonym_per_item_ms * n as f64
    }

    /// Times ticket issuance and batches of 10 and 100 on the real services
    /// and fits a line through the batch costs.
    pub fn calibrate(rounds: usize) -> Self {
        let rounds = rounds.max(1);
        let clock = ManualClock::at_secs(1_700_000_000);
        let d = Domain::builder("calibration")
            .tau_p(60)
            .clock(std::sync::Arc::new(clock.clone()))
            .max_coverage(u64::MAX / 4)
            .build();
        let mut v = d.registered_vehicle();
        let mut t_s = 1_700_000_040;
        let mut ticket_ms = f64::INFINITY;
        let mut batch_ms = |n: usize, v: &mut Vehicle, t_s: &mut u64| -> f64 {
            let mut best = f64::INFINITY;
            for _ in 0..rounds {
                let t_e = *t_s + 60 * n as u64;
                let (req, rnd) = v.build_ticket_request(d.pca().id(), *t_s, t_e).unwrap();
                let began = Instant::now();
                let res = d.ltca.issue_ticket(&req).unwrap();
                ticket_ms = ticket_ms.min(began.elapsed().as_secs_f64() * 1e3);
                *t_s = t_e;
                let keys: Vec<KeyPair> = (0..n).map(|_| KeyPair::generate()).collect();
                let preq = PseudonymRequest {
                    envelope: Envelope::new_request(1_700_000_000_000),
                    rnd_n_tkt: rnd,
                    ticket: res.ticket,
                    csrs: keys.iter().map(Csr::new).collect(),
                };
                let began = Instant::now();
                d.pca().issue_pseudonyms(&preq).unwrap();
                best = best.min(began.elapsed().as_secs_f64() * 1e3);
            }
            best
        };
        let c10 = batch_ms(10, &mut v, &mut t_s);
        let c100 = batch_ms(100, &mut v, &mut t_s);
        let per_item = ((c100 - c10) / 90.0).max(1e-3);
        CostModel {
            ticket_ms,
            pseudonym_base_ms: (c10 - 10.0 * per_item).max(0.0),
            pseudonym_per_item_ms: per_item,
            network_ms: 1.0,
            jitter: 0.1,
        }
    }
}

impl Default for CostModel {
    /// Roughly what one desktop core does with P-256.
    fn default() -> Self {
        CostModel {
            ticket_ms: 0.5,
            pseudonym_base_ms: 0.5,
            pseudonym_per_item_ms: 0.35,
            network_ms: 1.0,
            jitter: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub load: LoadConfig,
    pub ltca_scale: ScalePolicy,
    pub pca_scale: ScalePolicy,
    pub cost: CostModel,
    /// Control period, seconds.
    pub tick_s: f64,
    /// Load EWMA time constant, seconds.
    pub window_s: f64,
    /// CPU request of one replica as a fraction of its one-core limit.
    pub ltca_cpu_request: f64,
    pub pca_cpu_request: f64,
    /// Seconds a new replica takes before it serves.
    pub startup_s: f64,
    /// Virtual time simulated after the load ends, for scale-in.
    pub drain_s: f64,
}

impl SimConfig {
    pub fn new(load: LoadConfig, cost: CostModel) -> Self {
        SimConfig {
            load,
            ltca_scale: ScalePolicy::ltca_default(),
            pca_scale: ScalePolicy::pca_default(),
            cost,
            tick_s: 5.0,
            window_s: 10.0,
            ltca_cpu_request: 0.5,
            pca_cpu_request: 0.7,
            startup_s: 0.0,
            drain_s: 120.0,
        }
    }
}

type Micros = u64;

fn us(ms: f64) -> Micros {
    (ms * 1000.0).round().max(0.0) as Micros
}

fn dur(t: Micros) -> Duration {
    Duration::from_micros(t)
}

#[derive(Debug, Clone, Copy)]
struct Job {
    vehicle: usize,
    op: Op,
    batch: usize,
    submit: Micros,
    /// Start of the vehicle's acquisition, for the end-to-end sample.
    began: Micros,
}

struct Pool {
    controller: ScaleController,
    cpu_request: f64,
    /// Replicas serving now.
    ready: usize,
    /// Replicas still starting, with the time they become ready.
    starting: Vec<Micros>,
    busy: usize,
    queue: VecDeque<Job>,
    meter: LoadMeter,
}

impl Pool {
    fn new(policy: ScalePolicy, cpu_request: f64, window_s: f64) -> Self {
        let controller = ScaleController::new(policy);
        let ready = controller.current();
        Pool {
            controller,
            cpu_request,
            ready,
            starting: Vec::new(),
            busy: 0,
            queue: VecDeque::new(),
            meter: LoadMeter::with_window(ready, Duration::from_secs_f64(window_s)),
        }
    }

    fn replicas(&self) -> usize {
        self.ready + self.starting.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Event {
    /// A vehicle starts an acquisition.
    Start(usize),
    /// A replica finishes the job with this id.
    Done(usize),
    /// A job held in `arrivals` reaches its service.
    Arrive(usize),
    Tick,
}

struct Sim<'a> {
    cfg: &'a SimConfig,
    now: Micros,
    seq: u64,
    events: BinaryHeap<Reverse<(Micros, u64, Event)>>,
    jobs: Vec<(Job, u64)>,
    arrivals: Vec<Job>,
    plans: Vec<VehiclePlan>,
    batches: Vec<usize>,
    ltca: Pool,
    pca: Pool,
    rng: ChaCha8Rng,
    rec: Recorder,
}

impl Sim<'_> {
    fn schedule(&mut self, at: Micros, e: Event) {
        self.seq += 1;
        self.events.push(Reverse((at, self.seq, e)));
    }

    fn pool(&mut self, op: Op) -> &mut Pool {
        match op {
            Op::Ticket => &mut self.ltca,
            _ => &mut self.pca,
        }
    }

    fn service_us(&mut self, job: &Job) -> Micros {
        let c = &self.cfg.cost;
        let base = match job.op {
            Op::Ticket => c.ticket_ms,
            _ => c.pseudonyms_ms(job.batch),
        };
        let j = if c.jitter > 0.0 {
            self.rng.gen_range(-c.jitter..=c.jitter)
        } else {
            0.0
        };
        us(base * (1.0 + j))
    }

    fn submit(&mut self, job: Job) {
        self.rec.issue(job.op);
        self.pool(job.op).queue.push_back(job);
        self.dispatch(job.op);
    }

    fn dispatch(&mut self, op: Op) {
        loop {
            let now = self.now;
            let pool = self.pool(op);
            if pool.busy >= pool.ready {
                return;
            }
            let Some(job) = pool.queue.pop_front() else {
                return;
            };
            pool.busy += 1;
            let token = pool.meter.begin_at(dur(now));
            let service = self.service_us(&job);
            self.jobs.push((job, token));
            let id = self.jobs.len() - 1;
            self.schedule(now + service, Event::Done(id));
        }
    }

    fn start(&mut self, v: usize) {
        self.rec.issue(Op::EndToEnd);
        self.submit(Job {
            vehicle: v,
            op: Op::Ticket,
            batch: 0,
            submit: self.now,
            began: self.now,
        });
    }

    fn done(&mut self, id: usize) {
        let (job, token) = self.jobs[id];
        let now = self.now;
        let pool = self.pool(job.op);
        pool.busy -= 1;
        pool.meter.end_at(token, dur(now));
        self.dispatch(job.op);

        let net = self.cfg.cost.network_ms;
        let latency = (now - job.submit) as f64 / 1e3 + net;
        self.rec.record(Sample {
            op: job.op,
            t_submit_ms: job.submit / 1000,
            latency_ms: latency,
            outcome: Outcome::Granted,
            batch: job.batch,
        });
        match job.op {
            Op::Ticket => {
                let batch = self.batches[job.vehicle];
                let at = now + us(net);
                self.arrivals.push(Job {
                    vehicle: job.vehicle,
                    op: Op::Pseudonyms,
                    batch,
                    submit: at,
                    began: job.began,
                });
                self.schedule(at, Event::Arrive(self.arrivals.len() - 1));
            }
            _ => {
                self.rec.record(Sample {
                    op: Op::EndToEnd,
                    t_submit_ms: job.began / 1000,
                    latency_ms: (now - job.began) as f64 / 1e3 + 2.0 * net,
                    outcome: Outcome::Granted,
                    batch: job.batch,
                });
                let plan = &mut self.plans[job.vehicle];
                let (think, batch) = plan.next_step();
                let stop = plan.stop_ms * 1000;
                self.batches[job.vehicle] = batch;
                let due = now + us(net) + think * 1000;
                if due < stop {
                    self.schedule(due, Event::Start(job.vehicle));
                }
            }
        }
    }

    fn tick(&mut self) {
        let now = self.now;
        let startup = us(self.cfg.startup_s * 1000.0);
        let mut point = ReplicaPoint {
            t_ms: now / 1000,
            ltca_replicas: 0,
            pca_replicas: 0,
            ltca_utilization: 0.0,
            pca_utilization: 0.0,
        };
        for op in [Op::Ticket, Op::Pseudonyms] {
            let pool = self.pool(op);
            pool.starting.retain(|&ready_at| {
                if ready_at <= now {
                    pool.ready += 1;
                    false
                } else {
                    true
                }
            });
            let load = pool.meter.sample_at(dur(now));
            let utilization = load / pool.cpu_request;
            let want = pool.controller.tick(utilization);
            let have = pool.replicas();
            if want > have {
                for _ in have..want {
                    if startup == 0 {
                        pool.ready += 1;
                    } else {
                        pool.starting.push(now + startup);
                    }
                }
            } else if want < have {
                let mut drop = have - want;
                while drop > 0 && pool.starting.pop().is_some() {
                    drop -= 1;
                }
                pool.ready -= drop;
            }
            pool.meter.set_capacity(pool.ready);
            match op {
                Op::Ticket => {
                    point.ltca_replicas = pool.replicas();
                    point.ltca_utilization = utilization;
                }
                _ => {
                    point.pca_replicas = pool.replicas();
                    point.pca_utilization = utilization;
                }
            }
            self.dispatch(op);
        }
        self.rec.replica_point(point);
    }
}

/// Replays `cfg.load` through the queueing model. Deterministic for a seed.
pub fn simulate(cfg: &SimConfig, seed: u64) -> LatencyReport {
    let mut plans = vehicle_plans(&cfg.load, seed);
    let batches = plans.iter_mut().map(|p| p.next_step().1).collect();
    let mut sim = Sim {
        cfg,
        now: 0,
        seq: 0,
        events: BinaryHeap::new(),
        jobs: Vec::new(),
        arrivals: Vec::new(),
        batches,
        ltca: Pool::new(cfg.ltca_scale, cfg.ltca_cpu_request, cfg.window_s),
        pca: Pool::new(cfg.pca_scale, cfg.pca_cpu_request, cfg.window_s),
        rng: ChaCha8Rng::seed_from_u64(seed),
        rec: Recorder::new(),
        plans: Vec::new(),
    };
    for p in &plans {
        sim.schedule(p.spawn_ms * 1000, Event::Start(p.id));
    }
    sim.plans = plans;
    let end = us(cfg.load.duration_s * 1000.0 + cfg.drain_s * 1000.0);
    let tick = us(cfg.tick_s * 1000.0).max(1);
    let mut t = tick;
    while t <= end {
        sim.schedule(t, Event::Tick);
        t += tick;
    }
    while let Some(Reverse((at, _, e))) = sim.events.pop() {
        sim.now = at;
        match e {
            Event::Start(v) => sim.start(v),
            Event::Done(id) => sim.done(id),
            Event::Arrive(id) => {
                let job = sim.arrivals[id];
                sim.submit(job);
            }
            Event::Tick => sim.tick(),
        }
    }
    sim.rec.finish()
}
