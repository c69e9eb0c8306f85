//! Acceptance suite. Runs without the libtest harness so that every
//! criterion prints exactly one PASS/FAIL line, even on success.

mod common;

use std::sync::atomic::{AtomicU8, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vpki::credential::{Csr, SignedTicket};
use vpki::crypto::{Digest, KeyPair, PublicKey};
use vpki::derive;
use vpki::domain::Domain;
use vpki::envelope::{Envelope, ManualClock};
use vpki::harness::{
    simulate, sybil_race_on, CostModel, FlashCrowd, LoadConfig, Op, RaceMode, SimConfig,
};
use vpki::ltca::LtcaError;
use vpki::pca::{Pca, PcaError, PseudonymRequest, ResolveRequest, ResolveResponse};
use vpki::ra::{Ra, RaConfig, Verdict};
use vpki::transport::{Leg, RaApi, ResolveApi, Tapped, Transcript};
use vpki::vehicle::{ClientError, HeldTicket};

use common::{contains_any, encodings_of, reference_batch};

type Outcome = Result<String, String>;

const T0: u64 = 1_700_000_000;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn race(mode: RaceMode) -> Outcome {
    let started = Instant::now();
    let domain = Domain::builder("race").build();
    let mut violations = Vec::new();
    for seed in 0..100 {
        let o = sybil_race_on(&domain, 64, mode, 4, seed);
        if (o.granted, o.denied, o.failed) != (1, 63, 0) {
            violations.push(format!("seed {seed}: {o:?}"));
        }
    }
    let elapsed = started.elapsed();
    check(violations.is_empty(), || {
        format!(
            "{} violations: {:?}",
            violations.len(),
            &violations[..violations.len().min(3)]
        )
    })?;
    if mode == RaceMode::Ticket {
        check(elapsed < Duration::from_secs(30), || {
            format!("took {elapsed:.1?}, limit 30 s")
        })?;
    }
    Ok(format!(
        "100 seeds x 64 racers on 4 replicas, all (1, 63), {elapsed:.1?}"
    ))
}

fn c1_ticket_sybil() -> Outcome {
    race(RaceMode::Ticket)
}

fn c2_pseudonym_sybil() -> Outcome {
    race(RaceMode::Pseudonym)
}

fn compare_chain(
    label: &str,
    ik_tkt: &Digest,
    keys: &[PublicKey],
    ticket_t_s: u64,
    tau: u64,
    rnd_v: &[u8; 32],
    got: &[(u64, u64, Digest, Digest)],
) -> Result<(), String> {
    let key_bytes: Vec<Vec<u8>> = keys.iter().map(|k| k.as_bytes().to_vec()).collect();
    let want = reference_batch(&ik_tkt.0, &key_bytes, ticket_t_s, tau, rnd_v);
    check(want.len() == got.len(), || {
        format!("{label}: length {} vs {}", got.len(), want.len())
    })?;
    for (i, (w, g)) in want.iter().zip(got).enumerate() {
        let same = (w.t_s, w.t_e, w.ik_p, w.serial) == (g.0, g.1, g.2 .0, g.3 .0);
        check(same, || format!("{label}: mismatch at pseudonym {}", i + 1))?;
    }
    Ok(())
}

/// 1000 random batches through the issuance chain computation, plus full
/// signed batches from a live PCA, each against the reference recomputation.
fn c3_chain_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let pool: Vec<PublicKey> = (0..512)
        .map(|_| KeyPair::generate().public().clone())
        .collect();
    let mut total = 0usize;
    for b in 0..1000 {
        let n = rng.gen_range(1..=500);
        let tau = [60, 300, 600, 3600][rng.gen_range(0..4)];
        let t_s: u64 = rng.gen_range(T0..T0 + 10_000_000);
        let ik_tkt = Digest(rng.gen());
        let rnd_v: [u8; 32] = rng.gen();
        let keys: Vec<PublicKey> = (0..n)
            .map(|_| pool[rng.gen_range(0..pool.len())].clone())
            .collect();
        let slots = derive::assign_slots(t_s, tau, n);
        let chain = derive::derive_chain(&ik_tkt, &keys, &slots, &rnd_v);
        let got: Vec<_> = slots
            .iter()
            .zip(&chain)
            .map(|(s, l)| (s.t_s, s.t_e, l.ik_p, l.serial))
            .collect();
        compare_chain(
            &format!("batch {b}"),
            &ik_tkt,
            &keys,
            t_s,
            tau,
            &rnd_v,
            &got,
        )?;
        let from_first = derive::serials_from_first(&chain[0].serial, &rnd_v, n);
        check(
            from_first.iter().zip(&chain).all(|(a, l)| *a == l.serial),
            || format!("batch {b}: serials not derivable from the first"),
        )?;
        total += n;
    }

    let clock = ManualClock::at_secs(T0);
    let domain = Domain::builder("oracle")
        .clock(Arc::new(clock))
        .tau_p(60)
        .max_batch(500)
        .build();
    let pca = domain.pca();
    let mut live = 0usize;
    for b in 0..25 {
        let n = if b == 0 { 500 } else { rng.gen_range(1..=500) };
        let mut v = domain.registered_vehicle();
        let t_s = T0 + rng.gen_range(0..3600);
        let held = v
            .request_ticket(&domain.ltca, pca.id(), t_s, t_s + 501 * 60)
            .map_err(|e| e.to_string())?;
        let keys: Vec<KeyPair> = (0..n).map(|_| KeyPair::generate()).collect();
        let req = PseudonymRequest {
            envelope: Envelope::new_request(domain.clock.now_ms()),
            rnd_n_tkt: held.rnd_tkt,
            ticket: held.ticket.clone(),
            csrs: keys.iter().map(Csr::new).collect(),
        };
        let res = pca.issue_pseudonyms(&req).map_err(|e| e.to_string())?;
        check(
            res.pseudonyms
                .iter()
                .all(|p| p.verify(pca.identity().public_key())),
            || "bad PCA signature".into(),
        )?;
        let got: Vec<_> = res
            .pseudonyms
            .iter()
            .map(|p| {
                (
                    p.pseudonym.t_s,
                    p.pseudonym.t_e,
                    p.pseudonym.ik_p,
                    p.pseudonym.serial,
                )
            })
            .collect();
        let pubs: Vec<PublicKey> = keys.iter().map(|k| k.public().clone()).collect();
        compare_chain(
            &format!("live batch {b}"),
            &held.ticket.ticket.ik_tkt,
            &pubs,
            held.ticket.ticket.t_s,
            60,
            &res.rnd_v,
            &got,
        )?;
        live += n;
    }
    Ok(format!(
        "1000 batches ({total} pseudonyms) + {live} PCA-issued pseudonyms bit-exact"
    ))
}

/// A PCA endpoint that answers resolution requests with altered content,
/// correctly re-signed, as a colluding or compromised PCA would.
struct LyingPca {
    pca: Pca,
    pca_key: KeyPair,
    ltca_key: KeyPair,
    mode: AtomicU8,
}

const HONEST: u8 = 0;
const FLIP_TICKET_IK: u8 = 1;
const FLIP_RND: u8 = 2;

impl ResolveApi for LyingPca {
    fn resolve(&self, req: &ResolveRequest) -> Result<ResolveResponse, PcaError> {
        let mut res = self.pca.resolve_pseudonym(req)?;
        match self.mode.load(Ordering::SeqCst) {
            FLIP_TICKET_IK => {
                let mut t = SignedTicket::decode(&res.ticket)
                    .expect("stored ticket")
                    .ticket;
                t.ik_tkt.0[7] ^= 0x20;
                res.ticket = t.sign(&self.ltca_key).encode();
            }
            FLIP_RND => res.rnd_ik_p.0[0] ^= 1,
            _ => return Ok(res),
        }
        Ok(ResolveResponse::sign(
            res.envelope,
            res.serial,
            res.ticket,
            res.rnd_ik_p,
            &self.pca_key,
        ))
    }
}

fn c4_validation() -> Outcome {
    let clock = ManualClock::at_secs(T0);
    let domain = Domain::builder("val")
        .clock(Arc::new(clock.clone()))
        .tau_p(60)
        .ra_rate(1_000_000)
        .build();
    let tau = 60;
    let t_s = derive::align_up(T0, tau);
    let pca = domain.pca();

    let mut issued = Vec::new();
    for _ in 0..10 {
        let mut v = domain.registered_vehicle();
        let held = v
            .request_ticket(&domain.ltca, pca.id(), t_s, t_s + 100 * tau)
            .map_err(|e| e.to_string())?;
        issued.extend(
            v.acquire_pseudonyms(pca, domain.pca_target(0), &held, 100)
                .map_err(|e| e.to_string())?,
        );
    }
    let mut reporter = domain.registered_vehicle();
    let held = reporter
        .request_ticket(&domain.ltca, pca.id(), t_s, t_s + 2 * tau)
        .unwrap();
    reporter
        .acquire_pseudonyms(pca, domain.pca_target(0), &held, 2)
        .unwrap();
    clock.set_secs(t_s + 1);

    let mut honest_ok = 0;
    for p in &issued {
        let report = domain
            .ra
            .validate_issuance(&reporter.report(p.clone()).unwrap())
            .map_err(|e| e.to_string())?;
        check(report.verdict.is_valid(), || {
            format!("honest pseudonym rejected: {:?}", report.verdict)
        })?;
        honest_ok += 1;
    }

    let liar = Arc::new(LyingPca {
        pca: pca.clone(),
        pca_key: domain.pca_keys[0].clone(),
        ltca_key: domain.ltca_key.clone(),
        mode: AtomicU8::new(HONEST),
    });
    let ra = Ra::new(
        RaConfig {
            rate_per_minute: 1_000_000,
            ..RaConfig::new(domain.ra.id())
        },
        domain.ra.identity().clone(),
        domain.ra_key.clone(),
        domain.clock.clone(),
    );
    ra.trust_ltca(domain.ltca.identity().clone());
    ra.add_pca(pca.identity().clone(), liar.clone());
    let pca_key = &domain.pca_keys[0];

    let mut stages = std::collections::BTreeMap::<String, usize>::new();
    for (i, p) in issued.iter().enumerate() {
        let kind = i % 8;
        let mut q = p.pseudonym.clone();
        liar.mode.store(HONEST, Ordering::SeqCst);
        let tampered = match kind {
            0 => {
                q.ik_p.0[i % 32] ^= 1;
                q.sign(pca_key)
            }
            1 => {
                q.public_key = KeyPair::generate().public().clone();
                q.sign(pca_key)
            }
            2 => {
                q.t_s -= tau;
                q.sign(pca_key)
            }
            3 => {
                q.t_e += 1;
                q.sign(pca_key)
            }
            4 => {
                liar.mode.store(FLIP_TICKET_IK, Ordering::SeqCst);
                p.clone()
            }
            5 => {
                liar.mode.store(FLIP_RND, Ordering::SeqCst);
                p.clone()
            }
            6 => {
                let mut s = p.clone();
                s.pseudonym.t_e += tau;
                s
            }
            _ => {
                q.serial.0[0] ^= 0x80;
                q.sign(pca_key)
            }
        };
        let report = ra
            .validate_issuance(&reporter.report(tampered).unwrap())
            .map_err(|e| format!("tamper kind {kind}: {e}"))?;
        match report.verdict {
            Verdict::InvalidIssuance { stage } => *stages.entry(stage).or_default() += 1,
            Verdict::ValidIssuance => {
                return Err(format!("tamper kind {kind} on pseudonym {i} validated"))
            }
        }
    }
    let invalid: usize = stages.values().sum();
    Ok(format!(
        "{honest_ok}/1000 honest valid, {invalid}/1000 tampers invalid {stages:?}"
    ))
}

/// Random ticket sequences per vehicle; every granted ticket is spent on a
/// batch. Checks that granted `[t_s, exp)` intervals never overlap per
/// vehicle and that every slot is aligned and abutting.
fn c5_non_overlap() -> Outcome {
    use proptest::prelude::*;
    use proptest::test_runner::{Config, TestCaseError, TestRunner};
    use std::cell::RefCell;

    let tau = 60;
    let clock = ManualClock::at_secs(T0);
    let domain = Domain::builder("prop")
        .clock(Arc::new(clock))
        .tau_p(tau)
        .build();
    let fleet: RefCell<Vec<_>> =
        RefCell::new((0..16).map(|_| domain.registered_vehicle()).collect());
    let granted: RefCell<Vec<Vec<(u64, u64)>>> = RefCell::new(vec![Vec::new(); 16]);
    let epoch = RefCell::new(0u64);
    let stats = RefCell::new((0usize, 0usize, 0usize));

    let step = (0u64..12, 1u64..8, 1usize..4, prop::bool::ANY);
    let strategy = (0usize..16, prop::collection::vec(step, 1..5));
    let mut runner = TestRunner::new(Config {
        cases: 10_000,
        failure_persistence: None,
        ..Config::default()
    });
    let result = runner.run(&strategy, |(vi, steps)| {
        let base = {
            let mut e = epoch.borrow_mut();
            *e += 1;
            T0 + *e * 40 * tau
        };
        let mut fleet = fleet.borrow_mut();
        let v = &mut fleet[vi];
        for (off, len, n, unaligned) in steps {
            let t_s = base + off * tau + if unaligned { 17 } else { 0 };
            let t_e = t_s + len * tau;
            stats.borrow_mut().0 += 1;
            match v.request_ticket(&domain.ltca, domain.pca().id(), t_s, t_e) {
                Ok(held) => {
                    let t = &held.ticket.ticket;
                    let mine = &mut granted.borrow_mut()[vi];
                    for &(a, b) in mine.iter() {
                        prop_assert!(
                            t.exp_tkt <= a || b <= t.t_s,
                            "[{}, {}) overlaps [{a}, {b})",
                            t.t_s,
                            t.exp_tkt
                        );
                    }
                    mine.push((t.t_s, t.exp_tkt));
                    stats.borrow_mut().1 += 1;
                    let fits = ((t_e - derive::align_up(t_s, tau)) / tau) as usize;
                    if fits == 0 {
                        continue;
                    }
                    let batch = v
                        .acquire_pseudonyms(domain.pca(), domain.pca_target(0), &held, n.min(fits))
                        .map_err(|e| TestCaseError::fail(e.to_string()))?;
                    for p in &batch {
                        prop_assert_eq!(p.pseudonym.t_s % tau, 0);
                        prop_assert_eq!(p.pseudonym.t_e - p.pseudonym.t_s, tau);
                        prop_assert!(p.pseudonym.t_s >= t.t_s && p.pseudonym.t_e <= t.t_e);
                    }
                    for w in batch.windows(2) {
                        prop_assert_eq!(w[0].pseudonym.t_e, w[1].pseudonym.t_s);
                    }
                    stats.borrow_mut().2 += batch.len();
                }
                Err(ClientError::Ltca(LtcaError::SybilDenied)) => {}
                Err(e) => return Err(TestCaseError::fail(format!("unexpected error: {e}"))),
            }
        }
        v.state.pool.clear();
        Ok(())
    });
    result.map_err(|e| e.to_string())?;
    let (req, ok, pseudonyms) = *stats.borrow();
    Ok(format!(
        "10000 sequences: {req} ticket requests, {ok} granted, {pseudonyms} pseudonyms checked"
    ))
}

fn c6_rollback() -> Outcome {
    let clock = ManualClock::at_secs(T0);
    let domain = Domain::builder("rb")
        .clock(Arc::new(clock))
        .tau_p(60)
        .build();
    let guard = domain.memory_guard.clone().expect("in-memory guard");
    let pca = domain.pca();
    let mut v = domain.registered_vehicle();
    // A once-key holding `false` means the same as an absent key: unused.
    let state = || {
        domain.flush();
        let mut snap = guard.snapshot();
        snap.once.retain(|_, used| *used);
        (
            snap,
            domain.ltca.records().ticket_count(),
            pca.records().batch_count(),
            domain.ltca.records().stats().written,
            pca.records().stats().written,
        )
    };

    for i in 0..100u64 {
        let t_s = derive::align_up(T0, 60) + i * 600;
        let before = state();
        domain.ltca.faults().fail_after_grant(1);
        let r = v.request_ticket(&domain.ltca, pca.id(), t_s, t_s + 600);
        check(r.is_err(), || {
            format!("ticket injection {i} was not triggered")
        })?;
        check(state() == before, || {
            format!("ticket injection {i} left residue")
        })?;
        let held = v
            .request_ticket(&domain.ltca, pca.id(), t_s, t_s + 600)
            .map_err(|e| format!("ticket retry {i}: {e}"))?;

        let before = state();
        pca.faults().fail_after_grant(1);
        let r = v.acquire_pseudonyms(pca, domain.pca_target(0), &held, 10);
        check(r.is_err(), || {
            format!("pseudonym injection {i} was not triggered")
        })?;
        let after = state();
        check(after == before, || {
            format!("pseudonym injection {i} left residue: {before:?} vs {after:?}")
        })?;
        v.acquire_pseudonyms(pca, domain.pca_target(0), &held, 10)
            .map_err(|e| format!("pseudonym retry {i}: {e}"))?;
    }
    Ok("100 ticket + 100 pseudonym injections, no residue, every retry granted".into())
}

fn p99(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    vpki::harness::report::percentile(&v, 0.99)
}

/// Ticket and 5-pseudonym issuance timed on two domains, one with a 50 ms
/// durable-write delay, requests interleaved so both see the same noise.
/// Yielding before each timed call lets already-queued drainer work run
/// outside the measured region on a single core.
fn c7_async_store() -> Outcome {
    const ROUNDS: usize = 6000;
    const WARMUP: usize = 50;
    let tau = 60;
    let mk = |delay_ms| {
        Domain::builder("async")
            .tau_p(tau)
            .record_write_delay(Duration::from_millis(delay_ms))
            .build()
    };
    let domains = [mk(0), mk(50)];
    let vehicles: Vec<_> = domains.iter().map(|d| d.registered_vehicle()).collect();
    let base = derive::align_up(domains[0].clock.now_s(), tau) + tau;
    let mut ticket_ms = [Vec::new(), Vec::new()];
    let mut batch_ms = [Vec::new(), Vec::new()];

    for r in 0..ROUNDS + WARMUP {
        let order = if r % 2 == 0 { [0, 1] } else { [1, 0] };
        for d in order {
            let domain = &domains[d];
            let pca = domain.pca();
            let t_s = base + r as u64 * 6 * tau;
            let (req, rnd_tkt) = vehicles[d]
                .build_ticket_request(pca.id(), t_s, t_s + 5 * tau)
                .unwrap();
            std::thread::yield_now();
            let start = Instant::now();
            let res = domain.ltca.issue_ticket(&req).map_err(|e| e.to_string())?;
            let tk = start.elapsed().as_secs_f64() * 1e3;
            let held = HeldTicket {
                ticket: res.ticket,
                target_id: pca.id().to_string(),
                rnd_tkt,
                rnd_ik_tkt: res.rnd_ik_tkt,
            };
            let keys: Vec<KeyPair> = (0..5).map(|_| KeyPair::generate()).collect();
            let preq = PseudonymRequest {
                envelope: Envelope::new_request(domain.clock.now_ms()),
                rnd_n_tkt: held.rnd_tkt,
                ticket: held.ticket,
                csrs: keys.iter().map(Csr::new).collect(),
            };
            std::thread::yield_now();
            let start = Instant::now();
            pca.issue_pseudonyms(&preq).map_err(|e| e.to_string())?;
            let bk = start.elapsed().as_secs_f64() * 1e3;
            if r >= WARMUP {
                ticket_ms[d].push(tk);
                batch_ms[d].push(bk);
            }
        }
    }
    let pending = domains[1].ltca.records().stats().pending;
    let [t0, t50] = ticket_ms.map(p99);
    let [b0, b50] = batch_ms.map(p99);
    let detail = format!(
        "p99 ticket {t0:.3} -> {t50:.3} ms ({:+.1}%), batch {b0:.3} -> {b50:.3} ms ({:+.1}%), {pending} writes still queued",
        (t50 / t0 - 1.0) * 100.0,
        (b50 / b0 - 1.0) * 100.0
    );
    check(
        (t50 - t0).abs() <= 0.1 * t0 && (b50 - b0).abs() <= 0.1 * b0,
        || detail.clone(),
    )?;
    check(pending > 0, || {
        format!("{detail}; the delayed store was not actually behind")
    })?;
    Ok(detail)
}

fn mean_batch_ms(domain: &Domain, n: usize, reps: usize) -> Result<f64, String> {
    let tau = domain.tau_p();
    let pca = domain.pca();
    let mut total = 0.0;
    for _ in 0..reps {
        let mut v = domain.registered_vehicle();
        let t_s = derive::align_up(domain.clock.now_s(), tau);
        let held = v
            .request_ticket(&domain.ltca, pca.id(), t_s, t_s + n as u64 * tau)
            .map_err(|e| e.to_string())?;
        let keys: Vec<KeyPair> = (0..n).map(|_| KeyPair::generate()).collect();
        let req = PseudonymRequest {
            envelope: Envelope::new_request(domain.clock.now_ms()),
            rnd_n_tkt: held.rnd_tkt,
            ticket: held.ticket,
            csrs: keys.iter().map(Csr::new).collect(),
        };
        let start = Instant::now();
        let res = pca.issue_pseudonyms(&req).map_err(|e| e.to_string())?;
        total += start.elapsed().as_secs_f64() * 1e3;
        check(res.pseudonyms.len() == n, || "short batch".into())?;
    }
    Ok(total / reps as f64)
}

fn c8_throughput() -> Outcome {
    let domain = Domain::builder("tp").tau_p(60).max_batch(500).build();
    mean_batch_ms(&domain, 100, 3)?;
    let m100 = mean_batch_ms(&domain, 100, 20)?;
    let m500 = mean_batch_ms(&domain, 500, 6)?;
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    let detail = format!("mean 100-batch {m100:.1} ms (limit 560), 500-batch {m500:.1} ms = {:.2}x (limit 10x), {cores} core(s)", m500 / m100);
    check(m100 <= 560.0 && m500 <= 10.0 * m100, || detail.clone())?;
    Ok(detail)
}

fn c9_scaling_shape() -> Outcome {
    let load = LoadConfig {
        total_vehicles: 100,
        hatch_rate: 10.0,
        think_time_ms: (1000, 5000),
        batch_sizes: vec![100],
        flash_crowd: Some(FlashCrowd {
            start_s: 150.0,
            duration_s: 150.0,
            extra_vehicles: 1000,
            hatch_rate: 20.0,
            batch_sizes: vec![100],
        }),
        duration_s: 400.0,
    };
    let mut cfg = SimConfig::new(load, CostModel::calibrate(3));
    cfg.pca_scale.max_replicas = 40;
    cfg.ltca_scale.max_replicas = 10;
    let report = simulate(&cfg, 9);
    check(report.is_conserved(), || "report not conserved".into())?;

    let burst_ms = 150_000;
    let pts = &report.replicas;
    // A sample at t is the decision made from busy time up to t, so the one
    // stamped at the burst start still reflects the base load.
    let first = pts
        .iter()
        .position(|p| p.t_ms > burst_ms)
        .ok_or("no replica samples after the burst")?;
    let rise_start = (first..pts.len())
        .find(|&i| i > 0 && pts[i].pca_replicas > pts[i - 1].pca_replicas)
        .ok_or("replicas never rose during the burst")?;
    let max = cfg.pca_scale.max_replicas;
    let peak = (rise_start..pts.len())
        .find(|&i| pts[i].pca_replicas == max)
        .ok_or_else(|| {
            format!(
                "never reached the max clamp {max}; peak {}",
                pts.iter().map(|p| p.pca_replicas).max().unwrap_or(0)
            )
        })?;
    let ramp: Vec<usize> = pts[rise_start - 1..=peak]
        .iter()
        .map(|p| p.pca_replicas)
        .collect();
    check(ramp.windows(2).all(|w| w[1] > w[0]), || {
        format!("ramp not strictly increasing: {ramp:?}")
    })?;
    check(ramp[0] == pts[first.saturating_sub(1)].pca_replicas, || {
        format!("replicas changed between burst start and ramp: {ramp:?}")
    })?;
    let last = pts.last().unwrap();
    check(
        last.pca_replicas == cfg.pca_scale.min_replicas
            && last.ltca_replicas == cfg.ltca_scale.min_replicas,
        || {
            format!(
                "did not return to min: pca {} ltca {}",
                last.pca_replicas, last.ltca_replicas
            )
        },
    )?;

    let pre = report
        .stats_between(Op::Pseudonyms, 100_000, burst_ms)
        .ok_or("no pre-burst samples")?;
    let during = report
        .stats_between(Op::Pseudonyms, burst_ms, 300_000)
        .ok_or("no burst samples")?;
    let ratio = during.p999_ms / pre.p999_ms;
    let detail = format!(
        "pca replicas {ramp:?} then back to {}, p99.9 {:.1} ms -> {:.1} ms ({ratio:.2}x, limit 5x)",
        last.pca_replicas, pre.p999_ms, during.p999_ms
    );
    check(ratio <= 5.0, || detail.clone())?;
    Ok(detail)
}

struct Secrets {
    needles: Vec<Vec<u8>>,
}

impl Secrets {
    fn of(v: &vpki::vehicle::Vehicle) -> Self {
        let ltc = v.ltc().expect("registered");
        let mut needles = encodings_of(ltc.serial.as_ref());
        needles.extend(encodings_of(&ltc.encode()));
        needles.extend(encodings_of(&ltc.signature.0));
        needles.extend(encodings_of(ltc.subject_public_key.as_bytes()));
        Secrets { needles }
    }
}

/// Full acquisitions through recording taps: registration, ticket, batch,
/// and a misbehavior report that makes the RA resolve through the PCA.
/// Every tenth vehicle roams into a second domain.
fn c10_privacy() -> Outcome {
    let clock = ManualClock::at_secs(T0);
    let tau = 60;
    let mut home = Domain::builder("priv")
        .clock(Arc::new(clock.clone()))
        .tau_p(tau)
        .pcas(2)
        .ra_rate(1_000_000)
        .build();
    let away = Domain::builder("away")
        .clock(Arc::new(clock.clone()))
        .tau_p(tau)
        .build();
    Domain::federate(&mut home, &away);

    let tr = Transcript::new();
    let ltca = Tapped::new(home.ltca.clone(), Leg::Ltca, tr.clone());
    let away_ltca = Tapped::new(away.ltca.clone(), Leg::Ltca, tr.clone());
    let pcas: Vec<_> = home
        .pcas
        .iter()
        .map(|p| Tapped::new(p.clone(), Leg::Pca, tr.clone()))
        .collect();
    let away_pca = Tapped::new(away.pca().clone(), Leg::Pca, tr.clone());
    for p in &home.pcas {
        home.ra.add_pca(
            p.identity().clone(),
            Arc::new(Tapped::new(p.clone(), Leg::Resolve, tr.clone())),
        );
    }
    let ra = Tapped::new(home.ra.clone(), Leg::Ra, tr.clone());

    let pca_ids: Vec<Vec<u8>> = home
        .pcas
        .iter()
        .chain(away.pcas.iter())
        .map(|p| p.id().as_bytes().to_vec())
        .collect();
    let t_s = derive::align_up(T0, tau);
    clock.set_secs(t_s + 1);

    let mut previous: Option<(vpki::credential::SignedPseudonym, Secrets)> = None;
    let (mut ltca_bytes, mut pca_bytes) = (0usize, 0usize);
    for i in 0..1000 {
        tr.clear();
        let mut v = home.vehicle();
        v.register(&ltca, None).map_err(|e| e.to_string())?;
        let batch = if i % 10 == 9 {
            v.acquire_foreign(
                &ltca,
                &away_ltca,
                away.ltca.identity(),
                &away_pca,
                away.pca_target(0),
                t_s,
                t_s + 3 * tau,
                3,
            )
        } else {
            let k = i % 2;
            let held = v
                .request_ticket(&ltca, home.pcas[k].id(), t_s, t_s + 3 * tau)
                .map_err(|e| e.to_string())?;
            v.acquire_pseudonyms(&pcas[k], home.pca_target(k), &held, 3)
        }
        .map_err(|e| format!("acquisition {i}: {e}"))?;
        let mine = Secrets::of(&v);
        let mut reported = None;
        if let Some((suspect, theirs)) = previous.take() {
            if suspect.pseudonym.issuer_id.starts_with("pca-priv") && i % 10 != 9 {
                let report = ra
                    .validate(&v.report(suspect).unwrap())
                    .map_err(|e| e.to_string())?;
                check(report.verdict.is_valid(), || {
                    format!("report {i}: {:?}", report.verdict)
                })?;
                reported = Some(theirs);
            }
        }

        for m in tr.messages() {
            match m.leg {
                Leg::Ltca => {
                    ltca_bytes += m.bytes.len();
                    if let Some(k) = contains_any(&m.bytes, &pca_ids) {
                        return Err(format!(
                            "acquisition {i}: LTCA leg carries PCA id {}",
                            String::from_utf8_lossy(&pca_ids[k])
                        ));
                    }
                }
                Leg::Pca | Leg::Resolve | Leg::Ra => {
                    pca_bytes += m.bytes.len();
                    for s in std::iter::once(&mine).chain(reported.as_ref()) {
                        if let Some(k) = contains_any(&m.bytes, &s.needles) {
                            return Err(format!(
                                "acquisition {i}: {:?} leg carries LTC material (pattern {k})",
                                m.leg
                            ));
                        }
                    }
                }
            }
        }
        previous = Some((batch[0].clone(), mine));
    }
    Ok(format!("1000 acquisitions, {ltca_bytes} LTCA-leg and {pca_bytes} PCA/RA-leg bytes scanned, no leaks"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("ticket Sybil exclusion", c1_ticket_sybil),
        ("pseudonym Sybil exclusion", c2_pseudonym_sybil),
        ("chain oracle", c3_chain_oracle),
        ("validation soundness and completeness", c4_validation),
        ("non-overlap and alignment", c5_non_overlap),
        ("rollback", c6_rollback),
        ("async store", c7_async_store),
        ("desk-scale throughput", c8_throughput),
        ("scaling shape", c9_scaling_shape),
        ("privacy byte scans", c10_privacy),
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let label = format!("{} {name}", i + 1);
        if !filter.is_empty() && !filter.iter().any(|f| label.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("criterion {label}: PASS [{secs:.1}s] {d}"),
            Err(d) => {
                failed += 1;
                println!("criterion {label}: FAIL [{secs:.1}s] {d}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
