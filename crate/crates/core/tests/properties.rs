mod common;

use std::collections::HashMap;
use std::sync::{Arc, OnceLock};

use proptest::prelude::*;

use vpki::credential::Csr;
use vpki::crypto::{Digest, KeyPair};
use vpki::derive;
use vpki::domain::Domain;
use vpki::encoding::{canonical_encode, Fields};
use vpki::envelope::{Clock, Envelope, ManualClock};
use vpki::guard::{GuardKey, IntervalClaim, MemoryGuard, OnceClaim, Space, SybilGuard};
use vpki::harness::report::{cdf_of, percentile, stats_of};
use vpki::harness::{scaling_controller, simulate, CostModel, LoadConfig, ScalePolicy, SimConfig};
use vpki::pca::PseudonymRequest;
use vpki::ra::Verdict;
use vpki::vehicle::{verify_batch, Vehicle};

fn key_pool() -> &'static [KeyPair] {
    static POOL: OnceLock<Vec<KeyPair>> = OnceLock::new();
    POOL.get_or_init(|| (0..64u8).map(|i| KeyPair::from_seed([i + 1; 32])).collect())
}

proptest! {
    #[test]
    fn canonical_encoding_matches_reference(
        fields in prop::collection::vec(prop::collection::vec(any::<u8>(), 0..70), 0..8),
    ) {
        let refs: Vec<&[u8]> = fields.iter().map(Vec::as_slice).collect();
        prop_assert_eq!(canonical_encode(&fields).unwrap(), common::encode(&refs));
        let built = fields.iter().fold(Fields::new(), |f, x| f.bytes(x)).finish().unwrap();
        prop_assert_eq!(built, common::encode(&refs));
    }

    #[test]
    fn integers_encode_as_fixed_width_fields(a in any::<u64>(), b in any::<u64>()) {
        let got = Fields::new().u64(a).u64(b).finish().unwrap();
        prop_assert_eq!(got, common::encode(&[&a.to_be_bytes(), &b.to_be_bytes()]));
    }

    #[test]
    fn target_and_ticket_hashes_match_reference(
        id in "[a-z0-9-]{1,24}",
        rnd in any::<[u8; 32]>(),
        cred in prop::collection::vec(any::<u8>(), 0..200),
        t_s in any::<u64>(),
        len in 0u64..1_000_000,
    ) {
        prop_assert_eq!(derive::target_hash(&id, &rnd).0, common::target_hash(&id, &rnd));
        let t_e = t_s.saturating_add(len);
        prop_assert_eq!(derive::ticket_ik(&cred, t_s, t_e, &rnd).0, common::ticket_ik(&cred, t_s, t_e, &rnd));
    }

    #[test]
    fn slots_are_aligned_and_abutting(t_s in 0u64..1 << 40, tau in 1u64..100_000, n in 1usize..64) {
        let slots = derive::assign_slots(t_s, tau, n);
        prop_assert_eq!(slots.len(), n);
        prop_assert!(slots[0].t_s >= t_s && slots[0].t_s - t_s < tau);
        for s in &slots {
            prop_assert_eq!(s.t_s % tau, 0);
            prop_assert_eq!(s.t_e - s.t_s, tau);
        }
        for w in slots.windows(2) {
            prop_assert_eq!(w[0].t_e, w[1].t_s);
        }
    }

    #[test]
    fn chain_matches_reference_and_serials_follow_the_first(
        ik in any::<[u8; 32]>(),
        rnd_v in any::<[u8; 32]>(),
        picks in prop::collection::vec(0usize..64, 1..40),
        t_s in 1_600_000_000u64..1_900_000_000,
        tau in prop::sample::select(vec![1u64, 60, 300, 3600]),
    ) {
        let keys: Vec<_> = picks.iter().map(|&i| key_pool()[i].public().clone()).collect();
        let slots = derive::assign_slots(t_s, tau, keys.len());
        let chain = derive::derive_chain(&Digest(ik), &keys, &slots, &rnd_v);
        let key_bytes: Vec<Vec<u8>> = keys.iter().map(|k| k.as_bytes().to_vec()).collect();
        let want = common::reference_batch(&ik, &key_bytes, t_s, tau, &rnd_v);
        for ((link, slot), w) in chain.iter().zip(&slots).zip(&want) {
            prop_assert_eq!((slot.t_s, slot.t_e, link.ik_p.0, link.serial.0), (w.t_s, w.t_e, w.ik_p, w.serial));
        }
        let serials = derive::serials_from_first(&chain[0].serial, &rnd_v, chain.len());
        prop_assert!(serials.iter().zip(&chain).all(|(s, l)| *s == l.serial));
    }

    #[test]
    fn signatures_verify_and_reject_tampering(
        seed in any::<[u8; 32]>(),
        msg in prop::collection::vec(any::<u8>(), 1..300),
        flip in any::<prop::sample::Index>(),
        bit in 0u8..8,
    ) {
        prop_assume!(seed != [0; 32]);
        let key = KeyPair::from_seed(seed);
        let sig = key.sign(&msg);
        prop_assert!(key.public().verify(&msg, &sig));
        let mut bad = msg.clone();
        bad[flip.index(msg.len())] ^= 1 << bit;
        prop_assert!(!key.public().verify(&bad, &sig));
        let other = &key_pool()[flip.index(64)];
        prop_assert!(!other.public().verify(&msg, &sig) || other.public() == key.public());
    }

    #[test]
    fn percentiles_are_monotone_and_bounded(
        values in prop::collection::vec(0.0f64..10_000.0, 1..300),
        qs in prop::collection::vec(0.001f64..=1.0, 2..10),
    ) {
        let mut sorted = values.clone();
        sorted.sort_by(f64::total_cmp);
        let mut qs = qs;
        qs.sort_by(f64::total_cmp);
        let ps: Vec<f64> = qs.iter().map(|&q| percentile(&sorted, q)).collect();
        prop_assert!(ps.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(ps.iter().all(|p| sorted.contains(p)));
        let s = stats_of(values.iter().copied()).unwrap();
        prop_assert!(s.p50_ms <= s.p90_ms && s.p90_ms <= s.p99_ms && s.p99_ms <= s.p999_ms && s.p999_ms <= s.max_ms);
        prop_assert_eq!(s.count, values.len());
    }

    #[test]
    fn cdf_is_rank_over_count(values in prop::collection::vec(0u16..50, 1..200)) {
        let xs: Vec<f64> = values.iter().map(|&v| v as f64).collect();
        let cdf = cdf_of(xs.iter().copied());
        prop_assert!(cdf.windows(2).all(|w| w[0].latency_ms < w[1].latency_ms && w[0].f < w[1].f));
        for p in &cdf {
            let at_most = xs.iter().filter(|&&x| x <= p.latency_ms).count();
            prop_assert!((p.f - at_most as f64 / xs.len() as f64).abs() < 1e-12);
        }
        prop_assert!((cdf.last().unwrap().f - 1.0).abs() < 1e-12);
    }

    #[test]
    fn controller_stays_in_bounds_and_scales_out_at_once(
        min in 1usize..5,
        span in 0usize..40,
        target in 0.2f64..0.9,
        us in prop::collection::vec(0.0f64..3.0, 1..60),
    ) {
        let policy = ScalePolicy { min_replicas: min, max_replicas: min + span, target_utilization: target };
        let counts = scaling_controller(policy, us.iter().copied());
        let mut current = min;
        for (&u, &n) in us.iter().zip(&counts) {
            prop_assert!((policy.min_replicas..=policy.max_replicas).contains(&n));
            let desired = policy.desired(current, u);
            if desired > current {
                prop_assert_eq!(n, desired);
            }
            if u >= target {
                prop_assert!(n >= current);
            }
            current = n;
        }
    }
}

#[derive(Debug, Clone)]
enum GuardOp {
    ClaimInterval(usize, u64, u64),
    RevertInterval(usize, Option<u64>),
    ClaimOnce(usize),
    RevertOnce(usize),
}

fn guard_op() -> impl Strategy<Value = GuardOp> {
    prop_oneof![
        (0usize..3, 0u64..20, 1u64..6).prop_map(|(k, s, l)| GuardOp::ClaimInterval(k, s, s + l)),
        (0usize..3, prop::option::of(0u64..25)).prop_map(|(k, p)| GuardOp::RevertInterval(k, p)),
        (0usize..3).prop_map(GuardOp::ClaimOnce),
        (0usize..3).prop_map(GuardOp::RevertOnce),
    ]
}

fn gkey(i: usize, space: Space) -> GuardKey {
    let mut s = [0u8; 16];
    s[0] = i as u8;
    GuardKey::new(space, vpki::crypto::Serial(s))
}

proptest! {
    #[test]
    fn guard_matches_serial_model(ops in prop::collection::vec(guard_op(), 1..80)) {
        let g = MemoryGuard::new();
        let mut intervals: HashMap<usize, u64> = HashMap::new();
        let mut once: HashMap<usize, bool> = HashMap::new();
        for op in ops {
            match op {
                GuardOp::ClaimInterval(k, s, e) => {
                    let want = match intervals.get(&k) {
                        Some(&v) if v > s => IntervalClaim::Denied,
                        prev => {
                            let prev = prev.copied();
                            intervals.insert(k, e);
                            IntervalClaim::Granted { prev }
                        }
                    };
                    prop_assert_eq!(g.claim_ticket_interval(gkey(k, Space::Live), s, e).unwrap(), want);
                }
                GuardOp::RevertInterval(k, p) => {
                    match p {
                        Some(v) => intervals.insert(k, v),
                        None => intervals.remove(&k),
                    };
                    g.revert_ticket_interval(gkey(k, Space::Live), p).unwrap();
                }
                GuardOp::ClaimOnce(k) => {
                    let used = once.entry(k).or_insert(false);
                    let want = if *used { OnceClaim::Denied } else { OnceClaim::Granted };
                    *used = true;
                    prop_assert_eq!(g.claim_ticket_once(gkey(k, Space::Live)).unwrap(), want);
                }
                GuardOp::RevertOnce(k) => {
                    once.insert(k, false);
                    g.revert_ticket_once(gkey(k, Space::Live)).unwrap();
                }
            }
        }
        for k in 0..3 {
            prop_assert_eq!(g.interval_value(gkey(k, Space::Live)), intervals.get(&k).copied());
            prop_assert_eq!(g.once_value(gkey(k, Space::Live)), once.get(&k).copied());
            prop_assert_eq!(g.interval_value(gkey(k, Space::Foreign)), None);
        }
    }
}

struct Fixture {
    domain: Domain,
    clock: ManualClock,
    reporter: Vehicle,
    t_s: u64,
}

const T0: u64 = 1_700_000_040;

fn fixture() -> &'static std::sync::Mutex<Fixture> {
    static F: OnceLock<std::sync::Mutex<Fixture>> = OnceLock::new();
    F.get_or_init(|| {
        let clock = ManualClock::at_secs(T0);
        let domain = Domain::builder("prop")
            .clock(Arc::new(clock.clone()))
            .tau_p(60)
            .ra_rate(1_000_000)
            .build();
        let mut reporter = domain.registered_vehicle();
        let held = reporter.request_ticket(&domain.ltca, domain.pca().id(), T0, T0 + 120).unwrap();
        reporter.acquire_pseudonyms(domain.pca(), domain.pca_target(0), &held, 2).unwrap();
        clock.set_secs(T0 + 1);
        std::sync::Mutex::new(Fixture { domain, clock, reporter, t_s: T0 })
    })
}

#[derive(Debug, Clone)]
enum Tamper {
    None,
    IkByte(usize),
    SlotShift(u64),
    Key(usize),
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Whatever the client's own batch check accepts, the RA validates, and
    /// what it rejects the RA rejects as well.
    #[test]
    fn client_acceptance_agrees_with_ra(
        n in 1usize..12,
        pick in any::<prop::sample::Index>(),
        tamper in prop_oneof![
            Just(Tamper::None),
            (0usize..32).prop_map(Tamper::IkByte),
            (1u64..3).prop_map(Tamper::SlotShift),
            (0usize..64).prop_map(Tamper::Key),
        ],
    ) {
        let f = fixture().lock().unwrap();
        let d = &f.domain;
        assert_eq!(f.clock.now_s(), f.t_s + 1);
        let mut v = d.registered_vehicle();
        let held = v.request_ticket(&d.ltca, d.pca().id(), f.t_s, f.t_s + 12 * 60).unwrap();
        let keys: Vec<KeyPair> = (0..n).map(|i| key_pool()[(i * 7) % 64].clone()).collect();
        let req = PseudonymRequest {
            envelope: Envelope::new_request(d.clock.now_ms()),
            rnd_n_tkt: held.rnd_tkt,
            ticket: held.ticket.clone(),
            csrs: keys.iter().map(Csr::new).collect(),
        };
        let mut res = d.pca().issue_pseudonyms(&req).unwrap();
        let i = pick.index(n);
        let mut p = res.pseudonyms[i].pseudonym.clone();
        match tamper {
            Tamper::None => {}
            Tamper::IkByte(b) => p.ik_p.0[b] ^= 0x01,
            Tamper::SlotShift(k) => {
                p.t_s += k * 60;
                p.t_e += k * 60;
            }
            Tamper::Key(k) => p.public_key = key_pool()[k].public().clone(),
        }
        res.pseudonyms[i] = p.sign(&d.pca_keys[0]);
        let client_ok = verify_batch(&res, &req, d.pca_target(0)).is_ok();
        let report = d.ra.validate_issuance(&f.reporter.report(res.pseudonyms[i].clone()).unwrap()).unwrap();
        let ra_ok = matches!(report.verdict, Verdict::ValidIssuance);
        prop_assert_eq!(client_ok, ra_ok, "tamper {:?}: {:?}", tamper, report.verdict);
        prop_assert_eq!(client_ok, matches!(tamper, Tamper::None) || (matches!(tamper, Tamper::Key(k) if key_pool()[k].public() == keys[i].public())));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn simulation_completes_every_issued_request(
        vehicles in 1usize..40,
        hatch in 1.0f64..20.0,
        batch in prop::sample::select(vec![1usize, 10, 100]),
        duration in 20.0f64..120.0,
        seed in any::<u64>(),
    ) {
        let load = LoadConfig {
            total_vehicles: vehicles,
            hatch_rate: hatch,
            think_time_ms: (500, 3000),
            batch_sizes: vec![batch],
            flash_crowd: None,
            duration_s: duration,
        };
        let cfg = SimConfig::new(load, CostModel::default());
        let report = simulate(&cfg, seed);
        prop_assert!(report.is_conserved());
        prop_assert!(report.samples.iter().all(|s| s.latency_ms >= 0.0));
        for r in &report.replicas {
            prop_assert!((cfg.pca_scale.min_replicas..=cfg.pca_scale.max_replicas).contains(&r.pca_replicas));
            prop_assert!((cfg.ltca_scale.min_replicas..=cfg.ltca_scale.max_replicas).contains(&r.ltca_replicas));
        }
        prop_assert_eq!(simulate(&cfg, seed), report);
    }
}
