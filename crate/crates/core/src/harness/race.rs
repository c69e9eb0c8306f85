//! Fires K identical requests at once across several replicas and counts
//! how many the shared guard lets through.

use std::str::FromStr;
use std::sync::{Arc, Barrier};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::credential::Csr;
use crate::crypto::KeyPair;
use crate::domain::Domain;
use crate::envelope::Envelope;
use crate::ltca::{Ltca, LtcaError, TicketRequest};
use crate::pca::{Pca, PcaError, PseudonymRequest};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RaceMode {
    /// K ticket requests for the same window from one vehicle.
    Ticket,
    /// K pseudonym requests spending the same ticket.
    Pseudonym,
}

impl FromStr for RaceMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ticket" => Ok(RaceMode::Ticket),
            "pseudonym" | "pseudonyms" => Ok(RaceMode::Pseudonym),
            _ => Err(format!(
                "unknown race mode {s:?}; expected ticket or pseudonym"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RaceOutcome {
    pub granted: usize,
    pub denied: usize,
    pub failed: usize,
}

impl RaceOutcome {
    pub fn total(&self) -> usize {
        self.granted + self.denied + self.failed
    }
}

enum Shot {
    Ticket(TicketRequest),
    Pseudonyms(PseudonymRequest),
}

/// Runs one race on a fresh domain with `replicas` LTCA and PCA replicas.
/// The seed shuffles the replica assignment and staggers the shots by a
/// few microseconds.
pub fn sybil_race(k: usize, mode: RaceMode, replicas: usize, seed: u64) -> RaceOutcome {
    let domain = Domain::builder("race").build();
    sybil_race_on(&domain, k, mode, replicas, seed)
}

pub fn sybil_race_on(
    domain: &Domain,
    k: usize,
    mode: RaceMode,
    replicas: usize,
    seed: u64,
) -> RaceOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let replicas = replicas.max(1);
    let ltcas: Vec<Ltca> = (0..replicas).map(|_| domain.ltca.replica()).collect();
    let pcas: Vec<Pca> = (0..replicas).map(|_| domain.pca().replica()).collect();

    let mut vehicle = domain.registered_vehicle();
    let tau = domain.tau_p();
    let t_s = crate::derive::align_up(domain.clock.now_s(), tau) + tau;
    let t_e = t_s + 4 * tau;
    let pca_id = domain.pca().id().to_string();

    let shots: Vec<Shot> = match mode {
        RaceMode::Ticket => (0..k)
            .map(|_| {
                Shot::Ticket(
                    vehicle
                        .build_ticket_request(&pca_id, t_s, t_e)
                        .expect("registered")
                        .0,
                )
            })
            .collect(),
        RaceMode::Pseudonym => {
            let held = vehicle
                .request_ticket(&domain.ltca, &pca_id, t_s, t_e)
                .expect("first ticket is granted");
            let now_ms = domain.clock.now_ms();
            (0..k)
                .map(|_| {
                    Shot::Pseudonyms(PseudonymRequest {
                        envelope: Envelope::new_request(now_ms),
                        rnd_n_tkt: held.rnd_tkt,
                        ticket: held.ticket.clone(),
                        csrs: vec![Csr::new(&KeyPair::generate())],
                    })
                })
                .collect()
        }
    };
    let mut targets: Vec<usize> = (0..k).map(|i| i % replicas).collect();
    targets.shuffle(&mut rng);
    let delays: Vec<u64> = (0..k).map(|_| rng.gen_range(0..50)).collect();

    let barrier = Arc::new(Barrier::new(k.max(1)));
    let results: Vec<Result<(), Result<LtcaError, PcaError>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = shots
            .into_iter()
            .zip(targets)
            .zip(delays)
            .map(|((shot, r), delay)| {
                let barrier = barrier.clone();
                let (ltca, pca) = (&ltcas[r], &pcas[r]);
                scope.spawn(move || {
                    barrier.wait();
                    spin(Duration::from_micros(delay));
                    match shot {
                        Shot::Ticket(req) => ltca.issue_ticket(&req).map(|_| ()).map_err(Ok),
                        Shot::Pseudonyms(req) => {
                            pca.issue_pseudonyms(&req).map(|_| ()).map_err(Err)
                        }
                    }
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("racer panicked"))
            .collect()
    });

    let mut out = RaceOutcome::default();
    for r in results {
        match r {
            Ok(()) => out.granted += 1,
            Err(Ok(LtcaError::SybilDenied)) | Err(Err(PcaError::TicketReused)) => out.denied += 1,
            Err(e) => {
                log::warn!("race shot failed: {e:?}");
                out.failed += 1;
            }
        }
    }
    out
}

fn spin(d: Duration) {
    let until = Instant::now() + d;
    while Instant::now() < until {
        std::hint::spin_loop();
    }
}
