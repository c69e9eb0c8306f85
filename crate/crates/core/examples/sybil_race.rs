//! K racers fire the same request at several replicas at once; the shared
//! guard lets exactly one through.

use vpki::harness::{sybil_race, RaceMode};

fn main() {
    let k = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(64);
    for mode in [RaceMode::Ticket, RaceMode::Pseudonym] {
        for seed in 0..5 {
            let o = sybil_race(k, mode, 4, seed);
            println!(
                "{mode:?} seed {seed}: granted {} denied {} failed {}",
                o.granted, o.denied, o.failed
            );
        }
    }
}
