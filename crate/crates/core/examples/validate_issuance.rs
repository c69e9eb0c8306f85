//! One vehicle reports another's pseudonym; the RA resolves it through the
//! PCA and checks the issuance binding.

use std::sync::Arc;

use vpki::derive;
use vpki::domain::Domain;
use vpki::envelope::ManualClock;

fn main() {
    let clock = ManualClock::at_secs(1_700_000_000);
    let domain = Domain::builder("demo")
        .clock(Arc::new(clock.clone()))
        .build();
    let tau = domain.tau_p();
    let t_s = derive::align_up(clock_now(&domain), tau);

    let mut fleet: Vec<_> = (0..2).map(|_| domain.registered_vehicle()).collect();
    for v in &mut fleet {
        let held = v
            .request_ticket(&domain.ltca, domain.pca().id(), t_s, t_s + 4 * tau)
            .unwrap();
        v.acquire_pseudonyms(domain.pca(), domain.pca_target(0), &held, 4)
            .unwrap();
    }
    domain.flush();
    clock.set_secs(t_s + 1);

    let suspicious = fleet[0].current(t_s + 1).unwrap().pseudonym.clone();
    let req = fleet[1].report(suspicious).unwrap();
    let report = domain.ra.validate_issuance(&req).expect("validation");
    println!("{}", serde_json::to_string_pretty(&report).unwrap());
}

fn clock_now(d: &Domain) -> u64 {
    d.clock.now_s()
}
