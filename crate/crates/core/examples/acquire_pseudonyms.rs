//! Spend a ticket on a batch of pseudonyms and check the slots and the
//! serial chain.

use vpki::derive;
use vpki::domain::Domain;

fn main() {
    let n: usize = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(20);
    let domain = Domain::builder("demo").build();
    let mut vehicle = domain.registered_vehicle();
    let tau = domain.tau_p();
    let t_s = derive::align_up(domain.clock.now_s(), tau);
    let held = vehicle
        .request_ticket(&domain.ltca, domain.pca().id(), t_s, t_s + n as u64 * tau)
        .expect("ticket");

    let batch = vehicle
        .acquire_pseudonyms(domain.pca(), domain.pca_target(0), &held, n)
        .expect("batch");
    for (i, p) in batch.iter().enumerate().take(5) {
        let ps = &p.pseudonym;
        println!(
            "#{i:<3} [{}, {}) sn {}",
            ps.t_s,
            ps.t_e,
            vpki::b64::encode(ps.serial.as_ref())
        );
    }
    if batch.len() > 5 {
        println!("... {} more", batch.len() - 5);
    }

    let aligned = batch.iter().all(|p| p.pseudonym.t_s % tau == 0);
    let abut = batch
        .windows(2)
        .all(|w| w[0].pseudonym.t_e == w[1].pseudonym.t_s);
    println!(
        "aligned {aligned}, abutting {abut}, pool {}",
        vehicle.pool().len()
    );

    // The ticket is single-use.
    let again = domain.pca().issue_pseudonyms(&vpki::pca::PseudonymRequest {
        envelope: vpki::envelope::Envelope::new_request(domain.clock.now_ms()),
        rnd_n_tkt: held.rnd_tkt,
        ticket: held.ticket.clone(),
        csrs: vec![vpki::credential::Csr::new(
            &vpki::crypto::KeyPair::generate(),
        )],
    });
    println!("second use: {:?}", again.map(|r| r.pseudonyms.len()));
}
