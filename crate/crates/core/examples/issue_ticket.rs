//! Register a vehicle, obtain a ticket, and watch the LTCA refuse an
//! overlapping second ticket for the same vehicle.

use vpki::derive;
use vpki::domain::Domain;
use vpki::ltca::LtcaError;
use vpki::vehicle::ClientError;

fn main() {
    let domain = Domain::builder("demo").build();
    let mut vehicle = domain.registered_vehicle();
    let ltc = vehicle.ltc().expect("registered");
    println!("LTC serial {}", ltc.serial.to_hex());

    let tau = domain.tau_p();
    let t_s = derive::align_up(domain.clock.now_s(), tau);
    let t_e = t_s + 12 * tau;
    let held = vehicle
        .request_ticket(&domain.ltca, domain.pca().id(), t_s, t_e)
        .expect("first ticket");
    let t = &held.ticket.ticket;
    println!(
        "ticket [{}, {}) ik {}",
        t.t_s,
        t.t_e,
        vpki::b64::encode(t.ik_tkt.as_ref())
    );
    println!(
        "target hash hides the PCA: {}",
        vpki::b64::encode(t.target_hash.as_ref())
    );

    // Shifted by one slot, still overlapping.
    match vehicle.request_ticket(&domain.ltca, domain.pca().id(), t_s + tau, t_e + tau) {
        Err(ClientError::Ltca(LtcaError::SybilDenied)) => println!("overlapping request denied"),
        other => panic!("expected a Sybil denial, got {other:?}"),
    }

    let next = vehicle
        .request_ticket(&domain.ltca, domain.pca().id(), t_e, t_e + 4 * tau)
        .expect("abutting window");
    println!(
        "abutting ticket [{}, {}) granted",
        next.ticket.ticket.t_s, next.ticket.ticket.t_e
    );
}
