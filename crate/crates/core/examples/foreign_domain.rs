//! A vehicle from domain A obtains pseudonyms from a PCA in domain B.

use vpki::derive;
use vpki::domain::Domain;

fn main() {
    let mut home = Domain::builder("home").build();
    let visited = Domain::builder("visited").pcas(2).build();
    Domain::federate(&mut home, &visited);

    let mut vehicle = home.registered_vehicle();
    let tau = visited.tau_p();
    let t_s = derive::align_up(home.clock.now_s(), tau);
    let t_e = t_s + 8 * tau;
    let batch = vehicle
        .acquire_foreign(
            &home.ltca,
            &visited.ltca,
            visited.ltca.identity(),
            &visited.pcas[1],
            visited.pca_target(1),
            t_s,
            t_e,
            8,
        )
        .expect("foreign acquisition");

    println!(
        "{} pseudonyms from {}",
        batch.len(),
        batch[0].pseudonym.issuer_id
    );
    let ticket = visited.ltca.records().ticket_count();
    println!(
        "visited LTCA holds {ticket} ticket record(s); home LTCA holds {}",
        home.ltca.records().ticket_count()
    );
}
