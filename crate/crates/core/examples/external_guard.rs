//! Two LTCA replicas in separate "processes" share one guard over TCP.

use std::sync::Arc;

use vpki::derive;
use vpki::domain::Domain;
use vpki::guard::{GuardServer, MemoryGuard, RemoteGuard};

fn main() {
    let server = GuardServer::bind("127.0.0.1:0", Arc::new(MemoryGuard::new())).unwrap();
    println!("guard on {}", server.local_addr());
    let domain = Domain::builder("ext")
        .guard(Arc::new(RemoteGuard::new(server.local_addr())))
        .build();
    let (a, b) = (domain.ltca.replica(), domain.ltca.replica());

    let mut vehicle = domain.registered_vehicle();
    let tau = domain.tau_p();
    let t_s = derive::align_up(domain.clock.now_s(), tau);
    let first = vehicle.request_ticket(&a, domain.pca().id(), t_s, t_s + 6 * tau);
    let second = vehicle.request_ticket(&b, domain.pca().id(), t_s + tau, t_s + 3 * tau);
    println!(
        "replica a: {}",
        if first.is_ok() { "granted" } else { "denied" }
    );
    println!("replica b: {:?}", second.err());

    server.shutdown();
    let after = vehicle.request_ticket(&a, domain.pca().id(), t_s + 10 * tau, t_s + 11 * tau);
    println!("guard down, fail-closed: {:?}", after.err());
}
