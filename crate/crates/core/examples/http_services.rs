//! LTCA and PCA behind HTTP on loopback; the vehicle talks to them through
//! the blocking client.

use vpki::derive;
use vpki::domain::Domain;
use vpki::gateway::http::{serve_ltca, serve_pca, HttpClient};

fn main() {
    let domain = Domain::builder("web").build();
    let ltca_srv = serve_ltca(domain.ltca.clone(), "127.0.0.1:0").unwrap();
    let pca_srv = serve_pca(domain.pca().clone(), "127.0.0.1:0").unwrap();
    println!("ltca {}  pca {}", ltca_srv.url(), pca_srv.url());

    let ltca = HttpClient::new(&ltca_srv.url());
    let pca = HttpClient::new(&pca_srv.url());
    println!("health {:?} / {:?}", ltca.health(), pca.health());

    let mut vehicle = domain.vehicle();
    vehicle.register(&ltca, None).unwrap();
    let tau = domain.tau_p();
    let t_s = derive::align_up(domain.clock.now_s(), tau);
    let held = vehicle
        .request_ticket(&ltca, domain.pca().id(), t_s, t_s + 10 * tau)
        .unwrap();
    let batch = vehicle
        .acquire_pseudonyms(&pca, domain.pca_target(0), &held, 10)
        .unwrap();
    println!("{} pseudonyms over HTTP", batch.len());

    let m = pca.metrics().unwrap();
    println!("pca metrics {}", serde_json::to_string(&m).unwrap());
    ltca_srv.shutdown();
    pca_srv.shutdown();
}
