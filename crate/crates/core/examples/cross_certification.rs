//! Root CAs, CA certificates and the trust path a roaming vehicle uses to
//! accept a foreign PCA.

use vpki::cert::TrustStore;
use vpki::crypto::KeyPair;
use vpki::gateway::rca::{cross_certify, Rca};

fn main() {
    let now = 1_700_000_000;
    let root_a = Rca::new("rca-a", now - 1, now + 86_400 * 365).unwrap();
    let root_b = Rca::new("rca-b", now - 1, now + 86_400 * 365).unwrap();

    let ltca_a_key = KeyPair::generate();
    let ltca_a = root_a.certify(ltca_a_key.public(), "ltca-a").unwrap();
    let pca_b = root_b
        .certify(KeyPair::generate().public(), "pca-b-1")
        .unwrap();

    let mut trust = TrustStore::new();
    trust.add_anchor(root_a.certificate.clone());
    trust.add_trusted(ltca_a.certificate.clone(), now).unwrap();
    println!("before: pca-b-1 trusted? {}", trust.contains("pca-b-1"));
    println!(
        "direct add without a path: {:?}",
        trust
            .clone()
            .add_trusted(pca_b.certificate.clone(), now)
            .err()
    );

    let cross = cross_certify(&ltca_a_key, "ltca-a", &pca_b).unwrap();
    trust.add_trusted(cross, now).unwrap();
    println!(
        "after cross-certification: pca-b-1 trusted? {}",
        trust.contains("pca-b-1")
    );
    println!("trusted: {:?}", trust.trusted_ids().collect::<Vec<_>>());
}
