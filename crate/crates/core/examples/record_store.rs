//! Issuance records go to a file in the background; reopening rebuilds the
//! index and the RA lookups still resolve.

use std::sync::Arc;

use vpki::derive;
use vpki::domain::Domain;
use vpki::records::{purge_file, RecordStore, StoreOptions};

fn main() {
    let dir = std::env::temp_dir().join(format!("vpki-records-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("pca.rec");

    let domain = Domain::builder("rec").build();
    let pca = vpki::pca::Pca::new(
        domain.config.pca_config(domain.pca().id()),
        domain.pca().identity().clone(),
        domain.pca_keys[0].clone(),
        domain.guard.clone(),
        Arc::new(RecordStore::open(&path, StoreOptions::default()).unwrap()),
        domain.clock.clone(),
    );
    pca.trust_ltca(domain.ltca.identity().clone());

    let mut vehicle = domain.registered_vehicle();
    let tau = domain.tau_p();
    let t_s = derive::align_up(domain.clock.now_s(), tau);
    let held = vehicle
        .request_ticket(&domain.ltca, pca.id(), t_s, t_s + 5 * tau)
        .unwrap();
    let batch = vehicle
        .acquire_pseudonyms(&pca, domain.pca_target(0), &held, 5)
        .unwrap();
    pca.records().flush();
    println!("written: {:?}", pca.records().stats());
    drop(pca);

    let reopened = RecordStore::open(&path, StoreOptions::default()).unwrap();
    let hit = reopened
        .lookup_by_pseudonym_serial(&batch[3].pseudonym.serial)
        .unwrap();
    println!(
        "4th pseudonym found at position {} of the batch for ticket {}",
        hit.index,
        hit.batch.sn_tkt.to_hex()
    );
    reopened.close();

    let purged = purge_file(&path, t_s + 100 * tau).unwrap();
    println!("purge: {purged:?}");
    std::fs::remove_dir_all(dir).ok();
}
