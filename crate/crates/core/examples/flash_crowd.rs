//! Simulated flash crowd against autoscaled LTCA and PCA pools, with costs
//! calibrated on this machine.

use vpki::harness::{simulate, CostModel, FlashCrowd, LoadConfig, Op, SimConfig};

fn main() {
    let cost = CostModel::calibrate(3);
    println!("calibrated: {cost:?}");
    let load = LoadConfig {
        total_vehicles: 100,
        hatch_rate: 10.0,
        think_time_ms: (1000, 5000),
        batch_sizes: vec![100],
        flash_crowd: Some(FlashCrowd {
            start_s: 150.0,
            duration_s: 150.0,
            extra_vehicles: 1000,
            hatch_rate: 20.0,
            batch_sizes: vec![100],
        }),
        duration_s: 400.0,
    };
    let mut cfg = SimConfig::new(load, cost);
    cfg.pca_scale.max_replicas = 40;
    cfg.ltca_scale.max_replicas = 10;
    let report = simulate(&cfg, 7);

    let mut last = 0;
    for p in &report.replicas {
        if p.pca_replicas != last {
            println!(
                "t={:>5.0}s pca={:<3} util={:.2}",
                p.t_ms as f64 / 1000.0,
                p.pca_replicas,
                p.pca_utilization
            );
            last = p.pca_replicas;
        }
    }
    let pre = report
        .stats_between(Op::Pseudonyms, 100_000, 150_000)
        .unwrap();
    let burst = report
        .stats_between(Op::Pseudonyms, 150_000, 300_000)
        .unwrap();
    println!(
        "pre-burst p99.9 {:.1} ms, burst p99.9 {:.1} ms",
        pre.p999_ms, burst.p999_ms
    );
}
