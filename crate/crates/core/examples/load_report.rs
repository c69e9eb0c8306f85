//! A short live run against in-process services; writes JSON, CSV and a
//! gnuplot CDF table next to the given path.

use vpki::harness::{run_in_process, LoadConfig, Op, RunConfig};

fn main() {
    let out = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "report.json".into());
    let cfg = RunConfig::new(LoadConfig {
        total_vehicles: 20,
        hatch_rate: 10.0,
        think_time_ms: (200, 600),
        batch_sizes: vec![10, 50],
        flash_crowd: None,
        duration_s: 8.0,
    });
    let report = run_in_process(&cfg, 1);
    for op in Op::ALL {
        if let Some(s) = report.stats(op) {
            println!(
                "{:<11} n={:<5} mean {:>7.2} ms  p99 {:>7.2} ms",
                op.as_str(),
                s.count,
                s.mean_ms,
                s.p99_ms
            );
        }
    }
    report.write_all(out.as_ref()).unwrap();
    println!("wrote {out}");
}
