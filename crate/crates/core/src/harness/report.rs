//! Latency samples and the report built from them.

use std::collections::BTreeMap;
use std::io::{self, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Op {
    Ticket,
    Pseudonyms,
    /// Ticket plus pseudonym leg, as seen by the vehicle.
    EndToEnd,
}

impl Op {
    pub const ALL: [Op; 3] = [Op::Ticket, Op::Pseudonyms, Op::EndToEnd];

    pub fn as_str(self) -> &'static str {
        match self {
            Op::Ticket => "ticket",
            Op::Pseudonyms => "pseudonyms",
            Op::EndToEnd => "end_to_end",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Granted,
    /// Refused by policy, e.g. a Sybil denial.
    Denied,
    /// Transport failure or any other error.
    Failed,
}

impl Outcome {
    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Granted => "granted",
            Outcome::Denied => "denied",
            Outcome::Failed => "failed",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub op: Op,
    pub t_submit_ms: u64,
    pub latency_ms: f64,
    pub outcome: Outcome,
    /// Pseudonyms requested; 0 for ticket samples.
    pub batch: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplicaPoint {
    pub t_ms: u64,
    pub ltca_replicas: usize,
    pub pca_replicas: usize,
    pub ltca_utilization: f64,
    pub pca_utilization: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatePoint {
    pub t_s: u64,
    pub requests: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub count: usize,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p90_ms: f64,
    pub p99_ms: f64,
    pub p999_ms: f64,
    pub max_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CdfPoint {
    pub latency_ms: f64,
    /// Fraction of samples with latency `<= latency_ms`.
    pub f: f64,
}

/// Nearest-rank percentile of an ascending slice, `q` in `(0, 1]`.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let rank = (q * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

fn sorted(values: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(f64::total_cmp);
    v
}

pub fn stats_of(values: impl Iterator<Item = f64>) -> Option<Stats> {
    let v = sorted(values);
    if v.is_empty() {
        return None;
    }
    Some(Stats {
        count: v.len(),
        mean_ms: v.iter().sum::<f64>() / v.len() as f64,
        p50_ms: percentile(&v, 0.5),
        p90_ms: percentile(&v, 0.9),
        p99_ms: percentile(&v, 0.99),
        p999_ms: percentile(&v, 0.999),
        max_ms: v[v.len() - 1],
    })
}

/// Empirical CDF with one point per distinct latency.
pub fn cdf_of(values: impl Iterator<Item = f64>) -> Vec<CdfPoint> {
    let v = sorted(values);
    let n = v.len() as f64;
    let mut out: Vec<CdfPoint> = Vec::new();
    for (i, x) in v.iter().enumerate() {
        let f = (i + 1) as f64 / n;
        match out.last_mut() {
            Some(last) if last.latency_ms == *x => last.f = f,
            _ => out.push(CdfPoint { latency_ms: *x, f }),
        }
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub samples: Vec<Sample>,
    /// Requests started, per op.
    pub issued: BTreeMap<Op, usize>,
    pub replicas: Vec<ReplicaPoint>,
    pub throughput: Vec<RatePoint>,
}

impl LatencyReport {
    fn latencies(&self, op: Op, from_ms: u64, to_ms: u64) -> impl Iterator<Item = f64> + '_ {
        self.samples
            .iter()
            .filter(move |s| {
                s.op == op
                    && s.outcome == Outcome::Granted
                    && (from_ms..to_ms).contains(&s.t_submit_ms)
            })
            .map(|s| s.latency_ms)
    }

    /// Statistics over granted requests of `op`.
    pub fn stats(&self, op: Op) -> Option<Stats> {
        stats_of(self.latencies(op, 0, u64::MAX))
    }

    /// Statistics over granted requests of `op` submitted in `[from, to)`.
    pub fn stats_between(&self, op: Op, from_ms: u64, to_ms: u64) -> Option<Stats> {
        stats_of(self.latencies(op, from_ms, to_ms))
    }

    pub fn stats_for_batch(&self, batch: usize) -> Option<Stats> {
        stats_of(
            self.samples
                .iter()
                .filter(|s| {
                    s.op == Op::Pseudonyms && s.batch == batch && s.outcome == Outcome::Granted
                })
                .map(|s| s.latency_ms),
        )
    }

    pub fn cdf(&self, op: Op) -> Vec<CdfPoint> {
        cdf_of(self.latencies(op, 0, u64::MAX))
    }

    pub fn count(&self, op: Op, outcome: Outcome) -> usize {
        self.samples
            .iter()
            .filter(|s| s.op == op && s.outcome == outcome)
            .count()
    }

    /// Every started request ended as granted, denied or failed.
    pub fn is_conserved(&self) -> bool {
        Op::ALL.iter().all(|&op| {
            let done = self.samples.iter().filter(|s| s.op == op).count();
            done == self.issued.get(&op).copied().unwrap_or(0)
        })
    }

    /// Buckets completions per second.
    pub fn compute_throughput(&mut self) {
        let mut buckets: BTreeMap<u64, usize> = BTreeMap::new();
        for s in self.samples.iter().filter(|s| s.op != Op::EndToEnd) {
            *buckets
                .entry((s.t_submit_ms as f64 + s.latency_ms) as u64 / 1000)
                .or_default() += 1;
        }
        self.throughput = buckets
            .into_iter()
            .map(|(t_s, requests)| RatePoint { t_s, requests })
            .collect();
    }

    pub fn summary(&self) -> BTreeMap<&'static str, Stats> {
        Op::ALL
            .iter()
            .filter_map(|&op| self.stats(op).map(|s| (op.as_str(), s)))
            .collect()
    }

    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Out<'a> {
            summary: BTreeMap<&'static str, Stats>,
            #[serde(flatten)]
            report: &'a LatencyReport,
        }
        serde_json::to_string_pretty(&Out {
            summary: self.summary(),
            report: self,
        })
        .expect("report serializes")
    }

    pub fn write_csv(&self, mut w: impl Write) -> io::Result<()> {
        writeln!(w, "op,t_submit_ms,latency_ms,outcome")?;
        for s in &self.samples {
            writeln!(
                w,
                "{},{},{:.3},{}",
                s.op.as_str(),
                s.t_submit_ms,
                s.latency_ms,
                s.outcome.as_str()
            )?;
        }
        Ok(())
    }

    /// One gnuplot data block per op: `latency_ms F`, separated by two
    /// blank lines so `index N` selects an op.
    pub fn write_cdf_table(&self, mut w: impl Write) -> io::Result<()> {
        for op in Op::ALL {
            writeln!(w, "# {}", op.as_str())?;
            writeln!(w, "# latency_ms F")?;
            for p in self.cdf(op) {
                writeln!(w, "{:.3} {:.6}", p.latency_ms, p.f)?;
            }
            writeln!(w)?;
            writeln!(w)?;
        }
        Ok(())
    }

    /// Writes `out` as JSON plus `.csv` and `.cdf.dat` siblings.
    pub fn write_all(&self, out: &Path) -> io::Result<()> {
        std::fs::write(out, self.to_json())?;
        self.write_csv(io::BufWriter::new(std::fs::File::create(
            out.with_extension("csv"),
        )?))?;
        self.write_cdf_table(io::BufWriter::new(std::fs::File::create(
            out.with_extension("cdf.dat"),
        )?))?;
        Ok(())
    }
}

/// Thread-safe sink the generator threads record into.
#[derive(Debug, Default)]
pub struct Recorder {
    inner: Mutex<LatencyReport>,
}

impl Recorder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn issue(&self, op: Op) {
        *self.inner.lock().unwrap().issued.entry(op).or_default() += 1;
    }

    pub fn record(&self, sample: Sample) {
        self.inner.lock().unwrap().samples.push(sample);
    }

    pub fn replica_point(&self, p: ReplicaPoint) {
        self.inner.lock().unwrap().replicas.push(p);
    }

    pub fn finish(self) -> LatencyReport {
        let mut r = self.inner.into_inner().unwrap();
        r.samples
            .sort_by(|a, b| a.t_submit_ms.cmp(&b.t_submit_ms).then(a.op.cmp(&b.op)));
        r.compute_throughput();
        r
    }
}
