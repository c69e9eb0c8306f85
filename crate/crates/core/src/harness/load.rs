//! Workload description and the seeded request schedule derived from it.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::scale::ScalePolicy;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlashCrowd {
    /// Offset of the first burst vehicle from the start of the run.
    pub start_s: f64,
    /// How long burst vehicles keep requesting.
    pub duration_s: f64,
    pub extra_vehicles: usize,
    /// Burst vehicles joining per second.
    pub hatch_rate: f64,
    pub batch_sizes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadConfig {
    pub total_vehicles: usize,
    /// Vehicles joining per second.
    pub hatch_rate: f64,
    /// Pause between a vehicle's acquisitions, `[min, max]` ms.
    pub think_time_ms: (u64, u64),
    pub batch_sizes: Vec<usize>,
    #[serde(default)]
    pub flash_crowd: Option<FlashCrowd>,
    pub duration_s: f64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("invalid load config: {0}")]
pub struct LoadConfigError(pub String);

impl LoadConfig {
    /// Normal arrivals: one vehicle per second, batches of 100 to 500.
    pub fn config_1() -> Self {
        LoadConfig {
            total_vehicles: 1000,
            hatch_rate: 1.0,
            think_time_ms: (1000, 5000),
            batch_sizes: vec![100, 200, 300, 400, 500],
            flash_crowd: None,
            duration_s: 1000.0,
        }
    }

    /// Normal arrivals plus a surge of vehicles joining a hundred per second.
    pub fn config_2() -> Self {
        LoadConfig {
            total_vehicles: 100,
            hatch_rate: 1.0,
            think_time_ms: (1000, 5000),
            batch_sizes: vec![100, 200, 500],
            flash_crowd: Some(FlashCrowd {
                start_s: 1500.0,
                duration_s: 500.0,
                extra_vehicles: 50_000,
                hatch_rate: 100.0,
                batch_sizes: vec![100, 200],
            }),
            duration_s: 2500.0,
        }
    }

    /// Shrinks vehicle counts and durations by `factor`, keeping rates.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut c = self.clone();
        c.total_vehicles = ((c.total_vehicles as f64 * factor).round() as usize).max(1);
        c.duration_s *= factor;
        if let Some(f) = &mut c.flash_crowd {
            f.extra_vehicles = ((f.extra_vehicles as f64 * factor).round() as usize).max(1);
            f.start_s *= factor;
            f.duration_s *= factor;
        }
        c
    }

    pub fn validate(&self) -> Result<(), LoadConfigError> {
        let err = |m: &str| Err(LoadConfigError(m.to_string()));
        if !(self.hatch_rate > 0.0) {
            return err("hatch_rate must be positive");
        }
        if self.think_time_ms.0 > self.think_time_ms.1 {
            return err("think_time_ms min exceeds max");
        }
        if self.batch_sizes.is_empty() || self.batch_sizes.contains(&0) {
            return err("batch_sizes must be non-empty and positive");
        }
        if !(self.duration_s >= 0.0) {
            return err("duration_s must be non-negative");
        }
        if let Some(f) = &self.flash_crowd {
            if !(f.hatch_rate > 0.0) {
                return err("flash_crowd.hatch_rate must be positive");
            }
            if f.batch_sizes.is_empty() || f.batch_sizes.contains(&0) {
                return err("flash_crowd.batch_sizes must be non-empty and positive");
            }
        }
        Ok(())
    }

    pub fn duration_ms(&self) -> u64 {
        (self.duration_s * 1000.0) as u64
    }

    /// `[start, end)` of the burst in ms, if any.
    pub fn burst_window_ms(&self) -> Option<(u64, u64)> {
        self.flash_crowd.as_ref().map(|f| {
            (
                (f.start_s * 1000.0) as u64,
                ((f.start_s + f.duration_s) * 1000.0) as u64,
            )
        })
    }
}

/// One simulated vehicle: when it joins, when it leaves, and its own random
/// stream for think times and batch sizes.
#[derive(Debug, Clone)]
pub struct VehiclePlan {
    pub id: usize,
    pub spawn_ms: u64,
    pub stop_ms: u64,
    pub burst: bool,
    pub batch_sizes: Vec<usize>,
    think_ms: (u64, u64),
    rng: ChaCha8Rng,
}

impl VehiclePlan {
    /// Think time and batch size for the next acquisition.
    pub fn next_step(&mut self) -> (u64, usize) {
        let think = self.rng.gen_range(self.think_ms.0..=self.think_ms.1);
        let batch = self.batch_sizes[self.rng.gen_range(0..self.batch_sizes.len())];
        (think, batch)
    }
}

/// A request as planned, assuming instant service.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannedRequest {
    pub vehicle: usize,
    pub t_ms: u64,
    pub batch: usize,
}

pub fn vehicle_plans(cfg: &LoadConfig, seed: u64) -> Vec<VehiclePlan> {
    let mut plans = Vec::new();
    let end = cfg.duration_ms();
    let stream = |id: usize| {
        ChaCha8Rng::seed_from_u64(seed ^ (id as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
    };
    for i in 0..cfg.total_vehicles {
        let spawn_ms = (i as f64 * 1000.0 / cfg.hatch_rate) as u64;
        if spawn_ms >= end {
            break;
        }
        plans.push(VehiclePlan {
            id: plans.len(),
            spawn_ms,
            stop_ms: end,
            burst: false,
            batch_sizes: cfg.batch_sizes.clone(),
            think_ms: cfg.think_time_ms,
            rng: stream(plans.len()),
        });
    }
    if let Some(f) = &cfg.flash_crowd {
        let (start, stop) = cfg.burst_window_ms().unwrap();
        let stop = stop.min(end);
        for j in 0..f.extra_vehicles {
            let spawn_ms = start + (j as f64 * 1000.0 / f.hatch_rate) as u64;
            if spawn_ms >= stop {
                break;
            }
            plans.push(VehiclePlan {
                id: plans.len(),
                spawn_ms,
                stop_ms: stop,
                burst: true,
                batch_sizes: f.batch_sizes.clone(),
                think_ms: cfg.think_time_ms,
                rng: stream(plans.len()),
            });
        }
    }
    plans
}

/// The open-loop schedule implied by `cfg` and `seed`: each vehicle's
/// first request goes out on arrival, later ones one think time apart.
pub fn schedule(cfg: &LoadConfig, seed: u64) -> Vec<PlannedRequest> {
    let mut out = Vec::new();
    for mut plan in vehicle_plans(cfg, seed) {
        let mut t = plan.spawn_ms;
        let (_, mut batch) = plan.next_step();
        while t < plan.stop_ms {
            out.push(PlannedRequest {
                vehicle: plan.id,
                t_ms: t,
                batch,
            });
            let (think, next) = plan.next_step();
            t += think;
            batch = next;
        }
    }
    out.sort_by_key(|r| (r.t_ms, r.vehicle));
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunMode {
    /// Real services on the wall clock.
    #[default]
    Live,
    /// Virtual-time queueing model of replica pools.
    Sim,
}

/// Contents of a `harness run --config` file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default)]
    pub mode: RunMode,
    #[serde(default = "default_tau_p")]
    pub tau_p: u64,
    /// Concurrent generator threads in live mode.
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    #[serde(default = "ScalePolicy::ltca_default")]
    pub ltca_scale: ScalePolicy,
    #[serde(default = "ScalePolicy::pca_default")]
    pub pca_scale: ScalePolicy,
    pub load: LoadConfig,
}

fn default_tau_p() -> u64 {
    60
}

fn default_concurrency() -> usize {
    16
}

impl RunConfig {
    pub fn new(load: LoadConfig) -> Self {
        RunConfig {
            mode: RunMode::Live,
            tau_p: default_tau_p(),
            concurrency: default_concurrency(),
            ltca_scale: ScalePolicy::ltca_default(),
            pca_scale: ScalePolicy::pca_default(),
            load,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, LoadConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| LoadConfigError(e.to_string()))?;
        cfg.load.validate()?;
        cfg.ltca_scale.validate().map_err(LoadConfigError)?;
        cfg.pca_scale.validate().map_err(LoadConfigError)?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, LoadConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| LoadConfigError(e.to_string()))?;
        Self::from_toml(&text)
    }
}
