//! Load and health gauges published by every service.
//!
//! Load is the busy-time fraction of a worker pool, smoothed with an
//! exponentially weighted moving average (10 s time constant by default).
//! The meter is clock-agnostic: callers pass timestamps as offsets, so the
//! same code serves wall-clock services and the virtual-time simulator.

use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ServiceMetrics {
    /// Smoothed utilization in `[0, 1]`.
    pub load: f64,
    pub in_flight: usize,
    pub health: bool,
}

#[derive(Debug)]
struct MeterState {
    capacity: usize,
    last_sample: Duration,
    /// Busy time of completed requests since `last_sample`.
    completed_busy: Duration,
    active: HashMap<u64, Duration>,
    ewma: f64,
    primed: bool,
}

#[derive(Debug)]
pub struct LoadMeter {
    epoch: Instant,
    window: Duration,
    next_token: AtomicU64,
    state: Mutex<MeterState>,
    healthy: AtomicBool,
}

impl LoadMeter {
    pub fn new(capacity: usize) -> Self {
        Self::with_window(capacity, Duration::from_secs(10))
    }

    pub fn with_window(capacity: usize, window: Duration) -> Self {
        LoadMeter {
            epoch: Instant::now(),
            window,
            next_token: AtomicU64::new(0),
            state: Mutex::new(MeterState {
                capacity: capacity.max(1),
                last_sample: Duration::ZERO,
                completed_busy: Duration::ZERO,
                active: HashMap::new(),
                ewma: 0.0,
                primed: false,
            }),
            healthy: AtomicBool::new(true),
        }
    }

    /// Wall-clock offset since the meter was created.
    pub fn now(&self) -> Duration {
        self.epoch.elapsed()
    }

    pub fn set_capacity(&self, capacity: usize) {
        self.state.lock().unwrap().capacity = capacity.max(1);
    }

    pub fn capacity(&self) -> usize {
        self.state.lock().unwrap().capacity
    }

    pub fn begin_at(&self, now: Duration) -> u64 {
        let token = self.next_token.fetch_add(1, Ordering::Relaxed);
        self.state.lock().unwrap().active.insert(token, now);
        token
    }

    pub fn end_at(&self, token: u64, now: Duration) {
        let mut s = self.state.lock().unwrap();
        if let Some(start) = s.active.remove(&token) {
            let from = start.max(s.last_sample);
            s.completed_busy += now.saturating_sub(from);
        }
    }

    /// Marks one request in flight until the guard drops.
    pub fn track(self: &Arc<Self>) -> InFlight {
        let token = self.begin_at(self.now());
        InFlight {
            meter: self.clone(),
            token,
        }
    }

    /// Folds the busy time since the previous sample into the average and
    /// returns the new utilization.
    pub fn sample_at(&self, now: Duration) -> f64 {
        let mut s = self.state.lock().unwrap();
        let dt = now.saturating_sub(s.last_sample);
        if dt.is_zero() {
            return s.ewma;
        }
        let last = s.last_sample;
        let in_progress: Duration = s
            .active
            .values()
            .map(|start| now.saturating_sub((*start).max(last)))
            .sum();
        let busy = s.completed_busy + in_progress;
        let instant = (busy.as_secs_f64() / (dt.as_secs_f64() * s.capacity as f64)).clamp(0.0, 1.0);
        let alpha = 1.0 - (-dt.as_secs_f64() / self.window.as_secs_f64()).exp();
        s.ewma = if s.primed {
            s.ewma + alpha * (instant - s.ewma)
        } else {
            instant * alpha
        };
        s.primed = true;
        s.ewma = s.ewma.clamp(0.0, 1.0);
        s.completed_busy = Duration::ZERO;
        s.last_sample = now;
        s.ewma
    }

    pub fn sample(&self) -> f64 {
        self.sample_at(self.now())
    }

    pub fn utilization(&self) -> f64 {
        self.state.lock().unwrap().ewma
    }

    pub fn in_flight(&self) -> usize {
        self.state.lock().unwrap().active.len()
    }

    pub fn set_healthy(&self, healthy: bool) {
        self.healthy.store(healthy, Ordering::SeqCst);
    }

    pub fn is_healthy(&self) -> bool {
        self.healthy.load(Ordering::SeqCst)
    }

    pub fn snapshot(&self) -> ServiceMetrics {
        ServiceMetrics {
            load: self.sample(),
            in_flight: self.in_flight(),
            health: self.is_healthy(),
        }
    }
}

pub struct InFlight {
    meter: Arc<LoadMeter>,
    token: u64,
}

impl Drop for InFlight {
    fn drop(&mut self) {
        let now = self.meter.now();
        self.meter.end_at(self.token, now);
    }
}
