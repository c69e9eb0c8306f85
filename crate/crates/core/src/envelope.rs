//! Request/response framing shared by every protocol message, and the
//! clock used for freshness checks.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoding::Fields;

/// `(Id, N, t_now)` carried by every request and response.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Envelope {
    pub id: u64,
    pub nonce: u64,
    /// UTC milliseconds.
    pub t_now: u64,
}

impl Envelope {
    pub fn new_request(now_ms: u64) -> Self {
        let mut rng = rand::thread_rng();
        Envelope {
            id: rng.gen(),
            nonce: rng.gen(),
            t_now: now_ms,
        }
    }

    /// Response echoing `N + 1`.
    pub fn reply(&self, now_ms: u64) -> Self {
        Envelope {
            id: rand::thread_rng().gen(),
            nonce: self.nonce.wrapping_add(1),
            t_now: now_ms,
        }
    }

    pub fn answers(&self, request: &Envelope) -> bool {
        self.nonce == request.nonce.wrapping_add(1)
    }

    pub fn is_fresh(&self, receiver_now_ms: u64, window_s: u64) -> bool {
        self.t_now.abs_diff(receiver_now_ms) <= window_s.saturating_mul(1000)
    }

    pub(crate) fn fields(&self, f: Fields) -> Fields {
        f.u64(self.id).u64(self.nonce).u64(self.t_now)
    }
}

pub trait Clock: Send + Sync + std::fmt::Debug {
    fn now_ms(&self) -> u64;

    fn now_s(&self) -> u64 {
        self.now_ms() / 1000
    }
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now_ms(&self) -> u64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0)
    }
}

/// Settable clock shared between tests and services.
#[derive(Debug, Default, Clone)]
pub struct ManualClock(Arc<AtomicU64>);

impl ManualClock {
    pub fn at_secs(s: u64) -> Self {
        ManualClock(Arc::new(AtomicU64::new(s * 1000)))
    }

    pub fn set_ms(&self, ms: u64) {
        self.0.store(ms, Ordering::SeqCst);
    }

    pub fn set_secs(&self, s: u64) {
        self.set_ms(s * 1000);
    }

    pub fn advance_secs(&self, s: u64) {
        self.0.fetch_add(s * 1000, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now_ms(&self) -> u64 {
        self.0.load(Ordering::SeqCst)
    }
}
