//! Pieces shared by the CA services: health verdicts and fault injection.

use std::sync::atomic::{AtomicBool, AtomicU32, Ordering};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum Health {
    Healthy,
    Unhealthy { stage: String },
}

impl Health {
    pub fn unhealthy(stage: &str) -> Self {
        Health::Unhealthy {
            stage: stage.to_string(),
        }
    }

    pub fn is_healthy(&self) -> bool {
        matches!(self, Health::Healthy)
    }
}

/// Switches for exercising failure paths. All off by default.
#[derive(Debug, Default)]
pub struct FaultInjector {
    fail_after_grant: AtomicU32,
    corrupt_signing_key: AtomicBool,
    break_chain: AtomicBool,
    overlap_slots: AtomicBool,
    fabricate_ik: AtomicBool,
}

impl FaultInjector {
    pub fn new() -> Self {
        Self::default()
    }

    /// Makes the next `n` issuances fail right after the guard granted them.
    pub fn fail_after_grant(&self, n: u32) {
        self.fail_after_grant.store(n, Ordering::SeqCst);
    }

    /// Consumes one pending post-grant failure, if any.
    pub fn take_post_grant_failure(&self) -> bool {
        self.fail_after_grant
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1))
            .is_ok()
    }

    /// Signs with a key that does not match the published certificate.
    pub fn set_corrupt_signing_key(&self, on: bool) {
        self.corrupt_signing_key.store(on, Ordering::SeqCst);
    }

    pub fn corrupt_signing_key(&self) -> bool {
        self.corrupt_signing_key.load(Ordering::SeqCst)
    }

    /// Flips a byte of the second serial of every computed chain.
    pub fn set_break_chain(&self, on: bool) {
        self.break_chain.store(on, Ordering::SeqCst);
    }

    pub fn break_chain(&self) -> bool {
        self.break_chain.load(Ordering::SeqCst)
    }

    /// Gives consecutive pseudonyms overlapping validity periods.
    pub fn set_overlap_slots(&self, on: bool) {
        self.overlap_slots.store(on, Ordering::SeqCst);
    }

    pub fn overlap_slots(&self) -> bool {
        self.overlap_slots.load(Ordering::SeqCst)
    }

    /// Issues pseudonyms whose identifiable keys are random, as a rogue PCA
    /// without a valid ticket would.
    pub fn set_fabricate_ik(&self, on: bool) {
        self.fabricate_ik.store(on, Ordering::SeqCst);
    }

    pub fn fabricate_ik(&self) -> bool {
        self.fabricate_ik.load(Ordering::SeqCst)
    }
}
