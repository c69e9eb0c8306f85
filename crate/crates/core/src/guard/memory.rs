use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Mutex;

use super::{GuardError, GuardKey, IntervalClaim, OnceClaim, SybilGuard};

#[derive(Debug, Default)]
struct Tables {
    intervals: HashMap<GuardKey, u64>,
    once: HashMap<GuardKey, bool>,
}

/// Point-in-time copy of the store, ordered for comparisons in tests.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GuardSnapshot {
    pub intervals: BTreeMap<GuardKey, u64>,
    pub once: BTreeMap<GuardKey, bool>,
}

/// Embedded store. A single mutex serializes every operation, which gives
/// the total order the contract asks for.
#[derive(Debug)]
pub struct MemoryGuard {
    tables: Mutex<Tables>,
    online: AtomicBool,
}

impl Default for MemoryGuard {
    fn default() -> Self {
        Self::new()
    }
}

impl MemoryGuard {
    pub fn new() -> Self {
        MemoryGuard {
            tables: Mutex::new(Tables::default()),
            online: AtomicBool::new(true),
        }
    }

    /// Simulates the backend going down (or coming back).
    pub fn set_online(&self, online: bool) {
        self.online.store(online, Ordering::SeqCst);
    }

    fn lock(&self) -> Result<std::sync::MutexGuard<'_, Tables>, GuardError> {
        if !self.online.load(Ordering::SeqCst) {
            return Err(GuardError::Unavailable("backend offline".into()));
        }
        Ok(self.tables.lock().unwrap_or_else(|e| e.into_inner()))
    }

    pub fn snapshot(&self) -> GuardSnapshot {
        let t = self.tables.lock().unwrap_or_else(|e| e.into_inner());
        GuardSnapshot {
            intervals: t.intervals.iter().map(|(k, v)| (*k, *v)).collect(),
            once: t.once.iter().map(|(k, v)| (*k, *v)).collect(),
        }
    }

    pub fn interval_value(&self, key: GuardKey) -> Option<u64> {
        self.tables.lock().unwrap().intervals.get(&key).copied()
    }

    pub fn once_value(&self, key: GuardKey) -> Option<bool> {
        self.tables.lock().unwrap().once.get(&key).copied()
    }

    /// Deletes interval entries that expired more than `2 * gamma` seconds
    /// before `now`. Returns how many were removed.
    pub fn sweep(&self, now: u64, gamma: u64) -> usize {
        let horizon = now.saturating_sub(gamma.saturating_mul(2));
        let mut t = self.tables.lock().unwrap_or_else(|e| e.into_inner());
        let before = t.intervals.len();
        t.intervals.retain(|_, exp| *exp >= horizon);
        before - t.intervals.len()
    }
}

impl SybilGuard for MemoryGuard {
    fn claim_ticket_interval(
        &self,
        key: GuardKey,
        start: u64,
        exp: u64,
    ) -> Result<IntervalClaim, GuardError> {
        if start >= exp {
            return Err(GuardError::InvalidInterval { start, exp });
        }
        let mut t = self.lock()?;
        let prev = t.intervals.get(&key).copied();
        match prev {
            Some(stored) if stored > start => Ok(IntervalClaim::Denied),
            _ => {
                t.intervals.insert(key, exp);
                Ok(IntervalClaim::Granted { prev })
            }
        }
    }

    fn revert_ticket_interval(&self, key: GuardKey, prev: Option<u64>) -> Result<(), GuardError> {
        let mut t = self.lock()?;
        match prev {
            Some(v) => {
                t.intervals.insert(key, v);
            }
            None => {
                t.intervals.remove(&key);
            }
        }
        Ok(())
    }

    fn claim_ticket_once(&self, key: GuardKey) -> Result<OnceClaim, GuardError> {
        let mut t = self.lock()?;
        let used = t.once.entry(key).or_insert(false);
        if *used {
            Ok(OnceClaim::Denied)
        } else {
            *used = true;
            Ok(OnceClaim::Granted)
        }
    }

    fn revert_ticket_once(&self, key: GuardKey) -> Result<(), GuardError> {
        self.lock()?.once.insert(key, false);
        Ok(())
    }
}
