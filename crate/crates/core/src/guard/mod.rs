//! Atomic check-and-set store that keeps a vehicle from holding two
//! overlapping tickets and a ticket from being redeemed twice.
//!
//! Two logical tables share one store:
//!
//! * interval entries: `SN_LTC -> expiry of the current ticket`
//! * single-use entries: `SN_tkt -> used`
//!
//! Each operation's query/check/write happens with no interleaving from any
//! other caller, so for K racing claims on one key exactly one is granted.

mod memory;
mod remote;

pub use memory::{GuardSnapshot, MemoryGuard};
pub use remote::{GuardServer, RemoteGuard};

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::crypto::Serial;

/// Separates live traffic from the keys used by health self-checks and from
/// foreign tickets redeemed at a foreign LTCA.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Space {
    Live,
    Foreign,
    SelfCheck,
}

impl Space {
    fn tag(self) -> &'static str {
        match self {
            Space::Live => "live",
            Space::Foreign => "foreign",
            Space::SelfCheck => "selfcheck",
        }
    }

    fn from_tag(s: &str) -> Option<Self> {
        match s {
            "live" => Some(Space::Live),
            "foreign" => Some(Space::Foreign),
            "selfcheck" => Some(Space::SelfCheck),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GuardKey {
    pub space: Space,
    pub serial: Serial,
}

impl GuardKey {
    pub fn live(serial: Serial) -> Self {
        GuardKey {
            space: Space::Live,
            serial,
        }
    }

    pub fn new(space: Space, serial: Serial) -> Self {
        GuardKey { space, serial }
    }

    /// `space:hex` as used by the text protocol.
    pub fn to_wire(&self) -> String {
        format!("{}:{}", self.space.tag(), self.serial.to_hex())
    }

    pub fn from_wire(s: &str) -> Option<Self> {
        let (space, hex) = s.split_once(':')?;
        Some(GuardKey {
            space: Space::from_tag(space)?,
            serial: Serial::from_hex(hex)?,
        })
    }
}

impl fmt::Debug for GuardKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_wire())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IntervalClaim {
    /// The new expiry was written; `prev` is what it replaced.
    Granted {
        prev: Option<u64>,
    },
    Denied,
}

impl IntervalClaim {
    pub fn is_granted(&self) -> bool {
        matches!(self, IntervalClaim::Granted { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OnceClaim {
    Granted,
    Denied,
}

impl OnceClaim {
    pub fn is_granted(&self) -> bool {
        matches!(self, OnceClaim::Granted)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GuardError {
    #[error("guard store unavailable: {0}")]
    Unavailable(String),
    #[error("interval start {start} is not before expiry {exp}")]
    InvalidInterval { start: u64, exp: u64 },
}

/// The atomic contract. Implementations must make every call atomic and
/// totally ordered with respect to every other call on the same store.
pub trait SybilGuard: Send + Sync + fmt::Debug {
    /// Grants if the key is absent or its stored expiry is `<= start`, and in
    /// that case stores `exp`.
    fn claim_ticket_interval(
        &self,
        key: GuardKey,
        start: u64,
        exp: u64,
    ) -> Result<IntervalClaim, GuardError>;

    /// Restores `prev`, deleting the key when `prev` is `None`.
    fn revert_ticket_interval(&self, key: GuardKey, prev: Option<u64>) -> Result<(), GuardError>;

    /// Grants if the key is absent or false, and in that case sets it true.
    fn claim_ticket_once(&self, key: GuardKey) -> Result<OnceClaim, GuardError>;

    /// Sets the key to false. Idempotent.
    fn revert_ticket_once(&self, key: GuardKey) -> Result<(), GuardError>;
}

pub type SharedGuard = Arc<dyn SybilGuard>;

impl<G: SybilGuard + ?Sized> SybilGuard for Arc<G> {
    fn claim_ticket_interval(
        &self,
        key: GuardKey,
        start: u64,
        exp: u64,
    ) -> Result<IntervalClaim, GuardError> {
        (**self).claim_ticket_interval(key, start, exp)
    }
    fn revert_ticket_interval(&self, key: GuardKey, prev: Option<u64>) -> Result<(), GuardError> {
        (**self).revert_ticket_interval(key, prev)
    }
    fn claim_ticket_once(&self, key: GuardKey) -> Result<OnceClaim, GuardError> {
        (**self).claim_ticket_once(key)
    }
    fn revert_ticket_once(&self, key: GuardKey) -> Result<(), GuardError> {
        (**self).revert_ticket_once(key)
    }
}

/// What a service does when the guard cannot be reached.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailPolicy {
    /// Refuse to issue.
    #[default]
    FailClose,
    /// Issue anyway and flag the record for later invalidation.
    FailOpen,
}

impl std::str::FromStr for FailPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fail-close" | "close" => Ok(FailPolicy::FailClose),
            "fail-open" | "open" => Ok(FailPolicy::FailOpen),
            other => Err(format!("unknown guard policy {other:?}")),
        }
    }
}
