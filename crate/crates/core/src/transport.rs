//! Endpoint traits, one per service leg, so clients run unchanged against
//! in-process services, HTTP, or a recording tap.

use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::cert::LongTermCertificate;
use crate::ltca::{
    ForeignTicketRequest, Ltca, LtcaError, RegistrationRequest, TicketRequest, TicketResponse,
};
use crate::pca::{
    Pca, PcaError, PseudonymRequest, PseudonymResponse, ResolveRequest, ResolveResponse,
};
use crate::ra::{Ra, RaError, ValidationReport, ValidationRequest};

pub trait LtcaApi: Send + Sync {
    fn register(&self, req: &RegistrationRequest) -> Result<LongTermCertificate, LtcaError>;
    fn issue_ticket(&self, req: &TicketRequest) -> Result<TicketResponse, LtcaError>;
    fn issue_foreign_ticket(&self, req: &ForeignTicketRequest)
        -> Result<TicketResponse, LtcaError>;
}

pub trait PcaApi: Send + Sync {
    fn issue_pseudonyms(&self, req: &PseudonymRequest) -> Result<PseudonymResponse, PcaError>;
}

/// The RA-only resolution endpoint of a PCA.
pub trait ResolveApi: Send + Sync {
    fn resolve(&self, req: &ResolveRequest) -> Result<ResolveResponse, PcaError>;
}

pub trait RaApi: Send + Sync {
    fn validate(&self, req: &ValidationRequest) -> Result<ValidationReport, RaError>;
}

impl LtcaApi for Ltca {
    fn register(&self, req: &RegistrationRequest) -> Result<LongTermCertificate, LtcaError> {
        self.register_vehicle(req)
    }

    fn issue_ticket(&self, req: &TicketRequest) -> Result<TicketResponse, LtcaError> {
        Ltca::issue_ticket(self, req)
    }

    fn issue_foreign_ticket(
        &self,
        req: &ForeignTicketRequest,
    ) -> Result<TicketResponse, LtcaError> {
        Ltca::issue_foreign_ticket(self, req)
    }
}

impl PcaApi for Pca {
    fn issue_pseudonyms(&self, req: &PseudonymRequest) -> Result<PseudonymResponse, PcaError> {
        Pca::issue_pseudonyms(self, req)
    }
}

impl ResolveApi for Pca {
    fn resolve(&self, req: &ResolveRequest) -> Result<ResolveResponse, PcaError> {
        self.resolve_pseudonym(req)
    }
}

impl RaApi for Ra {
    fn validate(&self, req: &ValidationRequest) -> Result<ValidationReport, RaError> {
        self.validate_issuance(req)
    }
}

macro_rules! forward_arc {
    ($tr:ident { $($m:ident($req:ty) -> $res:ty;)* }) => {
        impl<T: $tr + ?Sized> $tr for Arc<T> {
            $(fn $m(&self, req: &$req) -> $res { (**self).$m(req) })*
        }
    };
}

forward_arc!(LtcaApi {
    register(RegistrationRequest) -> Result<LongTermCertificate, LtcaError>;
    issue_ticket(TicketRequest) -> Result<TicketResponse, LtcaError>;
    issue_foreign_ticket(ForeignTicketRequest) -> Result<TicketResponse, LtcaError>;
});
forward_arc!(PcaApi {
    issue_pseudonyms(PseudonymRequest) -> Result<PseudonymResponse, PcaError>;
});
forward_arc!(ResolveApi {
    resolve(ResolveRequest) -> Result<ResolveResponse, PcaError>;
});
forward_arc!(RaApi {
    validate(ValidationRequest) -> Result<ValidationReport, RaError>;
});

/// Which protocol leg a message travelled on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Leg {
    Ltca,
    Pca,
    Resolve,
    Ra,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    Request,
    Response,
}

/// One message exactly as it would cross the wire (JSON body bytes).
#[derive(Debug, Clone)]
pub struct WireMessage {
    pub leg: Leg,
    pub direction: Direction,
    pub bytes: Vec<u8>,
}

/// Shared transcript of every message passing through tapped endpoints.
#[derive(Debug, Clone, Default)]
pub struct Transcript {
    messages: Arc<Mutex<Vec<WireMessage>>>,
}

impl Transcript {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn messages(&self) -> Vec<WireMessage> {
        self.messages.lock().unwrap().clone()
    }

    pub fn leg(&self, leg: Leg) -> Vec<WireMessage> {
        self.messages
            .lock()
            .unwrap()
            .iter()
            .filter(|m| m.leg == leg)
            .cloned()
            .collect()
    }

    pub fn clear(&self) {
        self.messages.lock().unwrap().clear();
    }

    fn record(&self, leg: Leg, direction: Direction, bytes: Vec<u8>) {
        self.messages.lock().unwrap().push(WireMessage {
            leg,
            direction,
            bytes,
        });
    }
}

/// Serializes both directions to JSON and back, recording the bytes, so the
/// wrapped service sees exactly what a remote peer would send.
pub struct Tapped<T> {
    inner: T,
    leg: Leg,
    transcript: Option<Transcript>,
}

impl<T> fmt::Debug for Tapped<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tapped").field("leg", &self.leg).finish()
    }
}

impl<T> Tapped<T> {
    pub fn new(inner: T, leg: Leg, transcript: Transcript) -> Self {
        Tapped {
            inner,
            leg,
            transcript: Some(transcript),
        }
    }

    /// JSON round trip without recording.
    pub fn wire_only(inner: T, leg: Leg) -> Self {
        Tapped {
            inner,
            leg,
            transcript: None,
        }
    }

    fn pass<Q, R, E>(
        &self,
        req: &Q,
        call: impl FnOnce(&Q) -> Result<R, E>,
        wire_err: fn(String) -> E,
    ) -> Result<R, E>
    where
        Q: Serialize + DeserializeOwned,
        Result<R, E>: Serialize + DeserializeOwned,
    {
        let out = serde_json::to_vec(req).map_err(|e| wire_err(e.to_string()))?;
        if let Some(t) = &self.transcript {
            t.record(self.leg, Direction::Request, out.clone());
        }
        let received: Q = serde_json::from_slice(&out).map_err(|e| wire_err(e.to_string()))?;
        let result = call(&received);
        let back = serde_json::to_vec(&result).map_err(|e| wire_err(e.to_string()))?;
        if let Some(t) = &self.transcript {
            t.record(self.leg, Direction::Response, back.clone());
        }
        serde_json::from_slice(&back).map_err(|e| wire_err(e.to_string()))?
    }
}

impl<T: LtcaApi> LtcaApi for Tapped<T> {
    fn register(&self, req: &RegistrationRequest) -> Result<LongTermCertificate, LtcaError> {
        self.pass(req, |r| self.inner.register(r), LtcaError::Transport)
    }

    fn issue_ticket(&self, req: &TicketRequest) -> Result<TicketResponse, LtcaError> {
        self.pass(req, |r| self.inner.issue_ticket(r), LtcaError::Transport)
    }

    fn issue_foreign_ticket(
        &self,
        req: &ForeignTicketRequest,
    ) -> Result<TicketResponse, LtcaError> {
        self.pass(
            req,
            |r| self.inner.issue_foreign_ticket(r),
            LtcaError::Transport,
        )
    }
}

impl<T: PcaApi> PcaApi for Tapped<T> {
    fn issue_pseudonyms(&self, req: &PseudonymRequest) -> Result<PseudonymResponse, PcaError> {
        self.pass(req, |r| self.inner.issue_pseudonyms(r), PcaError::Transport)
    }
}

impl<T: ResolveApi> ResolveApi for Tapped<T> {
    fn resolve(&self, req: &ResolveRequest) -> Result<ResolveResponse, PcaError> {
        self.pass(req, |r| self.inner.resolve(r), PcaError::Transport)
    }
}

impl<T: RaApi> RaApi for Tapped<T> {
    fn validate(&self, req: &ValidationRequest) -> Result<ValidationReport, RaError> {
        self.pass(req, |r| self.inner.validate(r), RaError::Transport)
    }
}

/// Round-robin over replicas, like a service load balancer.
#[derive(Debug)]
pub struct Balanced<T> {
    replicas: Vec<T>,
    next: AtomicUsize,
}

impl<T> Balanced<T> {
    pub fn new(replicas: Vec<T>) -> Self {
        assert!(!replicas.is_empty(), "need at least one replica");
        Balanced {
            replicas,
            next: AtomicUsize::new(0),
        }
    }

    pub fn pick(&self) -> &T {
        &self.replicas[self.next.fetch_add(1, Ordering::Relaxed) % self.replicas.len()]
    }

    pub fn replicas(&self) -> &[T] {
        &self.replicas
    }
}

impl<T: LtcaApi> LtcaApi for Balanced<T> {
    fn register(&self, req: &RegistrationRequest) -> Result<LongTermCertificate, LtcaError> {
        self.pick().register(req)
    }

    fn issue_ticket(&self, req: &TicketRequest) -> Result<TicketResponse, LtcaError> {
        self.pick().issue_ticket(req)
    }

    fn issue_foreign_ticket(
        &self,
        req: &ForeignTicketRequest,
    ) -> Result<TicketResponse, LtcaError> {
        self.pick().issue_foreign_ticket(req)
    }
}

impl<T: PcaApi> PcaApi for Balanced<T> {
    fn issue_pseudonyms(&self, req: &PseudonymRequest) -> Result<PseudonymResponse, PcaError> {
        self.pick().issue_pseudonyms(req)
    }
}
