//! HTTP/JSON binding of the services.
//!
//! Bodies are the JSON form of the protocol structs, with byte fields in
//! base64url. Replies carry `{"Ok": ...}` or `{"Err": ...}`. Signatures are
//! always over canonical encodings rebuilt from the parsed structs, never
//! over the JSON text.

use std::io;
use std::net::{SocketAddr, TcpListener, ToSocketAddrs};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::Serialize;

use super::metrics::ServiceMetrics;
use crate::cert::LongTermCertificate;
use crate::ltca::{
    ForeignTicketRequest, Ltca, LtcaError, RegistrationRequest, TicketRequest, TicketResponse,
};
use crate::pca::{
    Pca, PcaError, PseudonymRequest, PseudonymResponse, ResolveRequest, ResolveResponse,
};
use crate::ra::{Ra, RaError, ValidationReport, ValidationRequest};
use crate::service::Health;
use crate::transport::{LtcaApi, PcaApi, RaApi, ResolveApi};

/// A service listening on its own runtime thread.
pub struct HttpServer {
    addr: SocketAddr,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl std::fmt::Debug for HttpServer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpServer")
            .field("addr", &self.addr)
            .finish()
    }
}

impl HttpServer {
    fn spawn(router: Router, addr: impl ToSocketAddrs, workers: usize) -> io::Result<Self> {
        let listener = TcpListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let runtime = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(workers.max(1))
            .enable_all()
            .build()?;
        let (tx, rx) = tokio::sync::oneshot::channel::<()>();
        let thread = std::thread::Builder::new()
            .name(format!("http-{addr}"))
            .spawn(move || {
                runtime.block_on(async move {
                    let listener = match tokio::net::TcpListener::from_std(listener) {
                        Ok(l) => l,
                        Err(e) => {
                            log::error!("http listener on {addr}: {e}");
                            return;
                        }
                    };
                    let served = axum::serve(listener, router)
                        .with_graceful_shutdown(async {
                            let _ = rx.await;
                        })
                        .await;
                    if let Err(e) = served {
                        log::error!("http server on {addr}: {e}");
                    }
                });
            })?;
        Ok(HttpServer {
            addr,
            shutdown: Some(tx),
            thread: Some(thread),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }

    /// Blocks until the server stops.
    pub fn wait(mut self) {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for HttpServer {
    fn drop(&mut self) {
        self.stop();
    }
}

async fn blocking<Q, R, E>(body: Q, f: impl FnOnce(Q) -> Result<R, E> + Send + 'static) -> Response
where
    Q: Send + 'static,
    R: Serialize + Send + 'static,
    E: Serialize + Send + 'static,
{
    match tokio::task::spawn_blocking(move || f(body)).await {
        Ok(Ok(r)) => (StatusCode::OK, Json(Ok::<R, E>(r))).into_response(),
        Ok(Err(e)) => (StatusCode::UNPROCESSABLE_ENTITY, Json(Err::<R, E>(e))).into_response(),
        Err(e) => (StatusCode::INTERNAL_SERVER_ERROR, e.to_string()).into_response(),
    }
}

async fn health_response(check: impl FnOnce() -> Health + Send + 'static) -> Response {
    match tokio::task::spawn_blocking(check).await {
        Ok(h) if h.is_healthy() => (StatusCode::OK, Json(h)).into_response(),
        Ok(h) => (StatusCode::SERVICE_UNAVAILABLE, Json(h)).into_response(),
        Err(e) => (StatusCode::INTERNAL_SERVER_ERROR, e.to_string()).into_response(),
    }
}

pub fn ltca_router(ltca: Ltca) -> Router {
    Router::new()
        .route(
            "/v1/register",
            post(
                |State(s): State<Ltca>, Json(r): Json<RegistrationRequest>| async move {
                    blocking(r, move |r| s.register_vehicle(&r)).await
                },
            ),
        )
        .route(
            "/v1/ticket",
            post(
                |State(s): State<Ltca>, Json(r): Json<TicketRequest>| async move {
                    blocking(r, move |r| s.issue_ticket(&r)).await
                },
            ),
        )
        .route(
            "/v1/ticket/foreign",
            post(
                |State(s): State<Ltca>, Json(r): Json<ForeignTicketRequest>| async move {
                    blocking(r, move |r| s.issue_foreign_ticket(&r)).await
                },
            ),
        )
        .route(
            "/v1/health",
            get(|State(s): State<Ltca>| async move {
                health_response(move || s.health_selfcheck()).await
            }),
        )
        .route(
            "/v1/metrics",
            get(|State(s): State<Ltca>| async move { Json(s.metrics()) }),
        )
        .with_state(ltca)
}

pub fn pca_router(pca: Pca) -> Router {
    Router::new()
        .route(
            "/v1/pseudonyms",
            post(
                |State(s): State<Pca>, Json(r): Json<PseudonymRequest>| async move {
                    blocking(r, move |r| s.issue_pseudonyms(&r)).await
                },
            ),
        )
        .route(
            "/v1/resolve",
            post(
                |State(s): State<Pca>, Json(r): Json<ResolveRequest>| async move {
                    blocking(r, move |r| s.resolve_pseudonym(&r)).await
                },
            ),
        )
        .route(
            "/v1/health",
            get(|State(s): State<Pca>| async move {
                health_response(move || s.health_selfcheck()).await
            }),
        )
        .route(
            "/v1/metrics",
            get(|State(s): State<Pca>| async move { Json(s.metrics()) }),
        )
        .with_state(pca)
}

pub fn ra_router(ra: Arc<Ra>) -> Router {
    Router::new()
        .route(
            "/v1/validate",
            post(
                |State(s): State<Arc<Ra>>, Json(r): Json<ValidationRequest>| async move {
                    blocking(r, move |r| s.validate_issuance(&r)).await
                },
            ),
        )
        .route("/v1/health", get(|| async { Json(Health::Healthy) }))
        .route(
            "/v1/metrics",
            get(|State(s): State<Arc<Ra>>| async move { Json(s.metrics()) }),
        )
        .with_state(ra)
}

pub fn serve_ltca(ltca: Ltca, addr: impl ToSocketAddrs) -> io::Result<HttpServer> {
    let workers = ltca.config().workers;
    HttpServer::spawn(ltca_router(ltca), addr, workers)
}

pub fn serve_pca(pca: Pca, addr: impl ToSocketAddrs) -> io::Result<HttpServer> {
    let workers = pca.config().workers;
    HttpServer::spawn(pca_router(pca), addr, workers)
}

pub fn serve_ra(ra: Arc<Ra>, addr: impl ToSocketAddrs) -> io::Result<HttpServer> {
    HttpServer::spawn(ra_router(ra), addr, 2)
}

/// Blocking JSON client for one service base URL.
#[derive(Debug, Clone)]
pub struct HttpClient {
    base: String,
    http: reqwest::blocking::Client,
}

impl HttpClient {
    pub fn new(base: &str) -> Self {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(30))
            .build()
            .expect("http client");
        HttpClient {
            base: base.trim_end_matches('/').to_string(),
            http,
        }
    }

    pub fn base(&self) -> &str {
        &self.base
    }

    fn post<Q, R, E>(&self, path: &str, body: &Q, wire: fn(String) -> E) -> Result<R, E>
    where
        Q: Serialize,
        R: DeserializeOwned,
        E: DeserializeOwned,
    {
        let res = self
            .http
            .post(format!("{}{path}", self.base))
            .json(body)
            .send()
            .map_err(|e| wire(e.to_string()))?;
        let status = res.status();
        let bytes = res.bytes().map_err(|e| wire(e.to_string()))?;
        serde_json::from_slice::<Result<R, E>>(&bytes).map_err(|e| {
            wire(format!(
                "{status}: {e}: {}",
                String::from_utf8_lossy(&bytes)
            ))
        })?
    }

    pub fn health(&self) -> Result<Health, String> {
        let res = self
            .http
            .get(format!("{}/v1/health", self.base))
            .send()
            .map_err(|e| e.to_string())?;
        res.json().map_err(|e| e.to_string())
    }

    pub fn metrics(&self) -> Result<ServiceMetrics, String> {
        let res = self
            .http
            .get(format!("{}/v1/metrics", self.base))
            .send()
            .map_err(|e| e.to_string())?;
        res.json().map_err(|e| e.to_string())
    }
}

impl LtcaApi for HttpClient {
    fn register(&self, req: &RegistrationRequest) -> Result<LongTermCertificate, LtcaError> {
        self.post("/v1/register", req, LtcaError::Transport)
    }

    fn issue_ticket(&self, req: &TicketRequest) -> Result<TicketResponse, LtcaError> {
        self.post("/v1/ticket", req, LtcaError::Transport)
    }

    fn issue_foreign_ticket(
        &self,
        req: &ForeignTicketRequest,
    ) -> Result<TicketResponse, LtcaError> {
        self.post("/v1/ticket/foreign", req, LtcaError::Transport)
    }
}

impl PcaApi for HttpClient {
    fn issue_pseudonyms(&self, req: &PseudonymRequest) -> Result<PseudonymResponse, PcaError> {
        self.post("/v1/pseudonyms", req, PcaError::Transport)
    }
}

impl ResolveApi for HttpClient {
    fn resolve(&self, req: &ResolveRequest) -> Result<ResolveResponse, PcaError> {
        self.post("/v1/resolve", req, PcaError::Transport)
    }
}

impl RaApi for HttpClient {
    fn validate(&self, req: &ValidationRequest) -> Result<ValidationReport, RaError> {
        self.post("/v1/validate", req, RaError::Transport)
    }
}
