//! HTTP front-end for a [`SessionManager`].

use std::future::Future;
use std::net::SocketAddr;
use std::sync::Arc;
use std::thread;

use axum::body::Bytes;
use axum::extract::rejection::QueryRejection;
use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use tokio::net::TcpListener;
use tokio::sync::oneshot;

use super::wire::{
    ActionsResponse, CreateEnvRequest, CreateEnvResponse, ErrorResponse, ObservationResponse, ResetRequest,
    SessionQuery, StepRequest,
};
use super::{ProtocolError, SessionManager};

/// Env var holding the default bind address.
pub const BIND_ENV: &str = "EVOLGYM_BIND";

struct ApiError(ProtocolError);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.0.http_status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(ErrorResponse::from(&self.0))).into_response()
    }
}

impl From<ProtocolError> for ApiError {
    fn from(e: ProtocolError) -> Self {
        ApiError(e)
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError(ProtocolError::BadRequest(e.to_string())))
}

fn parse_query<T>(q: Result<Query<T>, QueryRejection>) -> Result<T, ApiError> {
    q.map(|Query(q)| q)
        .map_err(|e| ApiError(ProtocolError::BadRequest(e.body_text())))
}

async fn create_env(State(mgr): State<Arc<SessionManager>>, body: Bytes) -> ApiResult<CreateEnvResponse> {
    let req: CreateEnvRequest = parse_body(&body)?;
    let c = mgr.create(&req.env, req.instruction_id.as_deref(), req.seed)?;
    Ok(Json(CreateEnvResponse {
        session_id: c.session_id,
        system_prompt: c.system_prompt,
        observation: c.observation,
    }))
}

async fn step(State(mgr): State<Arc<SessionManager>>, body: Bytes) -> ApiResult<super::StepResult> {
    let req: StepRequest = parse_body(&body)?;
    Ok(Json(mgr.step(&req.session_id, &req.action)?))
}

async fn observation(
    State(mgr): State<Arc<SessionManager>>,
    q: Result<Query<SessionQuery>, QueryRejection>,
) -> ApiResult<ObservationResponse> {
    let q = parse_query(q)?;
    Ok(Json(ObservationResponse {
        observation: mgr.observation(&q.session_id)?,
    }))
}

async fn available_actions(
    State(mgr): State<Arc<SessionManager>>,
    q: Result<Query<SessionQuery>, QueryRejection>,
) -> ApiResult<ActionsResponse> {
    let q = parse_query(q)?;
    Ok(Json(ActionsResponse {
        actions: mgr.available_actions(&q.session_id)?,
    }))
}

async fn reset(State(mgr): State<Arc<SessionManager>>, body: Bytes) -> ApiResult<ObservationResponse> {
    let req: ResetRequest = parse_body(&body)?;
    Ok(Json(ObservationResponse {
        observation: mgr.reset(&req.session_id)?,
    }))
}

pub fn router(mgr: Arc<SessionManager>) -> Router {
    Router::new()
        .route("/createEnv", post(create_env))
        .route("/step", post(step))
        .route("/observation", get(observation))
        .route("/available_actions", get(available_actions))
        .route("/reset", post(reset))
        .with_state(mgr)
}

/// Serves `mgr` on an already bound listener until `shutdown` resolves.
/// Idle sessions are swept periodically.
pub async fn serve(
    listener: TcpListener,
    mgr: Arc<SessionManager>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let sweeper = {
        let mgr = Arc::clone(&mgr);
        let period = (mgr.idle_timeout() / 4).max(std::time::Duration::from_millis(50));
        tokio::spawn(async move {
            let mut tick = tokio::time::interval(period);
            loop {
                tick.tick().await;
                let n = mgr.evict_idle();
                if n > 0 {
                    tracing::debug!(evicted = n, "idle sessions removed");
                }
            }
        })
    };
    let result = axum::serve(listener, router(mgr))
        .with_graceful_shutdown(shutdown)
        .await;
    sweeper.abort();
    result
}

/// A server running on its own thread and runtime; stops when dropped.
pub struct ServerHandle {
    addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<thread::JoinHandle<()>>,
}

impl ServerHandle {
    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn stop(mut self) {
        self.shutdown_now();
    }

    fn shutdown_now(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.shutdown_now();
    }
}

/// Binds `addr` (port 0 picks a free port) and serves on a background thread.
pub fn spawn(mgr: Arc<SessionManager>, addr: &str) -> std::io::Result<ServerHandle> {
    let rt = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(4)
        .enable_all()
        .build()?;
    let listener = rt.block_on(TcpListener::bind(addr))?;
    let local = listener.local_addr()?;
    let (tx, rx) = oneshot::channel::<()>();
    let thread = thread::Builder::new()
        .name(format!("evolgym-server-{}", local.port()))
        .spawn(move || {
            rt.block_on(async move {
                let shutdown = async move {
                    let _ = rx.await;
                };
                if let Err(e) = serve(listener, mgr, shutdown).await {
                    tracing::error!(error = %e, "server stopped with error");
                }
            });
        })?;
    Ok(ServerHandle {
        addr: local,
        shutdown: Some(tx),
        thread: Some(thread),
    })
}
