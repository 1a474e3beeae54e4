//! HTTP host for any [`Backend`] (used by `kbrag serve-mock`).

use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use tokio::sync::oneshot;

use super::{
    Backend, ConsistRequest, ErrorResponse, GatewayError, GenerateRequest, ScoreTagsRequest,
};

type Shared = Arc<dyn Backend>;

fn reply<T: serde::Serialize>(result: Result<T, GatewayError>) -> Response {
    match result {
        Ok(body) => Json(body).into_response(),
        Err(e) => {
            let status =
                StatusCode::from_u16(e.status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
            (status, Json(ErrorResponse { error: e.to_string() })).into_response()
        }
    }
}

async fn score_tags(State(backend): State<Shared>, Json(req): Json<ScoreTagsRequest>) -> Response {
    reply(backend.score_tags(&req))
}

async fn generate(State(backend): State<Shared>, Json(req): Json<GenerateRequest>) -> Response {
    reply(backend.generate(&req))
}

async fn consist(State(backend): State<Shared>, Json(req): Json<ConsistRequest>) -> Response {
    reply(backend.consist(&req))
}

pub fn router(backend: Shared) -> Router {
    Router::new()
        .route("/v1/score_tags", post(score_tags))
        .route("/v1/generate", post(generate))
        .route("/v1/consist", post(consist))
        .with_state(backend)
}

/// Serves `backend` on an already-bound listener until `shutdown` resolves.
pub async fn serve(
    backend: Shared,
    listener: tokio::net::TcpListener,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(backend))
        .with_graceful_shutdown(shutdown)
        .await
}

/// A server running on its own runtime thread; stops when dropped.
pub struct ServerHandle {
    addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<std::io::Result<()>>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Blocks until the server exits.
    pub fn join(mut self) -> std::io::Result<()> {
        self.shutdown.take();
        self.thread
            .take()
            .map_or(Ok(()), |t| t.join().expect("server thread panicked"))
    }

    /// Blocks forever (or until the server fails).
    pub fn wait(mut self) -> std::io::Result<()> {
        let _keep = self.shutdown.take();
        self.thread
            .take()
            .map_or(Ok(()), |t| t.join().expect("server thread panicked"))
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

/// Binds `addr` (port 0 picks a free port) and serves in a background thread.
pub fn spawn(backend: Shared, addr: SocketAddr) -> std::io::Result<ServerHandle> {
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(4)
        .enable_all()
        .build()?;
    let listener = runtime.block_on(tokio::net::TcpListener::bind(addr))?;
    let addr = listener.local_addr()?;
    let (tx, rx) = oneshot::channel::<()>();
    let thread = std::thread::spawn(move || {
        runtime.block_on(serve(backend, listener, async {
            let _ = rx.await;
        }))
    });
    Ok(ServerHandle {
        addr,
        shutdown: Some(tx),
        thread: Some(thread),
    })
}
