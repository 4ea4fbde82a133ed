//! HTTP backend for the argument-tree editor.
//!
//! One process holds one [`EditorSession`]. Every endpoint lives under
//! `/api/v1/`; node paths travel as arrays of `[req_key, index]` pairs.
//! Mutations may carry `expected_revision` and are rejected with 409 when it
//! is stale.

mod api;
pub mod session;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use axum::Router;

pub use session::{EditorSession, MatchField, Outcome, SearchMatch, SessionError};

#[derive(Clone)]
pub struct AppState {
    pub session: Arc<RwLock<EditorSession>>,
    /// Directory with built frontend assets, served at `/`.
    pub static_dir: Option<PathBuf>,
}

impl AppState {
    pub fn new(session: EditorSession) -> Self {
        AppState {
            session: Arc::new(RwLock::new(session)),
            static_dir: None,
        }
    }

    pub fn with_static_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.static_dir = Some(dir.into());
        self
    }
}

pub fn router(state: AppState) -> Router {
    api::router(state)
}

/// Serves until the process is stopped. `on_ready` receives the bound address.
pub async fn serve(
    state: AppState,
    addr: SocketAddr,
    on_ready: impl FnOnce(SocketAddr),
) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    on_ready(listener.local_addr()?);
    axum::serve(listener, router(state)).await
}
