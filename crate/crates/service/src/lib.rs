//! HTTP/JSON advisory service.
//!
//! All model state is loaded into an immutable [`ModelSnapshot`] before the
//! listener binds; handlers only read it. Preferences arrive with each
//! request and are never stored.
//!
//! | Method | Path               | Body                          |
//! |--------|--------------------|-------------------------------|
//! | GET    | `/healthz`         |                               |
//! | GET    | `/attributes`      |                               |
//! | GET    | `/profiles`        |                               |
//! | GET    | `/profiles/{id}`   |                               |
//! | GET    | `/images`          |                               |
//! | POST   | `/score`           | [`ScoreRequest`]              |
//! | POST   | `/profiles/assign` | [`AssignRequest`]             |
//!
//! Errors are `{ "error": <message>, "code": <HTTP status> }`.

pub mod api;
pub mod error;
pub mod routes;
pub mod snapshot;

use std::net::SocketAddr;
use std::sync::Arc;

pub use api::{handle_assign, handle_score, AssignRequest, ScoreMode, ScoreRequest, ScoreResponse};
pub use error::ApiError;
pub use routes::router;
pub use snapshot::{ModelSnapshot, SnapshotError, SnapshotPaths};

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error(transparent)]
    Snapshot(#[from] SnapshotError),
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: SocketAddr, source: std::io::Error },
    #[error("server error: {0}")]
    Server(#[from] std::io::Error),
}

/// Load the snapshot, bind, and serve until Ctrl-C.
pub async fn serve(paths: &SnapshotPaths, addr: SocketAddr) -> Result<(), ServeError> {
    let snapshot = Arc::new(ModelSnapshot::load(paths)?);
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|source| ServeError::Bind { addr, source })?;
    tracing::info!(addr = %listener.local_addr()?, "privacy advisor listening");
    axum::serve(listener, router(snapshot))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
