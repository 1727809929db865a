//! Annotation service: exposes the annotate step of running AL sessions over
//! HTTP so a human can stand in for the simulated oracle.
//!
//! A [`Session`] owns one AL loop. Its [`RemoteOracle`](session::RemoteOracle)
//! turns each selected batch into [`AnnotationTask`]s and suspends the loop
//! until every task has labels. [`router`] maps the HTTP API onto sessions.

pub mod api;
pub mod error;
pub mod session;

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::Arc;

pub use api::{router, Sessions};
pub use error::ServiceError;
pub use session::{AnnotationTask, Session, SessionView, TaskStatus, WireSpot};

/// Builds the shared session table.
pub fn sessions(list: impl IntoIterator<Item = Arc<Session>>) -> Sessions {
    Arc::new(
        list.into_iter()
            .map(|s| (s.id().to_string(), s))
            .collect::<BTreeMap<_, _>>(),
    )
}

/// Serves the API on `listener` until the future is dropped.
pub async fn serve(listener: tokio::net::TcpListener, sessions: Sessions) -> std::io::Result<()> {
    axum::serve(listener, router(sessions)).await
}

/// Binds `addr` and serves on a dedicated runtime, blocking the caller.
pub fn serve_blocking(addr: SocketAddr, sessions: Sessions) -> std::io::Result<()> {
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        tracing::info!(%addr, "annotation service listening");
        serve(listener, sessions).await
    })
}

/// Serves on an already bound listener from a background thread with its
/// own single-threaded runtime.
pub fn spawn_server(
    listener: std::net::TcpListener,
    sessions: Sessions,
) -> std::io::Result<std::thread::JoinHandle<std::io::Result<()>>> {
    listener.set_nonblocking(true)?;
    let runtime = tokio::runtime::Builder::new_current_thread()
        .enable_all()
        .build()?;
    Ok(std::thread::spawn(move || {
        runtime.block_on(async move {
            let listener = tokio::net::TcpListener::from_std(listener)?;
            serve(listener, sessions).await
        })
    }))
}
