//! HTTP exploration backend over frozen autoencoder and flow checkpoints.
//!
//! The data directory holds `datasets/{id}.json` (with its `.bin` blob),
//! `checkpoints/{id}.json` and one `sessions/{id}.json` document per session.

pub mod api;
pub mod error;
pub mod session;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::routing::{delete, get, post};
use axum::Router;
use paramflow::config::PipelineConfig;
use paramflow::{Error, Result};

pub use api::Shared;
pub use error::{ApiError, ErrorBody};
pub use session::AppState;

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/sessions", post(api::create_session))
        .route("/sessions/{id}", get(api::get_session))
        .route("/sessions/{id}/predict", post(api::predict))
        .route(
            "/sessions/{id}/preferences",
            post(api::add_preference).get(api::list_preferences),
        )
        .route(
            "/sessions/{id}/preferences/{idx}",
            delete(api::delete_preference),
        )
        .route("/sessions/{id}/ga", post(api::start_ga))
        .route("/sessions/{id}/ga/{run}", get(api::poll_ga))
        .route("/sessions/{id}/ga/{run}/promote", post(api::promote))
        .route("/sessions/{id}/recommend", post(api::recommend))
        .route("/sessions/{id}/reverse", post(api::reverse))
        .with_state(state)
}

/// Opens `data` and serves the API on `0.0.0.0:port` until the process exits.
pub fn serve_blocking(data: PathBuf, port: u16, defaults: PipelineConfig) -> Result<()> {
    let state = Arc::new(AppState::open(data.clone(), defaults)?);
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| Error::io(&data, e))?;
    runtime.block_on(async move {
        let addr = SocketAddr::from(([0, 0, 0, 0], port));
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| Error::Usage(format!("cannot bind port {port}: {e}")))?;
        axum::serve(listener, router(state))
            .await
            .map_err(|e| Error::io(&data, e))
    })
}
