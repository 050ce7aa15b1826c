//! HTTP service for browsing hidden-state traces.
//!
//! Traces come from the fixture directory, from uploads, or from a remote
//! extractor via `/api/predict`. Projections are computed lazily per layer
//! and cached per trace.

pub mod api;
pub mod config;
pub mod extractor;
pub mod store;

use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::DefaultBodyLimit;
use axum::routing::{get, post};
use axum::Router;
use tower_http::services::ServeDir;

use vistrace_core::phases::MetricsConfig;
use vistrace_core::TraceAnalysis;

pub use api::{SampleDescriptor, Task};
pub use config::{Config, ConfigError};
use store::{Session, TraceStore};

pub struct AppState {
    pub config: Config,
    pub store: TraceStore,
    pub http: reqwest::Client,
}

impl AppState {
    pub fn new(config: Config) -> Self {
        Self {
            config,
            store: TraceStore::default(),
            http: reqwest::Client::new(),
        }
    }

    pub fn metrics_config(&self) -> MetricsConfig {
        MetricsConfig {
            k: self.config.cluster_k,
            seed: self.config.seed,
            ..MetricsConfig::default()
        }
    }

    pub fn new_session(&self, analysis: TraceAnalysis) -> Session {
        Session::new(analysis, self.metrics_config())
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    let api = Router::new()
        .route("/samples", get(api::list_samples))
        .route("/traces", post(api::upload_trace))
        .route("/traces/{id}", get(api::get_trace))
        .route("/traces/{id}/layers/{layer}", get(api::get_layer_view))
        .route("/traces/{id}/metrics", get(api::get_metric_series))
        .route("/predict", post(api::predict))
        .fallback(api::not_found)
        .layer(DefaultBodyLimit::max(state.config.max_upload_bytes));

    let app = Router::new().nest("/api", api);
    let app = match &state.config.static_dir {
        Some(dir) => app.fallback_service(ServeDir::new(dir)),
        None => app.route("/", get(api::fallback_index)).fallback(api::not_found),
    };
    app.with_state(state)
}

/// Binds `0.0.0.0:{port}` and serves until the process is stopped.
pub async fn serve(config: Config) -> std::io::Result<()> {
    let addr = SocketAddr::from(([0, 0, 0, 0], config.port));
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(Arc::new(AppState::new(config)))).await
}
