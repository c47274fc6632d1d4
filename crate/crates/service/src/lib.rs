//! HTTP service over named burrow collections.
//!
//! All endpoints live under `/api`; see `API.md` at the repository root.
//! When a UI directory is configured, every other path serves its files.

pub mod collections;
pub mod error;
pub mod mock;
pub mod prompt;
pub mod providers;
pub mod routes;

use std::future::Future;
use std::io;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::DefaultBodyLimit;
use axum::Router;
use tokio::net::TcpListener;
use tower_http::services::{ServeDir, ServeFile};

pub use collections::{BuildState, BuildStatus, Descriptor, Registry};
pub use error::ApiError;
pub use prompt::assemble_prompt;
pub use providers::Providers;
use routes::AppState;

pub const DEFAULT_MAX_BODY_BYTES: usize = 512 * 1024 * 1024;
pub const DEFAULT_PROVIDER_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub data_dir: PathBuf,
    pub embedding_url: Option<String>,
    pub llm_url: Option<String>,
    pub provider_timeout: Duration,
    /// Static files served outside `/api`, with `index.html` as fallback.
    pub ui_dir: Option<PathBuf>,
    /// Limit for JSON request bodies. Snapshot imports are streamed and
    /// not subject to it.
    pub max_body_bytes: usize,
}

impl ServiceConfig {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        Self {
            data_dir: data_dir.into(),
            embedding_url: None,
            llm_url: None,
            provider_timeout: DEFAULT_PROVIDER_TIMEOUT,
            ui_dir: None,
            max_body_bytes: DEFAULT_MAX_BODY_BYTES,
        }
    }
}

pub struct Service {
    config: ServiceConfig,
    state: AppState,
}

impl Service {
    /// Opens the data directory, recovering collections left by a previous
    /// run.
    pub async fn open(config: ServiceConfig) -> burrow::Result<Self> {
        let data_dir = config.data_dir.clone();
        let registry = tokio::task::spawn_blocking(move || Registry::open(data_dir))
            .await
            .map_err(|e| burrow::Error::Io(io::Error::other(e)))??;
        let providers = Providers::new(
            config.embedding_url.clone(),
            config.llm_url.clone(),
            config.provider_timeout,
        );
        Ok(Self {
            config,
            state: AppState {
                registry: Arc::new(registry),
                providers,
            },
        })
    }

    pub fn registry(&self) -> &Arc<Registry> {
        &self.state.registry
    }

    pub fn router(&self) -> Router {
        let api = routes::api()
            .layer(DefaultBodyLimit::max(self.config.max_body_bytes))
            .with_state(self.state.clone());
        let router = Router::new().nest("/api", api);
        match &self.config.ui_dir {
            Some(dir) => router.fallback_service(
                ServeDir::new(dir).fallback(ServeFile::new(dir.join("index.html"))),
            ),
            None => router,
        }
    }

    /// Serves until `shutdown` resolves, then cancels running builds and
    /// waits for them to persist before returning.
    pub async fn serve(self, listener: TcpListener, shutdown: impl Future<Output = ()> + Send + 'static) -> io::Result<()> {
        let registry = Arc::clone(&self.state.registry);
        let router = self.router();
        axum::serve(listener, router)
            .with_graceful_shutdown(async move {
                shutdown.await;
                tracing::info!("shutting down");
                registry.shutdown().await;
            })
            .await?;
        self.state.registry.shutdown().await;
        Ok(())
    }
}
