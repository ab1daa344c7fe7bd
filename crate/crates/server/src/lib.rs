//! HTTP service around the idea-space model and engine.

pub mod api;
pub mod config;
pub mod error;
pub mod persist;
pub mod state;

use std::net::SocketAddr;
use std::sync::Arc;

use ideaspace_core::engine::provider::{HttpProvider, Provider};
use ideaspace_core::engine::stub::{StubFixture, StubProvider};
use ideaspace_core::engine::template::TemplateRegistry;
use ideaspace_core::engine::Engine;

use config::{Config, ProviderKind};
use state::{AppState, Storage};

#[derive(Debug, thiserror::Error)]
pub enum StartupError {
    #[error(transparent)]
    Config(#[from] config::ConfigError),
    #[error("prompt templates: {0}")]
    Templates(#[from] ideaspace_core::engine::template::TemplateError),
    #[error("provider: {0}")]
    Provider(#[from] ideaspace_core::engine::provider::ProviderError),
    #[error("recovery: {0}")]
    Recovery(#[from] persist::PersistError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Builds the shared state and replays any persisted sessions.
pub fn build_state(config: &Config) -> Result<Arc<AppState>, StartupError> {
    config.validate()?;
    let templates = Arc::new(TemplateRegistry::load(&config.provider.prompts_dir)?);
    let provider: Arc<dyn Provider> = match config.provider.kind {
        ProviderKind::Stub => match &config.provider.fixture {
            Some(path) => Arc::new(StubProvider::with_fixture(config.provider.seed, StubFixture::load(path)?)),
            None => Arc::new(StubProvider::new(config.provider.seed)),
        },
        ProviderKind::Live => Arc::new(HttpProvider::new(config.provider.http())?),
    };
    let engine = Arc::new(Engine::new(provider, templates, config.provider.engine.clone()));
    let storage = config.persistence.dir.as_ref().map(|root| Storage {
        root: root.clone(),
        snapshot_every: config.persistence.snapshot_every,
    });
    if let Some(s) = &storage {
        std::fs::create_dir_all(&s.root)?;
    }
    let state = Arc::new(AppState::new(engine, config.geometry, config.provider.in_flight_limit, storage));
    let n = state.recover()?;
    if n > 0 {
        tracing::info!(sessions = n, "recovered persisted sessions");
    }
    Ok(state)
}

/// Binds and serves until the process exits. `on_bound` sees the actual
/// address, which matters when the configured port is 0.
pub async fn serve(
    config: &Config,
    state: Arc<AppState>,
    on_bound: impl FnOnce(SocketAddr),
) -> Result<(), StartupError> {
    let listener = tokio::net::TcpListener::bind((config.server.host.as_str(), config.server.port)).await?;
    on_bound(listener.local_addr()?);
    axum::serve(listener, api::router(state)).await?;
    Ok(())
}
