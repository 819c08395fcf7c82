//! Wiring a [`Settings`] file into a ready [`EngineRunner`].

use std::sync::Arc;

use thiserror::Error;

use crate::catalog::{Catalog, CatalogError};
use crate::compile::{ScaffoldCompiler, ToolError};
use crate::config::{ConfigError, Settings};
use crate::engine::{Clock, EventSink, FrozenClock, SystemClock};
use crate::harness::EngineRunner;
use crate::llm::{
    Gateway, HttpTransport, Playlist, PromptSet, ProviderError, RetryPolicy, ScriptedTransport,
    TemplateError,
};
use crate::sim::CommandSimulator;
use crate::toolchain_mock::ScriptedToolchain;

#[derive(Debug, Error)]
pub enum SetupError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Tool(#[from] ToolError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("config has no [{0}] section")]
    MissingSection(&'static str),
    #[error("{0}")]
    Playlist(String),
}

/// Where replies and tool results come from.
#[derive(Debug, Clone)]
pub enum Backend {
    /// Real provider, scaffold compiler and simulator.
    Live,
    /// Canned replies and the marker-driven toolchain; trial `t` uses
    /// script `t` of the playlist.
    Mock(Playlist),
}

impl Backend {
    pub fn mock_from(path: &std::path::Path) -> Result<Self, SetupError> {
        Playlist::load(path)
            .map(Backend::Mock)
            .map_err(SetupError::Playlist)
    }
}

pub fn load_catalog(settings: &Settings) -> Result<Catalog, SetupError> {
    Ok(match &settings.paths.catalog {
        Some(p) => Catalog::load(p)?,
        None => Catalog::builtin(),
    })
}

pub fn load_prompts(settings: &Settings) -> Result<PromptSet, SetupError> {
    Ok(match &settings.paths.templates {
        Some(dir) => PromptSet::from_dir(dir)?,
        None => PromptSet::builtin(),
    })
}

/// Builds the runner. Tool and provider prerequisites (scaffold pins,
/// simulator programs, API key) are checked here, before any trial runs.
pub fn build_runner(
    settings: &Settings,
    backend: Backend,
    events: Arc<dyn EventSink>,
) -> Result<EngineRunner, SetupError> {
    settings.validate()?;
    let catalog = load_catalog(settings)?;
    let prompts = load_prompts(settings)?;
    let cfg = settings.run.clone();
    match backend {
        Backend::Mock(playlist) => {
            let toolchain = Arc::new(ScriptedToolchain::new(catalog.clone()));
            let clock: Arc<dyn Clock> = Arc::new(FrozenClock);
            Ok(EngineRunner {
                compiler: toolchain.clone(),
                simulator: toolchain,
                catalog,
                prompts,
                cfg,
                gateway_for: Box::new(move |_, trial| {
                    Gateway::new(
                        Arc::new(ScriptedTransport::new(playlist.script_for(trial as usize))),
                        RetryPolicy::immediate(0),
                    )
                }),
                clock,
                events,
            })
        }
        Backend::Live => {
            let provider = settings
                .effective_provider()
                .ok_or(SetupError::MissingSection("provider"))?;
            let toolchain = settings
                .toolchain
                .as_ref()
                .ok_or(SetupError::MissingSection("toolchain"))?;
            let compiler = ScaffoldCompiler::new(toolchain, catalog.clone())?;
            let mut sim_cfg = settings.simulator.clone().unwrap_or_default();
            sim_cfg.default_seed = cfg.seed;
            let simulator = CommandSimulator::new(sim_cfg)?;
            let policy = RetryPolicy::from_config(&provider);
            let gateway = Gateway::new(Arc::new(HttpTransport::from_env(provider)?), policy);
            Ok(EngineRunner {
                compiler: Arc::new(compiler),
                simulator: Arc::new(simulator),
                catalog,
                prompts,
                cfg,
                gateway_for: Box::new(move |_, _| gateway.clone()),
                clock: Arc::new(SystemClock::default()),
                events,
            })
        }
    }
}
