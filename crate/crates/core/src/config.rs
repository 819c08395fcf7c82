//! Run configuration: one TOML file, validated on load.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compile::CompilerConfig;
use crate::llm::{
    PromptBudget, ProviderConfig, Sampling, DEFAULT_CONTEXT_BUDGET, DEFAULT_TRACE_WINDOW,
    MIN_CONTEXT_BUDGET,
};
use crate::sim::SimulatorConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Settings for one experiment: iteration cap, trials and timeouts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Revisions allowed after the initial candidate; 0 is zero-shot.
    #[serde(default = "d_max_iterations")]
    pub max_iterations: u32,
    #[serde(default = "d_trials")]
    pub trials: u32,
    #[serde(default = "d_k_values")]
    pub k_values: Vec<u32>,
    /// Tag stored with every result, e.g. `openai/gpt-4o`.
    pub model_id: String,
    #[serde(default)]
    pub sampling: Sampling,
    #[serde(default = "d_compile_timeout")]
    pub compile_timeout_s: u64,
    #[serde(default = "d_sim_timeout")]
    pub sim_timeout_s: u64,
    #[serde(default = "d_llm_timeout")]
    pub llm_timeout_s: u64,
    #[serde(default = "d_parallelism")]
    pub parallelism: usize,
    #[serde(default = "d_true")]
    pub escape_enabled: bool,
    #[serde(default = "d_window")]
    pub trace_window: usize,
    /// Characters per prompt, summed over messages.
    #[serde(default = "d_budget")]
    pub context_budget: usize,
    /// Stimulus seed for cases whose manifest sets none.
    #[serde(default)]
    pub seed: u64,
    /// Abort a bench after this many provider failures in a row.
    #[serde(default = "d_abort_after")]
    pub abort_after_provider_errors: u32,
}

fn d_max_iterations() -> u32 {
    10
}
fn d_trials() -> u32 {
    10
}
fn d_k_values() -> Vec<u32> {
    vec![1, 5, 10]
}
fn d_compile_timeout() -> u64 {
    300
}
fn d_sim_timeout() -> u64 {
    60
}
fn d_llm_timeout() -> u64 {
    120
}
fn d_parallelism() -> usize {
    1
}
fn d_true() -> bool {
    true
}
fn d_window() -> usize {
    DEFAULT_TRACE_WINDOW
}
fn d_budget() -> usize {
    DEFAULT_CONTEXT_BUDGET
}
fn d_abort_after() -> u32 {
    5
}

impl RunConfig {
    pub fn new(model_id: impl Into<String>) -> Self {
        RunConfig {
            max_iterations: d_max_iterations(),
            trials: d_trials(),
            k_values: d_k_values(),
            model_id: model_id.into(),
            sampling: Sampling::Default,
            compile_timeout_s: d_compile_timeout(),
            sim_timeout_s: d_sim_timeout(),
            llm_timeout_s: d_llm_timeout(),
            parallelism: d_parallelism(),
            escape_enabled: true,
            trace_window: d_window(),
            context_budget: d_budget(),
            seed: 0,
            abort_after_provider_errors: d_abort_after(),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if self.k_values.is_empty() {
            return bad("k_values is empty".into());
        }
        if let Some(k) = self.k_values.iter().find(|&&k| k == 0 || k > self.trials) {
            return bad(format!("k = {k} is outside 1..={}", self.trials));
        }
        if self.compile_timeout_s == 0 || self.sim_timeout_s == 0 || self.llm_timeout_s == 0 {
            return bad("timeouts must be positive".into());
        }
        if self.parallelism == 0 {
            return bad("parallelism must be at least 1".into());
        }
        if self.context_budget < MIN_CONTEXT_BUDGET {
            return bad(format!(
                "context_budget must be at least {MIN_CONTEXT_BUDGET}"
            ));
        }
        if self.model_id.trim().is_empty() {
            return bad("model_id is empty".into());
        }
        if let Sampling::Explicit { temperature, top_p } = self.sampling {
            if !(0.0..=2.0).contains(&temperature) || !(0.0..=1.0).contains(&top_p) || top_p == 0.0
            {
                return bad("sampling temperature must be in [0, 2] and top_p in (0, 1]".into());
            }
        }
        Ok(())
    }

    pub fn compile_timeout(&self) -> Duration {
        Duration::from_secs(self.compile_timeout_s)
    }

    pub fn sim_timeout(&self) -> Duration {
        Duration::from_secs(self.sim_timeout_s)
    }

    pub fn prompt_budget(&self) -> PromptBudget {
        PromptBudget {
            max_chars: self.context_budget,
            window: self.trace_window,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    /// Error catalog replacing the built-in one.
    #[serde(default)]
    pub catalog: Option<PathBuf>,
    /// Directory of prompt templates replacing the built-in ones.
    #[serde(default)]
    pub templates: Option<PathBuf>,
}

/// The whole config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    pub run: RunConfig,
    #[serde(default)]
    pub provider: Option<ProviderConfig>,
    #[serde(default)]
    pub toolchain: Option<CompilerConfig>,
    #[serde(default)]
    pub simulator: Option<SimulatorConfig>,
    #[serde(default)]
    pub paths: PathsConfig,
}

impl Settings {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let s: Settings = toml::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    /// Loads a file; relative paths inside it resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut s = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(t) = &mut s.toolchain {
            fix(&mut t.scaffold);
            if let Some(w) = &mut t.work_root {
                fix(w);
            }
        }
        if let Some(w) = s.simulator.as_mut().and_then(|sim| sim.work_root.as_mut()) {
            fix(w);
        }
        if let Some(c) = &mut s.paths.catalog {
            fix(c);
        }
        if let Some(t) = &mut s.paths.templates {
            fix(t);
        }
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.run.validate()?;
        if let Some(p) = &self.provider {
            p.validate().map_err(ConfigError::Invalid)?;
            if p.sampling != Sampling::Default && p.sampling != self.run.sampling {
                return Err(ConfigError::Invalid(
                    "set sampling under [run], not [provider]".into(),
                ));
            }
        }
        Ok(())
    }

    /// Provider settings with the run's sampling and LLM timeout applied.
    pub fn effective_provider(&self) -> Option<ProviderConfig> {
        self.provider.clone().map(|mut p| {
            p.sampling = self.run.sampling;
            p.request_timeout_s = self.run.llm_timeout_s;
            p
        })
    }
}
