//! Chat-completion access and the three agent roles.
//!
//! The Generator, Reviewer and Inspector are separate stateless calls. Each
//! call is a [`ChatRequest`]: the role (so mocks and logs can tell them
//! apart) plus the rendered messages.

mod parse;
mod prompts;
mod scripted;
mod transport;

use serde::{Deserialize, Serialize};

pub use parse::{
    parse_code_response, parse_inspector_verdict, parse_revision_plan, MalformedResponse,
};
pub use prompts::{
    enforce_budget, fill, render_feedback, render_generator_prompt, render_inspector_prompt,
    render_plan, render_reviewer_prompt, total_chars, with_reminder, PromptBudget, PromptSet,
    ReviewContext, TemplateError, DEFAULT_CONTEXT_BUDGET, DEFAULT_TRACE_WINDOW, MIN_CONTEXT_BUDGET,
    TEMPLATE_VERSION,
};
pub use scripted::{Playlist, RoleScript, ScriptedReply, ScriptedTransport};
pub use transport::{
    ChatTransport, FailureKind, Gateway, HttpTransport, ProviderError, ProviderErrorKind,
    RateLimiter, RetryPolicy, TransportError,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentRole {
    Generator,
    Reviewer,
    Inspector,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub role: AgentRole,
    pub messages: Vec<ChatMessage>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum Sampling {
    /// Send no sampling parameters; the provider's defaults apply.
    #[default]
    Default,
    Explicit {
        temperature: f64,
        top_p: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub endpoint: String,
    pub model_id: String,
    pub api_key_env: String,
    #[serde(default = "default_request_timeout")]
    pub request_timeout_s: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default)]
    pub sampling: Sampling,
    #[serde(default = "default_backoff_base")]
    pub backoff_base_ms: u64,
    #[serde(default = "default_backoff_max")]
    pub backoff_max_ms: u64,
    /// Shared request budget per minute across all workers.
    #[serde(default)]
    pub requests_per_minute: Option<u32>,
}

fn default_request_timeout() -> u64 {
    120
}
fn default_max_retries() -> u32 {
    3
}
fn default_backoff_base() -> u64 {
    500
}
fn default_backoff_max() -> u64 {
    30_000
}

impl ProviderConfig {
    pub fn validate(&self) -> Result<(), String> {
        let parsed = url_scheme_ok(&self.endpoint);
        if !parsed {
            return Err(format!(
                "endpoint {:?} is not an http(s) URL",
                self.endpoint
            ));
        }
        if self.model_id.trim().is_empty() {
            return Err("model_id is empty".into());
        }
        if self.api_key_env.trim().is_empty() {
            return Err("api_key_env is empty".into());
        }
        if self.request_timeout_s == 0 {
            return Err("request_timeout_s must be positive".into());
        }
        Ok(())
    }
}

fn url_scheme_ok(endpoint: &str) -> bool {
    let rest = endpoint
        .strip_prefix("https://")
        .or_else(|| endpoint.strip_prefix("http://"));
    matches!(rest, Some(host) if !host.is_empty() && !host.starts_with('/'))
}

/// The Inspector's decision about a suspected non-progress loop.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoopVerdict {
    pub is_loop: bool,
    pub matched_prior_iteration: Option<u32>,
    pub cause_summary: String,
}

impl LoopVerdict {
    pub fn no_loop(cause_summary: impl Into<String>) -> Self {
        LoopVerdict {
            is_loop: false,
            matched_prior_iteration: None,
            cause_summary: cause_summary.into(),
        }
    }
}
