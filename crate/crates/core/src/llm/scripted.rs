//! Hermetic provider replaying canned replies per role.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::transport::{ChatTransport, FailureKind, TransportError};
use super::{AgentRole, ChatRequest};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScriptedReply {
    Text(String),
    Failure {
        error: FailureKind,
        #[serde(default)]
        status: Option<u16>,
        #[serde(default)]
        body: String,
    },
}

/// Replies consumed in order; the last one repeats once a list runs out.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoleScript {
    #[serde(default)]
    pub generator: Vec<ScriptedReply>,
    #[serde(default)]
    pub reviewer: Vec<ScriptedReply>,
    #[serde(default)]
    pub inspector: Vec<ScriptedReply>,
}

impl RoleScript {
    fn replies(&self, role: AgentRole) -> &[ScriptedReply] {
        match role {
            AgentRole::Generator => &self.generator,
            AgentRole::Reviewer => &self.reviewer,
            AgentRole::Inspector => &self.inspector,
        }
    }
}

/// Either one script for every trial or one per trial (cycled).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Playlist {
    Single(RoleScript),
    PerTrial(Vec<RoleScript>),
}

impl Playlist {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read playlist {}: {e}", path.display()))?;
        let playlist: Playlist = serde_json::from_str(&text)
            .map_err(|e| format!("invalid playlist {}: {e}", path.display()))?;
        if matches!(&playlist, Playlist::PerTrial(v) if v.is_empty()) {
            return Err(format!("playlist {} has no scripts", path.display()));
        }
        Ok(playlist)
    }

    pub fn script_for(&self, index: usize) -> RoleScript {
        match self {
            Playlist::Single(s) => s.clone(),
            Playlist::PerTrial(v) if v.is_empty() => RoleScript::default(),
            Playlist::PerTrial(v) => v[index % v.len()].clone(),
        }
    }
}

#[derive(Debug)]
pub struct ScriptedTransport {
    script: RoleScript,
    cursors: Mutex<BTreeMap<AgentRole, usize>>,
    log: Mutex<Vec<ChatRequest>>,
}

impl ScriptedTransport {
    pub fn new(script: RoleScript) -> Self {
        ScriptedTransport {
            script,
            cursors: Mutex::new(BTreeMap::new()),
            log: Mutex::new(Vec::new()),
        }
    }

    /// Every request received, failed attempts included.
    pub fn requests(&self) -> Vec<ChatRequest> {
        self.log.lock().unwrap_or_else(|p| p.into_inner()).clone()
    }

    pub fn attempts(&self, role: AgentRole) -> usize {
        self.cursors
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .get(&role)
            .copied()
            .unwrap_or(0)
    }
}

impl ChatTransport for ScriptedTransport {
    fn send(&self, request: &ChatRequest) -> Result<String, TransportError> {
        self.log
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .push(request.clone());
        let idx = {
            let mut cursors = self.cursors.lock().unwrap_or_else(|p| p.into_inner());
            let c = cursors.entry(request.role).or_insert(0);
            *c += 1;
            *c - 1
        };
        let replies = self.script.replies(request.role);
        let Some(reply) = replies.get(idx.min(replies.len().saturating_sub(1))) else {
            return Err(TransportError::new(
                FailureKind::Fatal,
                None,
                format!("no scripted replies for the {:?} role", request.role),
            ));
        };
        match reply {
            ScriptedReply::Text(t) => Ok(t.clone()),
            ScriptedReply::Failure {
                error,
                status,
                body,
            } => Err(TransportError::new(*error, *status, body.clone())),
        }
    }
}
