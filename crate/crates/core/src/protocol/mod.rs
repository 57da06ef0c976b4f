//! The uniform environment interface and its HTTP wire protocol.
//!
//! Every environment implements [`World`]; a [`SessionManager`] owns live
//! sessions and implements the five protocol operations; [`server`] exposes
//! them over HTTP with JSON bodies.

pub mod server;
mod session;
pub mod wire;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use session::{SessionManager, SessionSnapshot, DEFAULT_IDLE_TIMEOUT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewardKind {
    Binary,
    Dense,
}

/// Static facts about one environment type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvDescriptor {
    pub env_name: String,
    pub max_rounds: u32,
    pub reward_kind: RewardKind,
    pub system_prompt: String,
}

/// How an episode ended from the environment's point of view.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    Failure,
}

/// Result of applying one action to a [`World`].
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub observation: String,
    pub step_reward: f64,
    /// `Some` once the world reached a terminal state on its own.
    pub outcome: Option<Outcome>,
}

/// The hidden, per-instance state of an environment. Never exposed on the wire.
pub trait World: Send + fmt::Debug {
    /// Applies one agent action. Unrecognised or illegal actions return an
    /// in-band rejection observation rather than an error.
    fn apply(&mut self, action: &str) -> Transition;

    /// Candidate actions at the current state, lexicographically sorted. Empty
    /// when the action space is open-ended.
    fn available_actions(&self) -> Vec<String>;

    /// A stable rendering of the full state, used to check that reads are pure.
    fn fingerprint(&self) -> String {
        format!("{self:?}")
    }
}

/// A freshly generated instance: the rendered instruction (also the first
/// observation) and its world.
pub struct Instance {
    pub instruction_text: String,
    pub world: Box<dyn World>,
}

pub type InstanceFactory = dyn Fn(u64) -> Result<Instance, String> + Send + Sync;

/// One registered environment type: its descriptor and a seeded factory.
#[derive(Clone)]
pub struct EnvSpec {
    pub descriptor: EnvDescriptor,
    pub factory: Arc<InstanceFactory>,
}

impl fmt::Debug for EnvSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EnvSpec")
            .field("descriptor", &self.descriptor)
            .finish_non_exhaustive()
    }
}

#[derive(Debug, Clone, Default)]
pub struct EnvRegistry {
    specs: BTreeMap<String, EnvSpec>,
}

impl EnvRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, spec: EnvSpec) {
        self.specs.insert(spec.descriptor.env_name.clone(), spec);
    }

    pub fn get(&self, name: &str) -> Option<&EnvSpec> {
        self.specs.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.specs.keys().map(String::as_str)
    }

    pub fn descriptors(&self) -> impl Iterator<Item = &EnvDescriptor> {
        self.specs.values().map(|s| &s.descriptor)
    }

    /// A registry holding only the named environment.
    pub fn only(&self, name: &str) -> Option<Self> {
        let spec = self.specs.get(name)?.clone();
        let mut r = Self::new();
        r.register(spec);
        Some(r)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Created {
    pub session_id: String,
    pub system_prompt: String,
    pub observation: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    pub observation: String,
    pub step_reward: f64,
    #[serde(rename = "reward")]
    pub trajectory_reward_so_far: f64,
    pub done: bool,
    pub available_actions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProtocolError {
    #[error("unknown environment `{0}`")]
    UnknownEnv(String),
    #[error("unknown instruction `{0}`")]
    UnknownInstruction(String),
    #[error("unknown session `{0}`")]
    UnknownSession(String),
    #[error("session `{0}` is done")]
    SessionDone(String),
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl ProtocolError {
    pub fn code(&self) -> &'static str {
        match self {
            ProtocolError::UnknownEnv(_) => "unknown_env",
            ProtocolError::UnknownInstruction(_) => "unknown_instruction",
            ProtocolError::UnknownSession(_) => "unknown_session",
            ProtocolError::SessionDone(_) => "session_done",
            ProtocolError::BadRequest(_) => "bad_request",
            ProtocolError::Internal(_) => "internal",
        }
    }

    pub fn http_status(&self) -> u16 {
        match self {
            ProtocolError::UnknownEnv(_) | ProtocolError::UnknownInstruction(_) | ProtocolError::UnknownSession(_) => {
                404
            }
            ProtocolError::SessionDone(_) => 409,
            ProtocolError::BadRequest(_) => 400,
            ProtocolError::Internal(_) => 500,
        }
    }
}
