//! Agent policies: ReAct parsing, the trainable log-linear policy, and a
//! chat-completion client for remote models.

pub mod features;
pub mod loglinear;
pub mod react;
pub mod remote;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trajectory::Step;

pub use loglinear::{LogLinearPolicy, PolicySnapshot};
pub use react::{parse_react, render_react, ParseError, ReActOutput};

/// Everything an agent sees before choosing its next step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyContext {
    pub env_name: String,
    pub instruction_id: String,
    pub system_prompt: String,
    /// The instruction rendering, i.e. the first observation.
    pub instruction: String,
    pub history: Vec<Step>,
    pub current_observation: String,
    pub available_actions: Vec<String>,
}

/// Raw agent output plus, for policies that expose it, the temperature-1
/// log-probability of the chosen action.
#[derive(Debug, Clone, PartialEq)]
pub struct Emission {
    pub text: String,
    pub log_prob: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PolicyError {
    #[error("no candidate actions for environment `{0}`")]
    NoActions(String),
    #[error("action `{0}` is not among the available actions")]
    ActionNotAvailable(String),
    #[error("invalid temperature {0}")]
    Temperature(f64),
    #[error("remote policy: {0}")]
    Remote(String),
    #[error("oracle: {0}")]
    Oracle(String),
}

pub trait Policy: Send + Sync {
    fn emit(&self, ctx: &PolicyContext, temperature: f64, rng: &mut ChaCha8Rng) -> Result<Emission, PolicyError>;
}
