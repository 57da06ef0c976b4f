//! Chat-completion client standing in for a hosted LLM agent.

use std::time::Duration;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::react::render_react;
use super::{Emission, Policy, PolicyContext, PolicyError, ReActOutput};

pub const API_KEY_ENV: &str = "EVOLGYM_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RemoteConfig {
    /// Base URL; requests go to `{base_url}/chat/completions`.
    pub base_url: String,
    pub model: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff")]
    pub backoff_ms: u64,
}

fn default_timeout() -> u64 {
    60
}
fn default_retries() -> u32 {
    3
}
fn default_backoff() -> u64 {
    500
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    fn new(role: &str, content: &str) -> Self {
        Self {
            role: role.to_string(),
            content: content.to_string(),
        }
    }
}

/// System prompt, the instruction as the first user turn, then one
/// assistant/user pair per past step. The final user turn is the current
/// observation, so `k` past steps give `1 + 2k + 1` messages.
pub fn render_messages(ctx: &PolicyContext) -> Vec<ChatMessage> {
    let mut m = vec![
        ChatMessage::new("system", &ctx.system_prompt),
        ChatMessage::new("user", &ctx.instruction),
    ];
    for s in &ctx.history {
        let said = render_react(&ReActOutput {
            thought: s.thought.clone(),
            action: s.action.clone(),
        });
        m.push(ChatMessage::new("assistant", &said));
        m.push(ChatMessage::new("user", &s.observation));
    }
    m
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
}

enum Failure {
    Transient(String),
    Fatal(String),
}

pub struct RemotePolicy {
    config: RemoteConfig,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl RemotePolicy {
    pub fn new(config: RemoteConfig) -> Result<Self, PolicyError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| PolicyError::Remote(e.to_string()))?;
        Ok(Self {
            api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
            config,
            client,
        })
    }

    fn url(&self) -> String {
        format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'))
    }

    fn attempt(&self, body: &ChatRequest<'_>) -> Result<String, Failure> {
        let mut req = self.client.post(self.url()).json(body);
        if let Some(k) = &self.api_key {
            req = req.bearer_auth(k);
        }
        let resp = req.send().map_err(|e| Failure::Transient(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| Failure::Transient(e.to_string()))?;
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(Failure::Transient(format!("HTTP {status}")));
        }
        if !status.is_success() {
            return Err(Failure::Fatal(format!("HTTP {status}: {text}")));
        }
        let v: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| Failure::Transient(format!("response is not JSON: {e}")))?;
        v.pointer("/choices/0/message/content")
            .and_then(|c| c.as_str())
            .map(str::to_string)
            .ok_or_else(|| Failure::Transient("response has no choices[0].message.content".into()))
    }

    /// Sends the rendered context, retrying transient failures with
    /// exponential backoff.
    pub fn complete(&self, ctx: &PolicyContext, temperature: f64) -> Result<String, PolicyError> {
        let messages = render_messages(ctx);
        let body = ChatRequest {
            model: &self.config.model,
            messages: &messages,
            temperature,
        };
        let mut delay = Duration::from_millis(self.config.backoff_ms);
        let mut last = String::new();
        for attempt in 0..=self.config.max_retries {
            if attempt > 0 {
                std::thread::sleep(delay);
                delay *= 2;
            }
            match self.attempt(&body) {
                Ok(text) => return Ok(text),
                Err(Failure::Fatal(e)) => return Err(PolicyError::Remote(e)),
                Err(Failure::Transient(e)) => {
                    tracing::warn!(attempt, error = %e, "chat completion failed");
                    last = e;
                }
            }
        }
        Err(PolicyError::Remote(format!(
            "gave up after {} retries: {last}",
            self.config.max_retries
        )))
    }
}

impl Policy for RemotePolicy {
    fn emit(&self, ctx: &PolicyContext, temperature: f64, _rng: &mut ChaCha8Rng) -> Result<Emission, PolicyError> {
        Ok(Emission {
            text: self.complete(ctx, temperature)?,
            log_prob: None,
        })
    }
}
