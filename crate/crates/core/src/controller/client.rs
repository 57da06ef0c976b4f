//! Clients for the environment protocol: over HTTP, or in-process against a
//! [`SessionManager`].

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

use crate::protocol::wire::{
    ActionsResponse, CreateEnvRequest, CreateEnvResponse, ErrorResponse, ObservationResponse, ResetRequest, StepRequest,
};
use crate::protocol::{Created, ProtocolError, SessionManager, StepResult};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ClientError {
    #[error("environment error {status} {code}: {message}")]
    Protocol { status: u16, code: String, message: String },
    #[error("transport: {0}")]
    Transport(String),
    #[error("no environment client for `{0}`")]
    NoRoute(String),
}

impl From<ProtocolError> for ClientError {
    fn from(e: ProtocolError) -> Self {
        ClientError::Protocol {
            status: e.http_status(),
            code: e.code().to_string(),
            message: e.to_string(),
        }
    }
}

pub trait EnvClient: Send + Sync {
    fn create(&self, env: &str, instruction_id: Option<&str>, seed: Option<u64>) -> Result<Created, ClientError>;
    fn step(&self, session_id: &str, action: &str) -> Result<StepResult, ClientError>;
    fn observation(&self, session_id: &str) -> Result<String, ClientError>;
    fn available_actions(&self, session_id: &str) -> Result<Vec<String>, ClientError>;
    fn reset(&self, session_id: &str) -> Result<String, ClientError>;
    /// Releases a finished session where the transport allows it; the HTTP
    /// protocol has no close call, so remote sessions expire by idle timeout.
    fn close(&self, _session_id: &str) {}
}

/// Calls a [`SessionManager`] directly.
#[derive(Clone)]
pub struct LocalEnvClient {
    mgr: Arc<SessionManager>,
}

impl LocalEnvClient {
    pub fn new(mgr: Arc<SessionManager>) -> Self {
        Self { mgr }
    }

    pub fn manager(&self) -> &Arc<SessionManager> {
        &self.mgr
    }
}

impl EnvClient for LocalEnvClient {
    fn create(&self, env: &str, instruction_id: Option<&str>, seed: Option<u64>) -> Result<Created, ClientError> {
        Ok(self.mgr.create(env, instruction_id, seed)?)
    }

    fn step(&self, session_id: &str, action: &str) -> Result<StepResult, ClientError> {
        Ok(self.mgr.step(session_id, action)?)
    }

    fn observation(&self, session_id: &str) -> Result<String, ClientError> {
        Ok(self.mgr.observation(session_id)?)
    }

    fn available_actions(&self, session_id: &str) -> Result<Vec<String>, ClientError> {
        Ok(self.mgr.available_actions(session_id)?)
    }

    fn reset(&self, session_id: &str) -> Result<String, ClientError> {
        Ok(self.mgr.reset(session_id)?)
    }

    fn close(&self, session_id: &str) {
        self.mgr.close(session_id);
    }
}

/// Blocking HTTP client for one environment server.
#[derive(Clone)]
pub struct HttpEnvClient {
    base: String,
    http: reqwest::blocking::Client,
}

impl HttpEnvClient {
    pub fn new(base_url: &str) -> Result<Self, ClientError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(30))
            .build()
            .map_err(|e| ClientError::Transport(e.to_string()))?;
        Ok(Self {
            base: base_url.trim_end_matches('/').to_string(),
            http,
        })
    }

    fn decode<T: DeserializeOwned>(resp: reqwest::blocking::Response) -> Result<T, ClientError> {
        let status = resp.status();
        let bytes = resp.bytes().map_err(|e| ClientError::Transport(e.to_string()))?;
        if status.is_success() {
            return serde_json::from_slice(&bytes)
                .map_err(|e| ClientError::Transport(format!("bad response body: {e}")));
        }
        match serde_json::from_slice::<ErrorResponse>(&bytes) {
            Ok(err) => Err(ClientError::Protocol {
                status: status.as_u16(),
                code: err.error.code,
                message: err.error.message,
            }),
            Err(_) => Err(ClientError::Transport(format!(
                "HTTP {status}: {}",
                String::from_utf8_lossy(&bytes)
            ))),
        }
    }

    fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T, ClientError> {
        let resp = self
            .http
            .post(format!("{}{path}", self.base))
            .json(body)
            .send()
            .map_err(|e| ClientError::Transport(e.to_string()))?;
        Self::decode(resp)
    }

    fn get<T: DeserializeOwned>(&self, path: &str, session_id: &str) -> Result<T, ClientError> {
        let resp = self
            .http
            .get(format!("{}{path}", self.base))
            .query(&[("session_id", session_id)])
            .send()
            .map_err(|e| ClientError::Transport(e.to_string()))?;
        Self::decode(resp)
    }
}

impl EnvClient for HttpEnvClient {
    fn create(&self, env: &str, instruction_id: Option<&str>, seed: Option<u64>) -> Result<Created, ClientError> {
        let r: CreateEnvResponse = self.post(
            "/createEnv",
            &CreateEnvRequest {
                env: env.to_string(),
                instruction_id: instruction_id.map(str::to_string),
                seed,
            },
        )?;
        Ok(Created {
            session_id: r.session_id,
            system_prompt: r.system_prompt,
            observation: r.observation,
        })
    }

    fn step(&self, session_id: &str, action: &str) -> Result<StepResult, ClientError> {
        self.post(
            "/step",
            &StepRequest {
                session_id: session_id.to_string(),
                action: action.to_string(),
            },
        )
    }

    fn observation(&self, session_id: &str) -> Result<String, ClientError> {
        let r: ObservationResponse = self.get("/observation", session_id)?;
        Ok(r.observation)
    }

    fn available_actions(&self, session_id: &str) -> Result<Vec<String>, ClientError> {
        let r: ActionsResponse = self.get("/available_actions", session_id)?;
        Ok(r.actions)
    }

    fn reset(&self, session_id: &str) -> Result<String, ClientError> {
        let r: ObservationResponse = self.post(
            "/reset",
            &ResetRequest {
                session_id: session_id.to_string(),
            },
        )?;
        Ok(r.observation)
    }
}

/// Routes each environment name to its own client and remembers which client
/// owns each session.
#[derive(Default)]
pub struct MultiEnvClient {
    by_env: BTreeMap<String, Arc<dyn EnvClient>>,
    sessions: Mutex<HashMap<String, Arc<dyn EnvClient>>>,
}

impl MultiEnvClient {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn route(mut self, env: &str, client: Arc<dyn EnvClient>) -> Self {
        self.by_env.insert(env.to_string(), client);
        self
    }

    fn owner(&self, session_id: &str) -> Result<Arc<dyn EnvClient>, ClientError> {
        self.sessions
            .lock()
            .expect("session routes poisoned")
            .get(session_id)
            .cloned()
            .ok_or_else(|| ClientError::NoRoute(session_id.to_string()))
    }
}

impl EnvClient for MultiEnvClient {
    fn create(&self, env: &str, instruction_id: Option<&str>, seed: Option<u64>) -> Result<Created, ClientError> {
        let c = self
            .by_env
            .get(env)
            .cloned()
            .ok_or_else(|| ClientError::NoRoute(env.to_string()))?;
        let created = c.create(env, instruction_id, seed)?;
        self.sessions
            .lock()
            .expect("session routes poisoned")
            .insert(created.session_id.clone(), c);
        Ok(created)
    }

    fn step(&self, session_id: &str, action: &str) -> Result<StepResult, ClientError> {
        self.owner(session_id)?.step(session_id, action)
    }

    fn observation(&self, session_id: &str) -> Result<String, ClientError> {
        self.owner(session_id)?.observation(session_id)
    }

    fn available_actions(&self, session_id: &str) -> Result<Vec<String>, ClientError> {
        self.owner(session_id)?.available_actions(session_id)
    }

    fn reset(&self, session_id: &str) -> Result<String, ClientError> {
        self.owner(session_id)?.reset(session_id)
    }

    fn close(&self, session_id: &str) {
        let owner = self
            .sessions
            .lock()
            .expect("session routes poisoned")
            .remove(session_id);
        if let Some(c) = owner {
            c.close(session_id);
        }
    }
}
