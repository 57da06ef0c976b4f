use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, Instant};

use super::{Created, EnvRegistry, EnvSpec, Outcome, ProtocolError, StepResult, World};
use crate::dataset::InstructionSet;
use crate::trajectory::{Instruction, Split};

pub const DEFAULT_IDLE_TIMEOUT: Duration = Duration::from_secs(600);

struct Session {
    spec: EnvSpec,
    instruction: Instruction,
    world: Box<dyn World>,
    first_observation: String,
    last_observation: String,
    round: u32,
    done: bool,
    reward: f64,
    last_touch: Instant,
}

impl Session {
    fn restart(&mut self) -> Result<(), ProtocolError> {
        let inst = (self.spec.factory)(self.instruction.seed).map_err(ProtocolError::Internal)?;
        self.world = inst.world;
        self.first_observation = inst.instruction_text;
        self.last_observation = self.first_observation.clone();
        self.round = 0;
        self.done = false;
        self.reward = 0.0;
        Ok(())
    }
}

/// Read-only view of a session, for tests and diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionSnapshot {
    pub env_name: String,
    pub instruction_id: String,
    pub round: u32,
    pub done: bool,
    pub final_reward: Option<f64>,
    pub fingerprint: String,
}

/// Owns every live session. Requests on one session serialize through its
/// mutex; requests on different sessions run in parallel.
pub struct SessionManager {
    registry: EnvRegistry,
    instructions: InstructionSet,
    sessions: RwLock<HashMap<String, Arc<Mutex<Session>>>>,
    next_id: AtomicU64,
    idle_timeout: Duration,
}

impl SessionManager {
    pub fn new(registry: EnvRegistry, instructions: InstructionSet) -> Self {
        Self {
            registry,
            instructions,
            sessions: RwLock::new(HashMap::new()),
            next_id: AtomicU64::new(1),
            idle_timeout: DEFAULT_IDLE_TIMEOUT,
        }
    }

    pub fn with_idle_timeout(mut self, timeout: Duration) -> Self {
        self.idle_timeout = timeout;
        self
    }

    pub fn registry(&self) -> &EnvRegistry {
        &self.registry
    }

    pub fn instructions(&self) -> &InstructionSet {
        &self.instructions
    }

    pub fn session_count(&self) -> usize {
        self.sessions.read().expect("session table poisoned").len()
    }

    pub fn create(
        &self,
        env_name: &str,
        instruction_id: Option<&str>,
        seed: Option<u64>,
    ) -> Result<Created, ProtocolError> {
        let spec = self
            .registry
            .get(env_name)
            .ok_or_else(|| ProtocolError::UnknownEnv(env_name.to_string()))?
            .clone();
        let instruction = match (instruction_id, seed) {
            (Some(id), _) => {
                let ins = self
                    .instructions
                    .get(id)
                    .filter(|i| i.env_name == env_name)
                    .ok_or_else(|| ProtocolError::UnknownInstruction(id.to_string()))?;
                ins.clone()
            }
            (None, Some(seed)) => Instruction {
                env_name: env_name.to_string(),
                instruction_id: format!("{env_name}-seed-{seed}"),
                text: String::new(),
                seed,
                split: Split::Evolve,
            },
            (None, None) => {
                return Err(ProtocolError::BadRequest(
                    "one of instruction_id or seed is required".into(),
                ))
            }
        };
        let inst = (spec.factory)(instruction.seed).map_err(ProtocolError::Internal)?;
        let n = self.next_id.fetch_add(1, Ordering::Relaxed);
        let session_id = format!("{env_name}-{n:08}");
        let created = Created {
            session_id: session_id.clone(),
            system_prompt: spec.descriptor.system_prompt.clone(),
            observation: inst.instruction_text.clone(),
        };
        let session = Session {
            spec,
            instruction,
            world: inst.world,
            first_observation: inst.instruction_text.clone(),
            last_observation: inst.instruction_text,
            round: 0,
            done: false,
            reward: 0.0,
            last_touch: Instant::now(),
        };
        self.sessions
            .write()
            .expect("session table poisoned")
            .insert(session_id, Arc::new(Mutex::new(session)));
        Ok(created)
    }

    fn with_session<T>(
        &self,
        session_id: &str,
        f: impl FnOnce(&mut Session) -> Result<T, ProtocolError>,
    ) -> Result<T, ProtocolError> {
        let handle = self
            .sessions
            .read()
            .expect("session table poisoned")
            .get(session_id)
            .cloned()
            .ok_or_else(|| ProtocolError::UnknownSession(session_id.to_string()))?;
        let mut s = handle
            .lock()
            .map_err(|_| ProtocolError::Internal("session lock poisoned".into()))?;
        s.last_touch = Instant::now();
        f(&mut s)
    }

    pub fn step(&self, session_id: &str, action: &str) -> Result<StepResult, ProtocolError> {
        self.with_session(session_id, |s| {
            if s.done {
                return Err(ProtocolError::SessionDone(session_id.to_string()));
            }
            let t = s.world.apply(action);
            s.round += 1;
            match t.outcome {
                Some(Outcome::Success) => {
                    s.done = true;
                    s.reward = 1.0;
                }
                Some(Outcome::Failure) => {
                    s.done = true;
                    s.reward = 0.0;
                }
                None if s.round >= s.spec.descriptor.max_rounds => {
                    s.done = true;
                    s.reward = 0.0;
                }
                None => {}
            }
            s.last_observation = t.observation.clone();
            let available_actions = if s.done {
                Vec::new()
            } else {
                s.world.available_actions()
            };
            Ok(StepResult {
                observation: t.observation,
                step_reward: t.step_reward,
                trajectory_reward_so_far: s.reward,
                done: s.done,
                available_actions,
            })
        })
    }

    pub fn observation(&self, session_id: &str) -> Result<String, ProtocolError> {
        self.with_session(session_id, |s| Ok(s.last_observation.clone()))
    }

    pub fn available_actions(&self, session_id: &str) -> Result<Vec<String>, ProtocolError> {
        self.with_session(session_id, |s| {
            Ok(if s.done {
                Vec::new()
            } else {
                s.world.available_actions()
            })
        })
    }

    pub fn reset(&self, session_id: &str) -> Result<String, ProtocolError> {
        self.with_session(session_id, |s| {
            s.restart()?;
            Ok(s.first_observation.clone())
        })
    }

    pub fn snapshot(&self, session_id: &str) -> Result<SessionSnapshot, ProtocolError> {
        self.with_session(session_id, |s| {
            Ok(SessionSnapshot {
                env_name: s.spec.descriptor.env_name.clone(),
                instruction_id: s.instruction.instruction_id.clone(),
                round: s.round,
                done: s.done,
                final_reward: s.done.then_some(s.reward),
                fingerprint: s.world.fingerprint(),
            })
        })
    }

    /// Drops a session. Unknown ids are ignored.
    pub fn close(&self, session_id: &str) {
        self.sessions
            .write()
            .expect("session table poisoned")
            .remove(session_id);
    }

    /// Removes sessions idle for longer than the timeout; returns how many.
    pub fn evict_idle(&self) -> usize {
        let now = Instant::now();
        let mut table = self.sessions.write().expect("session table poisoned");
        let before = table.len();
        table.retain(|_, s| match s.try_lock() {
            Ok(s) => now.duration_since(s.last_touch) < self.idle_timeout,
            // busy sessions are not idle
            Err(_) => true,
        });
        before - table.len()
    }

    pub fn idle_timeout(&self) -> Duration {
        self.idle_timeout
    }
}
