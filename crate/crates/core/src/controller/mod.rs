//! Client-side orchestration: rollouts, exploration, expert collection,
//! evaluation and trajectory replay.

pub mod client;
pub mod oracle;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dataset::TrajectoryDataset;
use crate::envs;
use crate::policy::{parse_react, Policy, PolicyContext, PolicyError};
use crate::trajectory::{binarize_reward, DoneReason, Instruction, Provenance, Step, Trajectory};

pub use client::{ClientError, EnvClient, HttpEnvClient, LocalEnvClient, MultiEnvClient};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RolloutConfig {
    pub temperature: f64,
    /// Samples per instruction (K).
    pub samples: u32,
    pub concurrency: usize,
    pub seed: u64,
    /// Stop earlier than the environment's own round limit.
    #[serde(default)]
    pub max_rounds: Option<u32>,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        Self {
            temperature: 0.7,
            samples: 1,
            concurrency: 8,
            seed: 0,
            max_rounds: None,
        }
    }
}

impl RolloutConfig {
    pub fn greedy(&self) -> Self {
        Self {
            temperature: 0.0,
            samples: 1,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RolloutError {
    #[error("environment: {0}")]
    Env(#[from] ClientError),
    #[error("policy: {0}")]
    Policy(#[from] PolicyError),
    #[error("invalid rollout config: {0}")]
    Config(String),
}

/// Per-rollout random stream keyed by `(seed, instruction_id, sample)`, so
/// results never depend on scheduling.
pub fn rollout_rng(seed: u64, instruction_id: &str, sample: u32) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(instruction_id.as_bytes());
    h.update([0]);
    h.update(sample.to_le_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

/// Runs one episode: create a session, then act and step until done.
pub fn rollout(
    policy: &dyn Policy,
    client: &dyn EnvClient,
    instruction: &Instruction,
    temperature: f64,
    max_rounds: Option<u32>,
    rng: &mut ChaCha8Rng,
    provenance: Provenance,
) -> Result<Trajectory, RolloutError> {
    let created = client.create(&instruction.env_name, Some(&instruction.instruction_id), None)?;
    let sid = created.session_id.clone();
    let result = drive(
        policy,
        client,
        instruction,
        created,
        temperature,
        max_rounds,
        rng,
        provenance,
    );
    client.close(&sid);
    result
}

#[allow(clippy::too_many_arguments)]
fn drive(
    policy: &dyn Policy,
    client: &dyn EnvClient,
    instruction: &Instruction,
    created: crate::protocol::Created,
    temperature: f64,
    max_rounds: Option<u32>,
    rng: &mut ChaCha8Rng,
    provenance: Provenance,
) -> Result<Trajectory, RolloutError> {
    let env_limit = envs::max_rounds(&instruction.env_name);
    let limit = match (max_rounds, env_limit) {
        (Some(a), Some(b)) => a.min(b),
        (Some(a), None) | (None, Some(a)) => a,
        (None, None) => u32::MAX,
    };
    let mut ctx = PolicyContext {
        env_name: instruction.env_name.clone(),
        instruction_id: instruction.instruction_id.clone(),
        system_prompt: created.system_prompt,
        instruction: created.observation.clone(),
        history: Vec::new(),
        current_observation: created.observation,
        available_actions: client.available_actions(&created.session_id)?,
    };
    let mut steps: Vec<Step> = Vec::new();
    let (reward, done_reason) = loop {
        let emission = policy.emit(&ctx, temperature, rng)?;
        let out = match parse_react(&emission.text) {
            Ok(out) => out,
            Err(_) => {
                steps.push(Step {
                    thought: String::new(),
                    action: emission.text,
                    observation: String::new(),
                });
                break (0.0, DoneReason::ParseError);
            }
        };
        let res = client.step(&created.session_id, &out.action)?;
        let step = Step {
            thought: out.thought,
            action: out.action,
            observation: res.observation.clone(),
        };
        steps.push(step.clone());
        let rounds = steps.len() as u32;
        if res.done {
            let r = res.trajectory_reward_so_far;
            let reason = if binarize_reward(r).unwrap_or(0) == 1 {
                DoneReason::Success
            } else if Some(rounds) >= env_limit {
                DoneReason::MaxRounds
            } else {
                DoneReason::Failure
            };
            break (r, reason);
        }
        if rounds >= limit {
            break (0.0, DoneReason::MaxRounds);
        }
        ctx.history.push(step);
        ctx.current_observation = res.observation;
        ctx.available_actions = res.available_actions;
    };
    Ok(Trajectory {
        env_name: instruction.env_name.clone(),
        instruction_id: instruction.instruction_id.clone(),
        steps,
        reward,
        done_reason,
        provenance,
    })
}

/// Runs `f(0..n)` on at most `concurrency` threads; results come back in
/// index order whatever the completion order.
pub fn run_indexed<T: Send>(n: usize, concurrency: usize, f: impl Fn(usize) -> T + Sync) -> Vec<T> {
    let workers = concurrency.max(1).min(n.max(1));
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<T>>> = Mutex::new((0..n).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let r = f(i);
                slots.lock().expect("result slots poisoned")[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("result slots poisoned")
        .into_iter()
        .map(|x| x.expect("every job ran"))
        .collect()
}

/// A rollout that could not complete.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutFailure {
    pub instruction_id: String,
    pub sample: u32,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Collected {
    pub dataset: TrajectoryDataset,
    pub failures: Vec<RolloutFailure>,
}

fn sample_all(
    policy: &dyn Policy,
    client: &dyn EnvClient,
    instructions: &[Instruction],
    cfg: &RolloutConfig,
    provenance: Provenance,
) -> Result<(Vec<Trajectory>, Vec<RolloutFailure>), RolloutError> {
    if cfg.samples == 0 || cfg.concurrency == 0 {
        return Err(RolloutError::Config(
            "samples and concurrency must be at least 1".into(),
        ));
    }
    if !(cfg.temperature >= 0.0 && cfg.temperature.is_finite()) {
        return Err(RolloutError::Config(format!("temperature {}", cfg.temperature)));
    }
    let jobs: Vec<(&Instruction, u32)> = instructions
        .iter()
        .flat_map(|ins| (0..cfg.samples).map(move |k| (ins, k)))
        .collect();
    let results = run_indexed(jobs.len(), cfg.concurrency, |i| {
        let (ins, k) = jobs[i];
        let mut rng = rollout_rng(cfg.seed, &ins.instruction_id, k);
        rollout(
            policy,
            client,
            ins,
            cfg.temperature,
            cfg.max_rounds,
            &mut rng,
            provenance,
        )
    });
    let mut kept = Vec::new();
    let mut failures = Vec::new();
    for ((ins, k), r) in jobs.into_iter().zip(results) {
        match r {
            Ok(t) => kept.push(t),
            Err(e) => {
                tracing::warn!(instruction = %ins.instruction_id, sample = k, error = %e, "rollout abandoned");
                failures.push(RolloutFailure {
                    instruction_id: ins.instruction_id.clone(),
                    sample: k,
                    error: e.to_string(),
                });
            }
        }
    }
    Ok((kept, failures))
}

/// Samples `K` trajectories per instruction at the configured temperature and
/// binarizes their rewards.
pub fn explore(
    policy: &dyn Policy,
    client: &dyn EnvClient,
    instructions: &[Instruction],
    cfg: &RolloutConfig,
    iteration: u32,
) -> Result<Collected, RolloutError> {
    if instructions.is_empty() {
        return Err(RolloutError::Config(
            "exploration needs at least one instruction".into(),
        ));
    }
    let (mut records, failures) = sample_all(policy, client, instructions, cfg, Provenance::Sampled(iteration))?;
    for t in &mut records {
        t.reward = f64::from(binarize_reward(t.reward).unwrap_or(0));
    }
    let mut dataset = TrajectoryDataset::new(format!("D_m@iter{iteration}"), records);
    dataset.sort();
    Ok(Collected { dataset, failures })
}

/// Runs the source policy and keeps only successful trajectories, labelled as
/// expert data.
pub fn collect_expert(
    policy: &dyn Policy,
    client: &dyn EnvClient,
    instructions: &[Instruction],
    cfg: &RolloutConfig,
) -> Result<(Collected, CollectionSummary), RolloutError> {
    let (records, failures) = sample_all(policy, client, instructions, cfg, Provenance::Expert)?;
    let mut summary = CollectionSummary::default();
    for ins in instructions {
        summary.env(&ins.env_name).instructions += 1;
    }
    let mut kept = Vec::new();
    for mut t in records {
        let s = summary.env(&t.env_name);
        s.attempted += 1;
        if binarize_reward(t.reward).unwrap_or(0) == 1 {
            t.reward = 1.0;
            s.kept += 1;
            s.rounds_total += t.len();
            kept.push(t);
        }
    }
    let mut dataset = TrajectoryDataset::new("D_s", kept);
    dataset.sort();
    Ok((Collected { dataset, failures }, summary))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EnvCollection {
    pub instructions: usize,
    pub attempted: usize,
    pub kept: usize,
    pub rounds_total: usize,
}

impl EnvCollection {
    /// Mean rounds over kept trajectories only.
    pub fn mean_rounds(&self) -> f64 {
        if self.kept == 0 {
            0.0
        } else {
            self.rounds_total as f64 / self.kept as f64
        }
    }
}

/// Per-environment collection statistics (instructions, kept trajectories,
/// mean rounds of kept trajectories).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CollectionSummary {
    pub per_env: BTreeMap<String, EnvCollection>,
}

impl CollectionSummary {
    fn env(&mut self, name: &str) -> &mut EnvCollection {
        self.per_env.entry(name.to_string()).or_default()
    }

    pub fn render(&self) -> String {
        let mut s = format!("{:<10} {:>6} {:>6} {:>7}\n", "env", "inst", "traj", "rounds");
        for (env, c) in &self.per_env {
            let _ = writeln!(
                s,
                "{:<10} {:>6} {:>6} {:>7.2}",
                env,
                c.instructions,
                c.kept,
                c.mean_rounds()
            );
        }
        s
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EnvScore {
    pub n: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub mean_reward: f64,
    pub mean_rounds: f64,
}

impl EnvScore {
    fn from_trajectories<'a>(ts: impl Iterator<Item = &'a Trajectory>) -> Self {
        let mut n = 0;
        let mut successes = 0;
        let mut reward = 0.0;
        let mut rounds = 0;
        for t in ts {
            n += 1;
            if binarize_reward(t.reward).unwrap_or(0) == 1 {
                successes += 1;
            }
            reward += t.reward;
            rounds += t.len();
        }
        let d = n.max(1) as f64;
        EnvScore {
            n,
            successes,
            success_rate: successes as f64 / d,
            mean_reward: reward / d,
            mean_rounds: rounds as f64 / d,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_env: BTreeMap<String, EnvScore>,
    pub overall: EnvScore,
    /// Rollouts abandoned on transport or policy errors.
    pub failures: usize,
}

impl EvalReport {
    pub fn from_trajectories(ts: &[Trajectory], failures: usize) -> Self {
        let mut envs: Vec<&str> = ts.iter().map(|t| t.env_name.as_str()).collect();
        envs.sort_unstable();
        envs.dedup();
        let per_env = envs
            .into_iter()
            .map(|e| {
                (
                    e.to_string(),
                    EnvScore::from_trajectories(ts.iter().filter(|t| t.env_name == e)),
                )
            })
            .collect();
        EvalReport {
            per_env,
            overall: EnvScore::from_trajectories(ts.iter()),
            failures,
        }
    }

    pub fn success_rate(&self, env: &str) -> Option<f64> {
        self.per_env.get(env).map(|s| s.success_rate)
    }
}

/// One greedy rollout per instruction.
pub fn evaluate(
    policy: &dyn Policy,
    client: &dyn EnvClient,
    instructions: &[Instruction],
    cfg: &RolloutConfig,
) -> Result<(EvalReport, Vec<Trajectory>), RolloutError> {
    let cfg = cfg.greedy();
    let (mut ts, failures) = sample_all(policy, client, instructions, &cfg, Provenance::Sampled(0))?;
    for t in &mut ts {
        t.reward = f64::from(binarize_reward(t.reward).unwrap_or(0));
    }
    Ok((EvalReport::from_trajectories(&ts, failures.len()), ts))
}

/// Success rates as a table: one row per labelled report, one column per
/// environment, scores in percent.
pub fn render_table(rows: &[(String, EvalReport)]) -> String {
    let mut envs: Vec<&str> = rows
        .iter()
        .flat_map(|(_, r)| r.per_env.keys().map(String::as_str))
        .collect();
    envs.sort_unstable();
    envs.dedup();
    let width = rows.iter().map(|r| r.0.len()).max().unwrap_or(5).max(5);
    let mut s = format!("{:<width$}", "model");
    for e in &envs {
        let _ = write!(s, " {e:>8}");
    }
    s.push_str(&format!(" {:>8}\n", "overall"));
    for (label, r) in rows {
        let _ = write!(s, "{label:<width$}");
        for e in &envs {
            match r.success_rate(e) {
                Some(v) => {
                    let _ = write!(s, " {:>8.2}", 100.0 * v);
                }
                None => {
                    let _ = write!(s, " {:>8}", "-");
                }
            }
        }
        let _ = writeln!(s, " {:>8.2}", 100.0 * r.overall.success_rate);
    }
    s
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReplayError {
    #[error("environment: {0}")]
    Env(#[from] ClientError),
    #[error("step {step}: observation differs (stored {stored:?}, replayed {replayed:?})")]
    Observation {
        step: usize,
        stored: String,
        replayed: String,
    },
    #[error("reward differs (stored {stored}, replayed {replayed})")]
    Reward { stored: f64, replayed: f64 },
    #[error("episode ended after {replayed} steps, stored trajectory has {stored}")]
    Length { stored: usize, replayed: usize },
}

/// Feeds the stored actions through a fresh session and checks every
/// observation and the final reward byte for byte.
pub fn replay(client: &dyn EnvClient, t: &Trajectory) -> Result<(), ReplayError> {
    let created = client.create(&t.env_name, Some(&t.instruction_id), None)?;
    let sid = created.session_id;
    let result = (|| {
        let actions: Vec<&str> = t.executed_actions().collect();
        let mut reward = 0.0;
        for (i, a) in actions.iter().enumerate() {
            let r = client.step(&sid, a)?;
            if r.observation != t.steps[i].observation {
                return Err(ReplayError::Observation {
                    step: i,
                    stored: t.steps[i].observation.clone(),
                    replayed: r.observation,
                });
            }
            reward = r.trajectory_reward_so_far;
            if r.done && i + 1 < actions.len() {
                return Err(ReplayError::Length {
                    stored: actions.len(),
                    replayed: i + 1,
                });
            }
        }
        if t.reward.to_bits() != reward.to_bits() {
            return Err(ReplayError::Reward {
                stored: t.reward,
                replayed: reward,
            });
        }
        Ok(())
    })();
    client.close(&sid);
    result
}
