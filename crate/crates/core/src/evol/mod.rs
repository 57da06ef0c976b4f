//! Behavioural cloning, the explore/learn self-evolution loop, and the
//! RL-as-inference oracles used to check it.

pub mod bandit;
pub mod desk;
pub mod inference;
pub mod objective;

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::{evaluate, explore, EnvClient, EvalReport, RolloutConfig, RolloutError};
use crate::dataset::{merge_datasets, MergeStrategy, TrajectoryDataset};
use crate::policy::LogLinearPolicy;
use crate::trajectory::{Instruction, Trajectory};

pub use objective::{
    ascend, build_examples, grad_check, objective_difference, objective_gradient, objective_value, richardson, Example,
    Objective,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    /// A record whose actions cannot be scored by the policy.
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error("replay of {0} failed: {1}")]
    Replay(String, String),
    #[error(transparent)]
    Rollout(#[from] RolloutError),
    #[error("invalid training config: {0}")]
    Config(String),
}

/// Where each learning step starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RestartFrom {
    /// Re-fit the behavioural-cloning weights every iteration.
    #[default]
    Base,
    /// Continue from the previous iteration's weights.
    Previous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Evolution iterations (M).
    pub iterations: u32,
    /// Exploration samples per instruction (K).
    pub samples: u32,
    pub merge: MergeStrategy,
    pub learning_rate: f64,
    /// Gradient steps per learning step and for behavioural cloning.
    pub epochs: u32,
    pub exploration_temperature: f64,
    pub restart_from: RestartFrom,
    /// Divides every gradient step. `None` divides each environment's
    /// examples by that environment's total trajectory weight, so each step
    /// follows the mean over the reward-weighted trajectory distribution of
    /// every environment.
    pub normalizer: Option<f64>,
    /// Also evaluate each iteration on the evolve split.
    pub track_training_split: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 4,
            samples: 1,
            merge: MergeStrategy::WithInitial,
            learning_rate: 0.5,
            epochs: 3,
            exploration_temperature: 0.7,
            restart_from: RestartFrom::Base,
            normalizer: None,
            track_training_split: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.iterations == 0 {
            return bad("iterations must be at least 1");
        }
        if self.samples == 0 {
            return bad("samples must be at least 1");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(self.exploration_temperature >= 0.0 && self.exploration_temperature.is_finite()) {
            return bad("exploration_temperature must be non-negative");
        }
        if let Some(n) = self.normalizer {
            if !(n > 0.0 && n.is_finite()) {
                return bad("normalizer must be positive");
            }
        }
        Ok(())
    }

    /// The step divisor for a dataset of total trajectory weight `weight`.
    pub fn normalizer_for(&self, weight: f64) -> f64 {
        self.normalizer.unwrap_or(weight)
    }
}

/// Weights and per-epoch mean losses of one optimisation run.
#[derive(Debug, Clone)]
pub struct Fit {
    pub policy: LogLinearPolicy,
    pub losses: Vec<f64>,
    pub examples: usize,
}

fn fit(
    start: &LogLinearPolicy,
    client: &dyn EnvClient,
    dataset: &TrajectoryDataset,
    objective: Objective,
    cfg: &TrainConfig,
    concurrency: usize,
) -> Result<Fit, TrainError> {
    cfg.validate()?;
    let (examples, normalizer) = match cfg.normalizer {
        Some(n) => (
            build_examples(start, client, &dataset.records, objective, concurrency)?,
            n,
        ),
        None => {
            // Each environment's examples are scaled by its own total weight,
            // so environments trained together move as they would alone.
            let mut by_env: BTreeMap<&str, Vec<Trajectory>> = BTreeMap::new();
            for t in &dataset.records {
                by_env.entry(t.env_name.as_str()).or_default().push(t.clone());
            }
            let mut all = Vec::new();
            for records in by_env.values() {
                let weight: f64 = records.iter().map(|t| objective.weight(t)).sum();
                let mut ex = build_examples(start, client, records, objective, concurrency)?;
                for e in &mut ex {
                    e.weight /= weight;
                }
                all.extend(ex);
            }
            (all, 1.0)
        }
    };
    let (w, losses) = ascend(start.weights(), &examples, cfg.learning_rate, cfg.epochs, normalizer);
    Ok(Fit {
        policy: start.with_weights(w),
        losses,
        examples: examples.len(),
    })
}

/// Behavioural cloning: ascends `Σ_τ Σ_t log π(a_t | c_t)` from `start`.
pub fn bc_train(
    start: &LogLinearPolicy,
    client: &dyn EnvClient,
    d_s: &TrajectoryDataset,
    cfg: &TrainConfig,
    concurrency: usize,
) -> Result<Fit, TrainError> {
    fit(start, client, d_s, Objective::Bc, cfg, concurrency)
}

/// One learning step: ascends `Σ_τ r(τ) Σ_t log π(a_t | c_t)` from `start`.
pub fn learn_step(
    start: &LogLinearPolicy,
    client: &dyn EnvClient,
    merged: &TrajectoryDataset,
    cfg: &TrainConfig,
    concurrency: usize,
) -> Result<Fit, TrainError> {
    fit(start, client, merged, Objective::Evol, cfg, concurrency)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: u32,
    pub explored: usize,
    pub explored_successes: BTreeMap<String, usize>,
    pub rollout_failures: usize,
    pub merged_size: usize,
    pub merged_successes: usize,
    pub train_examples: usize,
    pub train_losses: Vec<f64>,
    pub eval: EvalReport,
    /// Greedy success on the evolve split, when tracked.
    pub train_split: Option<EvalReport>,
    pub snapshot_digest: String,
    pub wall_time_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseRecord {
    pub expert_size: usize,
    pub expert_by_env: BTreeMap<String, usize>,
    pub train_examples: usize,
    pub train_losses: Vec<f64>,
    pub eval: EvalReport,
    pub train_split: Option<EvalReport>,
    pub snapshot_digest: String,
    pub wall_time_ms: u64,
}

/// Everything needed to reproduce and report a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub kind: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub base: BaseRecord,
    pub iterations: Vec<IterationRecord>,
}

impl RunManifest {
    /// The manifest with wall-clock timings zeroed, for reproducibility checks.
    pub fn without_timings(&self) -> Self {
        let mut m = self.clone();
        m.base.wall_time_ms = 0;
        for it in &mut m.iterations {
            it.wall_time_ms = 0;
        }
        m
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    /// Eval success per iteration for `env`, starting with the base policy.
    pub fn trace(&self, env: &str) -> Vec<f64> {
        std::iter::once(&self.base.eval)
            .chain(self.iterations.iter().map(|i| &i.eval))
            .map(|r| r.success_rate(env).unwrap_or(0.0))
            .collect()
    }

    /// Reward-vs-iteration CSV: one row per iteration, base included.
    pub fn to_csv(&self) -> String {
        let envs: Vec<&String> = self.base.eval.per_env.keys().collect();
        let mut out = String::from("iteration");
        for e in &envs {
            out.push_str(&format!(",{e}"));
        }
        out.push_str(",overall,explored_successes,merged_size\n");
        let row = |out: &mut String, it: u32, r: &EvalReport, succ: usize, merged: usize| {
            out.push_str(&it.to_string());
            for e in &envs {
                out.push_str(&format!(",{:.4}", r.success_rate(e).unwrap_or(0.0)));
            }
            out.push_str(&format!(",{:.4},{succ},{merged}\n", r.overall.success_rate));
        };
        row(
            &mut out,
            0,
            &self.base.eval,
            self.base.expert_size,
            self.base.expert_size,
        );
        for i in &self.iterations {
            let succ = i.explored_successes.values().sum();
            row(&mut out, i.iteration, &i.eval, succ, i.merged_size);
        }
        out
    }
}

/// Artifacts of one iteration, for callers that persist them.
#[derive(Debug, Clone)]
pub struct IterationArtifacts {
    pub policy: LogLinearPolicy,
    pub explored: TrajectoryDataset,
}

#[derive(Debug, Clone)]
pub struct EvolOutcome {
    pub policy: LogLinearPolicy,
    pub manifest: RunManifest,
    pub iterations: Vec<IterationArtifacts>,
}

/// Inputs shared by behavioural cloning and evolution.
pub struct RunInputs<'a> {
    pub client: &'a dyn EnvClient,
    pub d_s: &'a TrajectoryDataset,
    pub evolve: &'a [Instruction],
    pub eval: &'a [Instruction],
    pub rollout: &'a RolloutConfig,
}

fn eval_reports(
    policy: &LogLinearPolicy,
    inputs: &RunInputs<'_>,
    cfg: &TrainConfig,
) -> Result<(EvalReport, Option<EvalReport>), TrainError> {
    let (eval, _) = evaluate(policy, inputs.client, inputs.eval, inputs.rollout)?;
    let train = if cfg.track_training_split {
        Some(evaluate(policy, inputs.client, inputs.evolve, inputs.rollout)?.0)
    } else {
        None
    };
    Ok((eval, train))
}

/// Trains the base policy from zero weights on `D_s` and evaluates it.
pub fn train_base(
    start: &LogLinearPolicy,
    inputs: &RunInputs<'_>,
    cfg: &TrainConfig,
) -> Result<(LogLinearPolicy, BaseRecord), TrainError> {
    let clock = Instant::now();
    let fit = bc_train(start, inputs.client, inputs.d_s, cfg, inputs.rollout.concurrency)?;
    let (eval, train_split) = eval_reports(&fit.policy, inputs, cfg)?;
    let record = BaseRecord {
        expert_size: inputs.d_s.len(),
        expert_by_env: inputs.d_s.successes_by_env(),
        train_examples: fit.examples,
        train_losses: fit.losses,
        eval,
        train_split,
        snapshot_digest: fit.policy.digest(),
        wall_time_ms: clock.elapsed().as_millis() as u64,
    };
    Ok((fit.policy, record))
}

/// Alternates exploration and learning for `cfg.iterations` rounds starting
/// from a behavioural-cloning policy.
pub fn agent_evol(
    base: &LogLinearPolicy,
    base_record: BaseRecord,
    inputs: &RunInputs<'_>,
    cfg: &TrainConfig,
) -> Result<EvolOutcome, TrainError> {
    cfg.validate()?;
    let explore_cfg = RolloutConfig {
        temperature: cfg.exploration_temperature,
        samples: cfg.samples,
        ..inputs.rollout.clone()
    };
    let mut current = base.clone();
    let mut previous = TrajectoryDataset::empty("D_0");
    let mut records = Vec::new();
    let mut artifacts = Vec::new();
    for m in 1..=cfg.iterations {
        let clock = Instant::now();
        let collected = explore(&current, inputs.client, inputs.evolve, &explore_cfg, m)?;
        let d_m = collected.dataset;
        let merged = merge_datasets(cfg.merge, inputs.d_s, &previous, &d_m);
        let start = match cfg.restart_from {
            RestartFrom::Base => base,
            RestartFrom::Previous => &current,
        };
        let fit = learn_step(start, inputs.client, &merged, cfg, inputs.rollout.concurrency)?;
        let (eval, train_split) = eval_reports(&fit.policy, inputs, cfg)?;
        tracing::info!(
            iteration = m,
            explored = d_m.len(),
            successes = d_m.successes(),
            merged = merged.len(),
            eval = eval.overall.success_rate,
            "evolution iteration"
        );
        records.push(IterationRecord {
            iteration: m,
            explored: d_m.len(),
            explored_successes: d_m.successes_by_env(),
            rollout_failures: collected.failures.len(),
            merged_size: merged.len(),
            merged_successes: merged.successes(),
            train_examples: fit.examples,
            train_losses: fit.losses,
            eval,
            train_split,
            snapshot_digest: fit.policy.digest(),
            wall_time_ms: clock.elapsed().as_millis() as u64,
        });
        current = fit.policy;
        artifacts.push(IterationArtifacts {
            policy: current.clone(),
            explored: d_m.clone(),
        });
        previous = d_m;
    }
    let manifest = RunManifest {
        kind: "evol".into(),
        seed: inputs.rollout.seed,
        config: serde_json::to_value(cfg).expect("config serializes"),
        base: base_record,
        iterations: records,
    };
    Ok(EvolOutcome {
        policy: current,
        manifest,
        iterations: artifacts,
    })
}
