//! A one-round, two-lever environment and an exact-expectation version of the
//! evolution loop on it. With a single context the expected exploration
//! dataset is known in closed form, so every iteration can be computed
//! without sampling.

use std::sync::Arc;

use crate::dataset::MergeStrategy;
use crate::policy::loglinear::log_softmax;
use crate::policy::{LogLinearPolicy, PolicyContext};
use crate::protocol::{EnvDescriptor, EnvRegistry, EnvSpec, Instance, Outcome, RewardKind, Transition, World};

use super::objective::{ascend, Example};
use super::{RestartFrom, TrainConfig, TrainError};

pub const BANDIT: &str = "bandit";
pub const ARMS: [&str; 2] = ["pull left", "pull right"];
pub const INSTRUCTION: &str =
    "Two levers stand in front of you, one on the left and one on the right. Exactly one of them pays out.";
const SYSTEM_PROMPT: &str = "You are in front of two levers. Pull one with `pull left` or `pull right`. Answer with a Thought line and an Action line.";

/// The paying lever is `seed % 2`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BanditWorld {
    pub rewarded: usize,
    pulled: bool,
}

impl BanditWorld {
    pub fn new(seed: u64) -> Self {
        Self {
            rewarded: (seed % 2) as usize,
            pulled: false,
        }
    }
}

impl World for BanditWorld {
    fn apply(&mut self, action: &str) -> Transition {
        let Some(arm) = ARMS.iter().position(|a| *a == action.trim()) else {
            return Transition {
                observation: "Invalid action.".into(),
                step_reward: 0.0,
                outcome: None,
            };
        };
        self.pulled = true;
        let win = arm == self.rewarded;
        Transition {
            observation: if win { "The lever pays out." } else { "Nothing happens." }.into(),
            step_reward: if win { 1.0 } else { 0.0 },
            outcome: Some(if win { Outcome::Success } else { Outcome::Failure }),
        }
    }

    fn available_actions(&self) -> Vec<String> {
        if self.pulled {
            Vec::new()
        } else {
            ARMS.iter().map(|a| a.to_string()).collect()
        }
    }
}

pub fn registry() -> EnvRegistry {
    let mut r = EnvRegistry::new();
    r.register(EnvSpec {
        descriptor: EnvDescriptor {
            env_name: BANDIT.into(),
            max_rounds: 1,
            reward_kind: RewardKind::Binary,
            system_prompt: SYSTEM_PROMPT.into(),
        },
        factory: Arc::new(|seed| {
            Ok(Instance {
                instruction_text: INSTRUCTION.into(),
                world: Box::new(BanditWorld::new(seed)),
            })
        }),
    });
    r
}

/// The only decision context of the bandit.
pub fn context(instruction_id: &str) -> PolicyContext {
    PolicyContext {
        env_name: BANDIT.into(),
        instruction_id: instruction_id.into(),
        system_prompt: SYSTEM_PROMPT.into(),
        instruction: INSTRUCTION.into(),
        history: Vec::new(),
        current_observation: INSTRUCTION.into(),
        available_actions: ARMS.iter().map(|a| a.to_string()).collect(),
    }
}

/// Probabilities of the paying lever after each iteration; index 0 is the
/// starting policy.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactTrace {
    /// At temperature 1, the policy's own distribution.
    pub success: Vec<f64>,
    /// At the exploration temperature.
    pub exploration: Vec<f64>,
    /// Of the greedy action, so 0 or 1 (a tie counts as 1/2).
    pub greedy: Vec<f64>,
    pub policies: Vec<LogLinearPolicy>,
}

fn success_at(p: &LogLinearPolicy, ctx: &PolicyContext, rewarded: usize, temperature: f64) -> Result<f64, TrainError> {
    let c = p.candidates(ctx).map_err(|e| TrainError::Dataset(e.to_string()))?;
    let i = c.index_of(ARMS[rewarded]).expect("both arms are candidates");
    let s = c.scores(p.weights());
    if temperature == 0.0 {
        let best = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let ties = s.iter().filter(|&&x| x == best).count() as f64;
        return Ok(if s[i] == best { 1.0 / ties } else { 0.0 });
    }
    Ok(log_softmax(&s, temperature)[i].exp())
}

/// Runs the evolution loop with each exploration dataset replaced by its
/// expectation: `K` samples at the exploration temperature give the paying
/// lever weight `K · π_T(paying)` and the other lever weight 0 after reward
/// weighting. The expert set is empty, so the base policy is uniform.
pub fn exact_agent_evol(seed: u64, cfg: &TrainConfig) -> Result<ExactTrace, TrainError> {
    cfg.validate()?;
    let rewarded = BanditWorld::new(seed).rewarded;
    let ctx = context(&format!("{BANDIT}-{seed}"));
    let base = LogLinearPolicy::zeros();
    let candidates = base.candidates(&ctx).map_err(|e| TrainError::Dataset(e.to_string()))?;
    let chosen = candidates.index_of(ARMS[rewarded]).expect("both arms are candidates");

    let mut trace = ExactTrace {
        success: Vec::new(),
        exploration: Vec::new(),
        greedy: Vec::new(),
        policies: Vec::new(),
    };
    let record = |p: &LogLinearPolicy, t: &mut ExactTrace| -> Result<(), TrainError> {
        t.success.push(success_at(p, &ctx, rewarded, 1.0)?);
        t.exploration
            .push(success_at(p, &ctx, rewarded, cfg.exploration_temperature)?);
        t.greedy.push(success_at(p, &ctx, rewarded, 0.0)?);
        t.policies.push(p.clone());
        Ok(())
    };
    record(&base, &mut trace)?;
    let mut current = base.clone();
    let mut previous_weight = 0.0;
    for _ in 0..cfg.iterations {
        let explored = f64::from(cfg.samples) * success_at(&current, &ctx, rewarded, cfg.exploration_temperature)?;
        let weight = match cfg.merge {
            MergeStrategy::WithInitial => explored,
            MergeStrategy::WithPrevious => explored + previous_weight,
        };
        previous_weight = explored;
        let examples = [Example {
            candidates: candidates.clone(),
            chosen,
            weight,
        }];
        let start = match cfg.restart_from {
            RestartFrom::Base => &base,
            RestartFrom::Previous => &current,
        };
        let normalizer = cfg.normalizer_for(weight);
        let (w, _) = ascend(start.weights(), &examples, cfg.learning_rate, cfg.epochs, normalizer);
        current = start.with_weights(w);
        record(&current, &mut trace)?;
    }
    Ok(trace)
}
