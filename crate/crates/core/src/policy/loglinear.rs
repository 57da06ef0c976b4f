//! Softmax over candidate actions of `θ·φ(context, action) / temperature`.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::features::{Prepared, SparseVec, FEATURE_DIM, FEATURE_VERSION};
use super::react::{render_react, ReActOutput};
use super::{Emission, Policy, PolicyContext, PolicyError};

#[derive(Debug, Clone, PartialEq)]
pub struct LogLinearPolicy {
    weights: Arc<Vec<f64>>,
    /// Action sets for environments whose protocol action list is empty.
    open_actions: Arc<BTreeMap<String, Vec<String>>>,
}

/// Candidate actions of one context with their feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidates {
    pub actions: Vec<String>,
    pub features: Vec<SparseVec>,
}

impl Candidates {
    pub fn index_of(&self, action: &str) -> Option<usize> {
        self.actions.iter().position(|a| a == action)
    }

    pub fn scores(&self, weights: &[f64]) -> Vec<f64> {
        self.features.iter().map(|f| f.dot(weights)).collect()
    }
}

/// `ln softmax(scores / temperature)`, computed stably.
pub fn log_softmax(scores: &[f64], temperature: f64) -> Vec<f64> {
    let scaled: Vec<f64> = scores.iter().map(|s| s / temperature).collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + scaled.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
    scaled.iter().map(|s| s - lse).collect()
}

/// Index of the highest score; ties go to the lexicographically smallest action.
pub fn argmax(actions: &[String], scores: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..scores.len() {
        if scores[i] > scores[best] || (scores[i] == scores[best] && actions[i] < actions[best]) {
            best = i;
        }
    }
    best
}

/// `φ(a) − Σ_b π(b) φ(b)` for candidate `chosen`, given temperature-1
/// probabilities.
pub fn score_gradient(c: &Candidates, probs: &[f64], chosen: usize) -> SparseVec {
    let mut entries: Vec<(u32, f64)> = c.features[chosen].entries.clone();
    for (f, p) in c.features.iter().zip(probs) {
        if *p == 0.0 {
            continue;
        }
        entries.extend(f.entries.iter().map(|&(i, v)| (i, -p * v)));
    }
    SparseVec::from_unsorted(entries)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySnapshot {
    pub dimension: usize,
    pub feature_version: String,
    /// Non-zero weights as `(index, value)`, ascending by index.
    pub weights: Vec<(u32, f64)>,
    #[serde(default)]
    pub open_actions: BTreeMap<String, Vec<String>>,
}

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error("snapshot JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("snapshot dimension {0} does not match {FEATURE_DIM}")]
    Dimension(usize),
    #[error("snapshot feature version `{0}` does not match `{FEATURE_VERSION}`")]
    Version(String),
    #[error("weight index {0} out of range")]
    Index(u32),
    #[error("non-finite weight at index {0}")]
    NonFinite(u32),
}

impl Default for LogLinearPolicy {
    fn default() -> Self {
        Self::zeros()
    }
}

impl LogLinearPolicy {
    pub fn zeros() -> Self {
        Self {
            weights: Arc::new(vec![0.0; FEATURE_DIM]),
            open_actions: Arc::new(BTreeMap::new()),
        }
    }

    pub fn with_open_actions(mut self, env: &str, actions: Vec<String>) -> Self {
        Arc::make_mut(&mut self.open_actions).insert(env.to_string(), actions);
        self
    }

    /// Same action sets, new weights.
    pub fn with_weights(&self, weights: Vec<f64>) -> Self {
        assert_eq!(weights.len(), FEATURE_DIM, "weight vector has wrong dimension");
        Self {
            weights: Arc::new(weights),
            open_actions: Arc::clone(&self.open_actions),
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn open_actions(&self) -> &BTreeMap<String, Vec<String>> {
        &self.open_actions
    }

    /// The action set the softmax ranges over: the protocol list, or the
    /// configured set for open-ended environments.
    pub fn action_set<'a>(&'a self, ctx: &'a PolicyContext) -> &'a [String] {
        if ctx.available_actions.is_empty() {
            self.open_actions.get(&ctx.env_name).map(Vec::as_slice).unwrap_or(&[])
        } else {
            &ctx.available_actions
        }
    }

    pub fn candidates(&self, ctx: &PolicyContext) -> Result<Candidates, PolicyError> {
        let actions = self.action_set(ctx);
        if actions.is_empty() {
            return Err(PolicyError::NoActions(ctx.env_name.clone()));
        }
        let prepared = Prepared::new(ctx);
        Ok(Candidates {
            actions: actions.to_vec(),
            features: actions.iter().map(|a| prepared.features(a)).collect(),
        })
    }

    /// Probabilities at `temperature` (> 0), in candidate order.
    pub fn distribution(&self, ctx: &PolicyContext, temperature: f64) -> Result<(Vec<String>, Vec<f64>), PolicyError> {
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(PolicyError::Temperature(temperature));
        }
        let c = self.candidates(ctx)?;
        let lp = log_softmax(&c.scores(&self.weights), temperature);
        Ok((c.actions, lp.into_iter().map(f64::exp).collect()))
    }

    pub fn log_prob(&self, ctx: &PolicyContext, action: &str) -> Result<f64, PolicyError> {
        let c = self.candidates(ctx)?;
        let i = c
            .index_of(action)
            .ok_or_else(|| PolicyError::ActionNotAvailable(action.to_string()))?;
        Ok(log_softmax(&c.scores(&self.weights), 1.0)[i])
    }

    pub fn grad_log_prob(&self, ctx: &PolicyContext, action: &str) -> Result<SparseVec, PolicyError> {
        let c = self.candidates(ctx)?;
        let i = c
            .index_of(action)
            .ok_or_else(|| PolicyError::ActionNotAvailable(action.to_string()))?;
        let probs: Vec<f64> = log_softmax(&c.scores(&self.weights), 1.0)
            .into_iter()
            .map(f64::exp)
            .collect();
        Ok(score_gradient(&c, &probs, i))
    }

    /// Chooses an action: argmax at temperature 0, otherwise a sample from the
    /// tempered softmax. The log-probability is always the temperature-1 value.
    pub fn act(
        &self,
        ctx: &PolicyContext,
        temperature: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<(ReActOutput, f64), PolicyError> {
        if !(temperature >= 0.0 && temperature.is_finite()) {
            return Err(PolicyError::Temperature(temperature));
        }
        let c = self.candidates(ctx)?;
        let scores = c.scores(&self.weights);
        let i = if temperature == 0.0 {
            argmax(&c.actions, &scores)
        } else {
            let lp = log_softmax(&scores, temperature);
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut pick = lp.len() - 1;
            for (k, l) in lp.iter().enumerate() {
                acc += l.exp();
                if u < acc {
                    pick = k;
                    break;
                }
            }
            pick
        };
        let log_prob = log_softmax(&scores, 1.0)[i];
        let thought = self.explain(ctx, &c.actions[i]);
        Ok((
            ReActOutput {
                thought,
                action: c.actions[i].clone(),
            },
            log_prob,
        ))
    }

    /// `I will {action} because {top features}`.
    fn explain(&self, ctx: &PolicyContext, action: &str) -> String {
        let named = Prepared::new(ctx).named(action);
        let mut contrib: Vec<(f64, &str)> = named
            .iter()
            .map(|(n, v)| {
                let i = super::features::feature_index(n) as usize;
                (self.weights[i] * v, n.as_str())
            })
            .filter(|(c, _)| *c > 0.0)
            .collect();
        contrib.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(b.1)));
        let reasons: Vec<&str> = contrib.iter().take(2).map(|c| c.1).collect();
        if reasons.is_empty() {
            format!("I will {action} because it is available")
        } else {
            format!("I will {action} because {}", reasons.join(", "))
        }
    }

    pub fn snapshot(&self) -> PolicySnapshot {
        PolicySnapshot {
            dimension: FEATURE_DIM,
            feature_version: FEATURE_VERSION.to_string(),
            weights: self
                .weights
                .iter()
                .enumerate()
                .filter(|(_, w)| **w != 0.0)
                .map(|(i, w)| (i as u32, *w))
                .collect(),
            open_actions: (*self.open_actions).clone(),
        }
    }

    pub fn from_snapshot(s: &PolicySnapshot) -> Result<Self, SnapshotError> {
        if s.dimension != FEATURE_DIM {
            return Err(SnapshotError::Dimension(s.dimension));
        }
        if s.feature_version != FEATURE_VERSION {
            return Err(SnapshotError::Version(s.feature_version.clone()));
        }
        let mut w = vec![0.0; FEATURE_DIM];
        for &(i, v) in &s.weights {
            if i as usize >= FEATURE_DIM {
                return Err(SnapshotError::Index(i));
            }
            if !v.is_finite() {
                return Err(SnapshotError::NonFinite(i));
            }
            w[i as usize] = v;
        }
        Ok(Self {
            weights: Arc::new(w),
            open_actions: Arc::new(s.open_actions.clone()),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.snapshot()).expect("snapshot serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, SnapshotError> {
        Self::from_snapshot(&serde_json::from_str(text)?)
    }

    /// SHA-256 of the snapshot JSON, hex encoded.
    pub fn digest(&self) -> String {
        let d = Sha256::digest(self.to_json().as_bytes());
        d.iter().map(|b| format!("{b:02x}")).collect()
    }
}

impl Policy for LogLinearPolicy {
    fn emit(&self, ctx: &PolicyContext, temperature: f64, rng: &mut ChaCha8Rng) -> Result<Emission, PolicyError> {
        let (out, lp) = self.act(ctx, temperature, rng)?;
        Ok(Emission {
            text: render_react(&out),
            log_prob: Some(lp),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::maze;
    use crate::policy::features::feature_index;
    use crate::protocol::World;
    use rand::SeedableRng;

    fn ctx_with(actions: &[&str]) -> PolicyContext {
        let w = maze::MazeWorld::generate(11, 7).unwrap();
        PolicyContext {
            env_name: "maze".into(),
            instruction_id: "maze-11".into(),
            system_prompt: String::new(),
            instruction: w.instruction_text(),
            history: vec![],
            current_observation: w.instruction_text(),
            available_actions: actions.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn uniform_at_zero() {
        let p = LogLinearPolicy::zeros();
        let ctx = ctx_with(&["move down", "move left", "move right", "move up"]);
        for a in &ctx.available_actions {
            assert!((p.log_prob(&ctx, a).unwrap() - (0.25f64).ln()).abs() < 1e-15);
        }
    }

    #[test]
    fn singleton_has_zero_log_prob_and_gradient() {
        let mut w = vec![0.0; FEATURE_DIM];
        w[feature_index("act=move up") as usize] = 3.0;
        let p = LogLinearPolicy::zeros().with_weights(w);
        let ctx = ctx_with(&["move up"]);
        assert_eq!(p.log_prob(&ctx, "move up").unwrap(), 0.0);
        assert!(p.grad_log_prob(&ctx, "move up").unwrap().is_zero());
    }

    #[test]
    fn ties_break_lexicographically() {
        let p = LogLinearPolicy::zeros();
        let ctx = ctx_with(&["move up", "move down", "move left"]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (out, _) = p.act(&ctx, 0.0, &mut rng).unwrap();
        assert_eq!(out.action, "move down");
    }

    #[test]
    fn unavailable_action_is_an_error() {
        let p = LogLinearPolicy::zeros();
        let ctx = ctx_with(&["move up"]);
        assert!(matches!(
            p.log_prob(&ctx, "move down"),
            Err(PolicyError::ActionNotAvailable(_))
        ));
        assert!(matches!(
            p.act(&ctx_with(&[]), 0.0, &mut ChaCha8Rng::seed_from_u64(0)),
            Err(PolicyError::NoActions(_))
        ));
    }

    #[test]
    fn snapshot_round_trip() {
        let mut w = vec![0.0; FEATURE_DIM];
        w[17] = 0.1 + 0.2;
        w[4000] = -1e-300;
        let p = LogLinearPolicy::zeros()
            .with_open_actions("wordle", vec!["c r a n e".into()])
            .with_weights(w);
        let q = LogLinearPolicy::from_json(&p.to_json()).unwrap();
        assert_eq!(p, q);
        assert_eq!(p.digest(), q.digest());
    }

    #[test]
    fn emission_parses_back() {
        let mut w = vec![0.0; FEATURE_DIM];
        w[feature_index("m:toward") as usize] = 1.0;
        let p = LogLinearPolicy::zeros().with_weights(w);
        let w = maze::MazeWorld::generate(11, 7).unwrap();
        let mut ctx = ctx_with(&[]);
        ctx.available_actions = w.available_actions();
        let e = p.emit(&ctx, 0.0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let parsed = crate::policy::parse_react(&e.text).unwrap();
        assert!(ctx.available_actions.contains(&parsed.action));
        assert!(parsed.thought.starts_with("I will "));
    }
}
