//! Reward-weighted log-likelihood over (context, action) examples, its exact
//! gradient, and a finite-difference check.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::controller::{run_indexed, EnvClient};
use crate::policy::features::FEATURE_DIM;
use crate::policy::loglinear::{log_softmax, score_gradient, Candidates};
use crate::policy::{LogLinearPolicy, PolicyContext};
use crate::trajectory::Trajectory;

use super::TrainError;

/// One decision: the candidate set of a context, the action taken, and the
/// trajectory weight (1 for behavioural cloning, the reward for evolution).
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub candidates: Candidates,
    pub chosen: usize,
    pub weight: f64,
}

/// Which weighting a trajectory's steps receive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Every trajectory weighted 1.
    Bc,
    /// Every trajectory weighted by its reward.
    Evol,
}

impl Objective {
    pub fn weight(self, t: &Trajectory) -> f64 {
        match self {
            Objective::Bc => 1.0,
            Objective::Evol => t.reward,
        }
    }
}

/// Rebuilds the contexts of a stored trajectory by replaying its executed
/// actions against a fresh session, checking each observation on the way.
pub fn replay_contexts(client: &dyn EnvClient, t: &Trajectory) -> Result<Vec<(PolicyContext, String)>, TrainError> {
    let record = || format!("{}/{}", t.env_name, t.instruction_id);
    let created = client
        .create(&t.env_name, Some(&t.instruction_id), None)
        .map_err(|e| TrainError::Replay(record(), e.to_string()))?;
    let sid = created.session_id.clone();
    let mut ctx = PolicyContext {
        env_name: t.env_name.clone(),
        instruction_id: t.instruction_id.clone(),
        system_prompt: created.system_prompt,
        instruction: created.observation.clone(),
        history: Vec::new(),
        current_observation: created.observation,
        available_actions: Vec::new(),
    };
    let mut out = Vec::new();
    let result = (|| {
        for (i, action) in t.executed_actions().enumerate() {
            ctx.available_actions = client
                .available_actions(&sid)
                .map_err(|e| TrainError::Replay(record(), e.to_string()))?;
            out.push((ctx.clone(), action.to_string()));
            let r = client
                .step(&sid, action)
                .map_err(|e| TrainError::Replay(record(), e.to_string()))?;
            if r.observation != t.steps[i].observation {
                return Err(TrainError::Replay(
                    record(),
                    format!("observation of step {i} differs from the stored one"),
                ));
            }
            ctx.history.push(t.steps[i].clone());
            ctx.current_observation = r.observation;
        }
        Ok(())
    })();
    client.close(&sid);
    result.map(|_| out)
}

/// Turns trajectories into weighted examples under `policy`'s action sets.
/// Zero-weight trajectories are skipped since they contribute nothing.
pub fn build_examples(
    policy: &LogLinearPolicy,
    client: &dyn EnvClient,
    records: &[Trajectory],
    objective: Objective,
    concurrency: usize,
) -> Result<Vec<Example>, TrainError> {
    let per_record = run_indexed(records.len(), concurrency, |i| {
        let t = &records[i];
        let weight = objective.weight(t);
        if weight == 0.0 {
            return Ok::<_, TrainError>(Vec::new());
        }
        let mut ex = Vec::new();
        for (step, (ctx, action)) in replay_contexts(client, t)?.into_iter().enumerate() {
            let candidates = policy
                .candidates(&ctx)
                .map_err(|e| TrainError::Dataset(format!("{}/{} step {step}: {e}", t.env_name, t.instruction_id)))?;
            let chosen = candidates.index_of(&action).ok_or_else(|| {
                TrainError::Dataset(format!(
                    "{}/{} step {step}: action `{action}` is not among the available actions",
                    t.env_name, t.instruction_id
                ))
            })?;
            ex.push(Example {
                candidates,
                chosen,
                weight,
            });
        }
        Ok(ex)
    });
    let mut all = Vec::new();
    for r in per_record {
        all.extend(r?);
    }
    Ok(all)
}

/// `Σ_i w_i log π_θ(a_i | c_i)`, summed in example order.
pub fn objective_value(weights: &[f64], examples: &[Example]) -> f64 {
    examples
        .iter()
        .map(|e| e.weight * log_softmax(&e.candidates.scores(weights), 1.0)[e.chosen])
        .sum()
}

/// Exact gradient of [`objective_value`]: `Σ_i w_i (φ(a_i) − E_π φ)`.
pub fn objective_gradient(weights: &[f64], examples: &[Example]) -> Vec<f64> {
    let mut g = vec![0.0; weights.len()];
    for e in examples {
        if e.weight == 0.0 {
            continue;
        }
        let probs: Vec<f64> = log_softmax(&e.candidates.scores(weights), 1.0)
            .into_iter()
            .map(f64::exp)
            .collect();
        score_gradient(&e.candidates, &probs, e.chosen).add_scaled_to(&mut g, e.weight);
    }
    g
}

/// Full-batch gradient ascent. Each epoch takes one step of
/// `learning_rate · ∇J / normalizer`; returns the weights and the per-epoch
/// mean negative log-likelihood `−J / normalizer` measured before each step.
pub fn ascend(
    start: &[f64],
    examples: &[Example],
    learning_rate: f64,
    epochs: u32,
    normalizer: f64,
) -> (Vec<f64>, Vec<f64>) {
    let mut w = start.to_vec();
    let mut losses = Vec::with_capacity(epochs as usize);
    if examples.is_empty() || normalizer <= 0.0 {
        return (w, losses);
    }
    for _ in 0..epochs {
        losses.push(-objective_value(&w, examples) / normalizer);
        let g = objective_gradient(&w, examples);
        let step = learning_rate / normalizer;
        for (wi, gi) in w.iter_mut().zip(&g) {
            *wi += step * gi;
        }
    }
    (w, losses)
}

/// Coordinates touched by any example's features.
pub fn active_coordinates(examples: &[Example]) -> Vec<usize> {
    let mut seen = vec![false; FEATURE_DIM];
    for e in examples {
        for f in &e.candidates.features {
            for &(i, _) in &f.entries {
                seen[i as usize] = true;
            }
        }
    }
    (0..FEATURE_DIM).filter(|&i| seen[i]).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub coordinates: usize,
}

/// `J(w + h e_c) − J(w − h e_c)` evaluated without subtracting the two
/// objective values: per example the change of the log-partition is
/// `ln(1 + Σ a_i 2 sinh(h φ_ic) / Σ a_i e^{−h φ_ic})`, which stays accurate
/// when the difference is far below the objective's magnitude.
pub fn objective_difference(weights: &[f64], examples: &[Example], c: usize, h: f64) -> f64 {
    let coef = |f: &crate::policy::features::SparseVec| {
        f.entries
            .binary_search_by_key(&(c as u32), |e| e.0)
            .map(|k| f.entries[k].1)
            .unwrap_or(0.0)
    };
    let mut total = 0.0;
    for e in examples {
        if e.weight == 0.0 {
            continue;
        }
        let phi: Vec<f64> = e.candidates.features.iter().map(coef).collect();
        if phi.iter().all(|v| *v == 0.0) {
            continue;
        }
        let scores = e.candidates.scores(weights);
        let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut num = 0.0;
        let mut den = 0.0;
        for (s, p) in scores.iter().zip(&phi) {
            let a = (s - m).exp();
            num += a * 2.0 * (h * p).sinh();
            den += a * (-h * p).exp();
        }
        total += e.weight * (2.0 * h * phi[e.chosen] - (num / den).ln_1p());
    }
    total
}

/// Combines difference quotients `d(h)`, `d(h/2)`, `d(h/4)` by Richardson
/// extrapolation, cancelling the `h²` and `h⁴` error terms of central
/// differences.
pub fn richardson(mut d: impl FnMut(f64) -> f64, h: f64) -> f64 {
    let (d1, d2, d3) = (d(h), d(h / 2.0), d(h / 4.0));
    let r1 = (4.0 * d2 - d1) / 3.0;
    let r2 = (4.0 * d3 - d2) / 3.0;
    (16.0 * r2 - r1) / 15.0
}

/// Compares the analytic gradient with extrapolated central differences from
/// base step `h` on at least `min_coords` coordinates (active ones first,
/// then random others).
pub fn grad_check(weights: &[f64], examples: &[Example], h: f64, min_coords: usize, rng: &mut ChaCha8Rng) -> GradCheck {
    let analytic = objective_gradient(weights, examples);
    let mut coords = active_coordinates(examples);
    coords.shuffle(rng);
    coords.truncate(min_coords.max(1));
    while coords.len() < min_coords {
        let c = rng.gen_range(0..weights.len());
        if !coords.contains(&c) {
            coords.push(c);
        }
    }
    let mut worst: f64 = 0.0;
    for &c in &coords {
        let fd = richardson(|s| objective_difference(weights, examples, c, s) / (2.0 * s), h);
        let a = analytic[c];
        let scale = fd.abs().max(a.abs());
        let rel = if scale < 1e-8 {
            (fd - a).abs()
        } else {
            (fd - a).abs() / scale
        };
        worst = worst.max(rel);
    }
    GradCheck {
        max_rel_error: worst,
        coordinates: coords.len(),
    }
}
