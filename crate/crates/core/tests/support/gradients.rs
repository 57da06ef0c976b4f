//! The reward-weighted log-likelihood and its finite differences written out
//! from the definitions, plus random datasets to compare them on.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use evolgym::evol::{objective_gradient, Example};
use evolgym::policy::features::{SparseVec, FEATURE_DIM};
use evolgym::policy::loglinear::Candidates;

/// Scores as dot products, then a max-shifted log-sum-exp.
pub fn reference_objective(w: &[f64], examples: &[Example]) -> f64 {
    let mut total = 0.0;
    for e in examples {
        let scores: Vec<f64> = e
            .candidates
            .features
            .iter()
            .map(|f| f.entries.iter().map(|(i, v)| w[*i as usize] * v).sum())
            .collect();
        let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + scores.iter().map(|s| (s - m).exp()).sum::<f64>().ln();
        total += e.weight * (scores[e.chosen] - lse);
    }
    total
}

/// `J(w + h e_c) − J(w − h e_c)`: the chosen score moves by `2hφ`, the
/// log-partition by `ln(Σ e^{s+hφ} / Σ e^{s−hφ})`, expanded so that nothing
/// cancels.
pub fn reference_difference(w: &[f64], examples: &[Example], c: usize, h: f64) -> f64 {
    let mut total = 0.0;
    for e in examples {
        let mut phi = Vec::new();
        let mut scores = Vec::new();
        for f in &e.candidates.features {
            let mut p = 0.0;
            let mut s = 0.0;
            for (i, v) in &f.entries {
                s += w[*i as usize] * v;
                if *i as usize == c {
                    p += v;
                }
            }
            phi.push(p);
            scores.push(s);
        }
        let top = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let a: Vec<f64> = scores.iter().map(|s| (s - top).exp()).collect();
        let up_minus_down: f64 = a
            .iter()
            .zip(&phi)
            .map(|(a, p)| a * ((h * p).exp() - (-h * p).exp()))
            .sum();
        let down: f64 = a.iter().zip(&phi).map(|(a, p)| a * (-h * p).exp()).sum();
        total += e.weight * (2.0 * h * phi[e.chosen] - (up_minus_down / down).ln_1p());
    }
    total
}

/// 25 to 50 decisions with 2 to 6 candidates, sparse features drawn from 400
/// coordinates, about a third with zero weight.
pub fn random_examples(rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<Example>) {
    let pool: Vec<u32> = (0..400).map(|_| rng.gen_range(0..FEATURE_DIM as u32)).collect();
    let mut examples = Vec::new();
    for _ in 0..rng.gen_range(25..50) {
        let k = rng.gen_range(2..7);
        let features: Vec<SparseVec> = (0..k)
            .map(|_| {
                let n = rng.gen_range(1..9);
                SparseVec::from_unsorted(
                    (0..n)
                        .map(|_| (pool[rng.gen_range(0..pool.len())], rng.gen_range(-1.0..1.0)))
                        .collect(),
                )
            })
            .collect();
        examples.push(Example {
            candidates: Candidates {
                actions: (0..k).map(|i| format!("a{i}")).collect(),
                features,
            },
            chosen: rng.gen_range(0..k),
            weight: if rng.gen_bool(0.3) {
                0.0
            } else {
                rng.gen_range(0.0..1.0)
            },
        });
    }
    let mut w = vec![0.0; FEATURE_DIM];
    for i in &pool {
        w[*i as usize] = rng.gen_range(-2.0..2.0);
    }
    (w, examples)
}

pub struct FdCheck {
    /// Relative gap between the library objective and the reference.
    pub value_error: f64,
    pub max_rel_error: f64,
    pub coordinates: usize,
}

/// Compares the analytic gradient on the dataset drawn from `seed` with
/// Richardson-extrapolated central differences of the reference objective
/// (steps 1e-3, 5e-4, 2.5e-4) on every active coordinate plus random inactive
/// ones, at least 200 in all.
pub fn fd_check(seed: u64) -> FdCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, examples) = random_examples(&mut rng);
    let value = evolgym::evol::objective_value(&w, &examples);
    let reference = reference_objective(&w, &examples);
    let g = objective_gradient(&w, &examples);
    let mut coords: BTreeSet<usize> = examples
        .iter()
        .flat_map(|e| {
            e.candidates
                .features
                .iter()
                .flat_map(|f| f.entries.iter().map(|(i, _)| *i as usize))
        })
        .collect();
    while coords.len() < 200 {
        coords.insert(rng.gen_range(0..FEATURE_DIM));
    }
    let h = 1e-3;
    let mut worst: f64 = 0.0;
    for &c in &coords {
        let quotient = |s: f64| reference_difference(&w, &examples, c, s) / (2.0 * s);
        let (d1, d2, d3) = (quotient(h), quotient(h / 2.0), quotient(h / 4.0));
        let fd = (16.0 * (4.0 * d3 - d2) / 3.0 - (4.0 * d2 - d1) / 3.0) / 15.0;
        let scale = fd.abs().max(g[c].abs());
        let err = if scale < 1e-8 {
            (fd - g[c]).abs()
        } else {
            (fd - g[c]).abs() / scale
        };
        worst = worst.max(err);
    }
    FdCheck {
        value_error: (value - reference).abs() / reference.abs().max(1.0),
        max_rel_error: worst,
        coordinates: coords.len(),
    }
}
