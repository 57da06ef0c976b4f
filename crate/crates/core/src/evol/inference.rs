//! Success-as-evidence quantities on a finite trajectory space: the log
//! evidence `ln Σ π(τ) p(O=1|τ)`, the variational bound, and its maximiser.

use thiserror::Error;

const SUM_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InferenceError {
    #[error("probabilities sum to {0}, not 1")]
    NotNormalized(f64),
    #[error("length mismatch: {0} trajectories but {1} values")]
    Length(usize, usize),
    #[error("value {value} at index {index} is outside [0, 1]")]
    OutOfRange { index: usize, value: f64 },
    /// Success is impossible under the policy, so the log evidence is −∞.
    #[error("success has zero probability")]
    ZeroEvidence,
    #[error("q puts mass on trajectory {0}, which the policy never produces")]
    Support(usize),
}

/// A complete finite set of trajectories with policy probabilities and
/// success likelihoods.
#[derive(Debug, Clone, PartialEq)]
pub struct EnumeratedSpace {
    pi: Vec<f64>,
    p: Vec<f64>,
}

fn check_unit(values: &[f64]) -> Result<(), InferenceError> {
    for (index, &value) in values.iter().enumerate() {
        if !(0.0..=1.0).contains(&value) {
            return Err(InferenceError::OutOfRange { index, value });
        }
    }
    Ok(())
}

fn check_distribution(values: &[f64]) -> Result<(), InferenceError> {
    check_unit(values)?;
    let s: f64 = values.iter().sum();
    if (s - 1.0).abs() > SUM_TOLERANCE {
        return Err(InferenceError::NotNormalized(s));
    }
    Ok(())
}

impl EnumeratedSpace {
    pub fn new(pi: Vec<f64>, p: Vec<f64>) -> Result<Self, InferenceError> {
        if pi.len() != p.len() {
            return Err(InferenceError::Length(pi.len(), p.len()));
        }
        check_distribution(&pi)?;
        check_unit(&p)?;
        Ok(Self { pi, p })
    }

    pub fn len(&self) -> usize {
        self.pi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pi.is_empty()
    }

    pub fn pi(&self) -> &[f64] {
        &self.pi
    }

    pub fn p(&self) -> &[f64] {
        &self.p
    }

    fn evidence(&self) -> f64 {
        self.pi.iter().zip(&self.p).map(|(a, b)| a * b).sum()
    }
}

pub fn log_evidence(space: &EnumeratedSpace) -> Result<f64, InferenceError> {
    let z = space.evidence();
    if z <= 0.0 {
        return Err(InferenceError::ZeroEvidence);
    }
    Ok(z.ln())
}

/// `E_q[ln p(O=1|τ)] − KL(q ‖ π)`. May be −∞ when q covers a trajectory
/// that never succeeds.
pub fn elbo(q: &[f64], space: &EnumeratedSpace) -> Result<f64, InferenceError> {
    if q.len() != space.len() {
        return Err(InferenceError::Length(space.len(), q.len()));
    }
    check_distribution(q)?;
    let mut total = 0.0;
    for (i, &qi) in q.iter().enumerate() {
        if qi == 0.0 {
            continue;
        }
        if space.pi[i] == 0.0 {
            return Err(InferenceError::Support(i));
        }
        total += qi * (space.p[i].ln() - (qi / space.pi[i]).ln());
    }
    Ok(total)
}

/// The posterior `q(τ) ∝ p(O=1|τ) π(τ)`, which makes the bound tight.
pub fn optimal_q(space: &EnumeratedSpace) -> Result<Vec<f64>, InferenceError> {
    let z = space.evidence();
    if z <= 0.0 {
        return Err(InferenceError::ZeroEvidence);
    }
    Ok(space.pi.iter().zip(&space.p).map(|(a, b)| a * b / z).collect())
}
