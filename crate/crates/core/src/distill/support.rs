use serde::{Deserialize, Serialize};

use super::{same_len, DistillError, DEFAULT_EPSILON};

/// Per-token teacher–student gaps over one rollout, with the effective-token mask.
#[derive(Debug, Clone, PartialEq)]
pub struct GapSeries {
    deltas: Vec<f64>,
    mask: Vec<bool>,
}

impl GapSeries {
    pub fn new(deltas: Vec<f64>, mask: Vec<bool>) -> Result<Self, DistillError> {
        if deltas.is_empty() {
            return Err(DistillError::Empty("gap series"));
        }
        same_len("gaps vs mask", deltas.len(), mask.len())?;
        if deltas.iter().any(|d| !d.is_finite()) {
            return Err(DistillError::NonFinite("gaps"));
        }
        Ok(Self { deltas, mask })
    }

    /// Every position effective.
    pub fn unmasked(deltas: Vec<f64>) -> Result<Self, DistillError> {
        let mask = vec![true; deltas.len()];
        Self::new(deltas, mask)
    }

    pub fn deltas(&self) -> &[f64] {
        &self.deltas
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn len(&self) -> usize {
        self.deltas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.deltas.is_empty()
    }

    pub fn effective_count(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }

    /// `Z = Σ_t m_t + ε`.
    pub fn normalizer(&self, epsilon: f64) -> f64 {
        self.effective_count() as f64 + epsilon
    }
}

/// Elementwise `log p_T(y_t) - log p_S(y_t)` on the sampled tokens.
pub fn token_gaps(teacher_logprobs: &[f64], student_logprobs: &[f64]) -> Result<Vec<f64>, DistillError> {
    same_len("teacher vs student log-probs", teacher_logprobs.len(), student_logprobs.len())?;
    for &v in teacher_logprobs.iter().chain(student_logprobs) {
        if !v.is_finite() {
            return Err(DistillError::NonFinite("log-probs"));
        }
        if v > 0.0 {
            return Err(DistillError::PositiveLogProb(v));
        }
    }
    Ok(teacher_logprobs
        .iter()
        .zip(student_logprobs)
        .map(|(t, s)| t - s)
        .collect())
}

/// Mean gap over all tokens, mask ignored.
pub fn plain_support(gaps: &GapSeries) -> f64 {
    gaps.deltas.iter().sum::<f64>() / gaps.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobustParams {
    /// Clip bound; `f64::INFINITY` disables clipping.
    pub c_delta: f64,
    /// Neutral-zone half width.
    pub epsilon_a: f64,
    /// Denominator guard.
    pub epsilon: f64,
}

impl Default for RobustParams {
    fn default() -> Self {
        Self {
            c_delta: 3.0,
            epsilon_a: 0.05,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

impl RobustParams {
    pub fn new(c_delta: f64, epsilon_a: f64, epsilon: f64) -> Result<Self, DistillError> {
        let p = Self {
            c_delta,
            epsilon_a,
            epsilon,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), DistillError> {
        if !(self.c_delta > 0.0) {
            return Err(DistillError::InvalidParam {
                name: "c_delta",
                value: self.c_delta,
            });
        }
        if !(self.epsilon_a >= 0.0 && self.epsilon_a.is_finite()) {
            return Err(DistillError::InvalidParam {
                name: "epsilon_a",
                value: self.epsilon_a,
            });
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(DistillError::InvalidParam {
                name: "epsilon",
                value: self.epsilon,
            });
        }
        Ok(())
    }
}

/// Masked mean of clipped gaps: `Σ m_t clip(Δ_t) / (Σ m_t + ε)`.
pub fn robust_support(gaps: &GapSeries, params: &RobustParams) -> f64 {
    let c = params.c_delta;
    let num: f64 = gaps
        .deltas
        .iter()
        .zip(&gaps.mask)
        .filter(|(_, m)| **m)
        .map(|(d, _)| d.clamp(-c, c))
        .sum();
    num / gaps.normalizer(params.epsilon)
}

/// Verifier outcome of a rollout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outcome {
    Success,
    Failure,
}

impl Outcome {
    pub fn from_reward(r: i64) -> Result<Self, DistillError> {
        match r {
            1 => Ok(Outcome::Success),
            -1 => Ok(Outcome::Failure),
            other => Err(DistillError::InvalidOutcome(other)),
        }
    }

    pub fn reward(self) -> i64 {
        match self {
            Outcome::Success => 1,
            Outcome::Failure => -1,
        }
    }

    pub fn is_success(self) -> bool {
        self == Outcome::Success
    }
}

/// Direction in which a teacher is learned from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Polarity {
    /// Stance contradicts the outcome.
    Reverse,
    /// Support inside the neutral zone.
    Ignore,
    /// Stance agrees with the outcome.
    Distill,
}

impl Polarity {
    pub fn from_sign(s: i64) -> Self {
        match s.signum() {
            1 => Polarity::Distill,
            -1 => Polarity::Reverse,
            _ => Polarity::Ignore,
        }
    }

    pub fn value(self) -> i64 {
        match self {
            Polarity::Reverse => -1,
            Polarity::Ignore => 0,
            Polarity::Distill => 1,
        }
    }

    pub fn factor(self) -> f64 {
        self.value() as f64
    }
}

fn sgn(x: f64) -> i64 {
    if x > 0.0 {
        1
    } else if x < 0.0 {
        -1
    } else {
        0
    }
}

/// `ρ = sgn_out(r)·sgn(ã)` outside the neutral zone `|ã| <= ε_a`, else 0.
///
/// | outcome | support | ρ  | reading                 |
/// |---------|---------|----|-------------------------|
/// | success | > 0     | +1 | helpful teacher         |
/// | failure | < 0     | +1 | warning teacher         |
/// | success | < 0     | -1 | over-suppressive teacher|
/// | failure | > 0     | -1 | misleading teacher      |
pub fn polarity(outcome: Outcome, robust_support: f64, epsilon_a: f64) -> Polarity {
    if robust_support.abs() <= epsilon_a {
        return Polarity::Ignore;
    }
    Polarity::from_sign(outcome.reward() * sgn(robust_support))
}

/// Softmax over the averaged skill/mistake retrieval scores of each pair.
pub fn teacher_weights(skill_scores: &[f64], mistake_scores: &[f64]) -> Result<Vec<f64>, DistillError> {
    if skill_scores.is_empty() {
        return Err(DistillError::Empty("retrieval scores"));
    }
    same_len("skill vs mistake scores", skill_scores.len(), mistake_scores.len())?;
    if skill_scores.iter().chain(mistake_scores).any(|s| !s.is_finite()) {
        return Err(DistillError::NonFinite("retrieval scores"));
    }
    let avg: Vec<f64> = skill_scores
        .iter()
        .zip(mistake_scores)
        .map(|(g, e)| 0.5 * (g + e))
        .collect();
    let max = avg.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = avg.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// Everything decided about one teacher on one rollout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TeacherVerdict {
    pub plain_support: f64,
    pub robust_support: f64,
    pub polarity: Polarity,
    pub weight: f64,
}

impl TeacherVerdict {
    pub fn assess(gaps: &GapSeries, outcome: Outcome, params: &RobustParams, weight: f64) -> Self {
        let robust = robust_support(gaps, params);
        Self {
            plain_support: plain_support(gaps),
            robust_support: robust,
            polarity: polarity(outcome, robust, params.epsilon_a),
            weight,
        }
    }
}
