//! Token-gap credit assignment for skill-conditioned teachers.
//!
//! A teacher scores the student's rollout; the per-token log-probability gaps
//! feed three things: a robust support score that decides the teacher's
//! polarity against the verifier outcome, a gated per-teacher loss, and the
//! dense policy-gradient coefficients that the loss induces.

mod divergence;
mod loss;
mod support;

use thiserror::Error;

pub use divergence::{
    forward_kl, jsd, logit_grad, reverse_kl, topk_renormalize, topk_support, Distribution,
    Objective,
};
pub use loss::{per_teacher_gated_loss, sgsd_loss, token_credits, TokenCredit};
pub use support::{
    plain_support, polarity, robust_support, teacher_weights, token_gaps, GapSeries, Outcome,
    Polarity, RobustParams, TeacherVerdict,
};

/// Denominator guard used wherever a masked token count is normalized.
pub const DEFAULT_EPSILON: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DistillError {
    #[error("length mismatch: {what} ({left} vs {right})")]
    LengthMismatch {
        what: &'static str,
        left: usize,
        right: usize,
    },
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("log-probability must be <= 0, got {0}")]
    PositiveLogProb(f64),
    #[error("invalid parameter {name}: {value}")]
    InvalidParam { name: &'static str, value: f64 },
    #[error("invalid outcome {0}; expected -1 or +1")]
    InvalidOutcome(i64),
    #[error("distribution sums to {0}, expected 1")]
    NotNormalized(f64),
    #[error("distribution entry {index} is {value}; entries must be positive")]
    NonPositiveEntry { index: usize, value: f64 },
    #[error("top-k size {k} outside 1..={vocab}")]
    TopKOutOfRange { k: usize, vocab: usize },
}

pub(crate) fn same_len(what: &'static str, left: usize, right: usize) -> Result<(), DistillError> {
    if left == right {
        Ok(())
    } else {
        Err(DistillError::LengthMismatch { what, left, right })
    }
}
