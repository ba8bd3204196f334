//! Bounded gated loss on teacher–student log-probability gaps.
//!
//! The loss is `log 2 - log(1 + exp(-Δ²/(2τ)))`: zero when the two policies
//! agree, quadratic for small gaps and saturating at `log 2` for extreme gaps.
//! Its derivative `Δ / (τ (1 + exp(Δ²/(2τ))))` carries the token credit and is
//! bounded by `1/sqrt(e τ)`.
//!
//! Both functions only ever evaluate `exp(-Δ²/(2τ)) <= 1`, so they stay finite
//! for arbitrarily large gaps.

use std::f64::consts::{E, LN_2};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GateError {
    #[error("gate width tau_g must be positive and finite, got {0}")]
    InvalidWidth(f64),
    #[error("gap must be finite, got {0}")]
    NonFiniteGap(f64),
}

/// Width of the informative region of the gate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateParams {
    tau_g: f64,
}

impl GateParams {
    pub fn new(tau_g: f64) -> Result<Self, GateError> {
        if tau_g.is_finite() && tau_g > 0.0 {
            Ok(Self { tau_g })
        } else {
            Err(GateError::InvalidWidth(tau_g))
        }
    }

    pub fn tau_g(&self) -> f64 {
        self.tau_g
    }
}

impl Default for GateParams {
    fn default() -> Self {
        Self { tau_g: 1.0 }
    }
}

fn check(delta: f64) -> Result<(), GateError> {
    if delta.is_finite() {
        Ok(())
    } else {
        Err(GateError::NonFiniteGap(delta))
    }
}

/// Gated token loss `ℓ_gate(Δ)`, in `[0, log 2)`.
pub fn gate_loss(delta: f64, params: GateParams) -> Result<f64, GateError> {
    check(delta)?;
    Ok(gate_loss_unchecked(delta, params.tau_g))
}

/// Gate derivative `g_τ(Δ) = ∂ℓ_gate/∂Δ`; odd, with the sign of `Δ`.
pub fn gate_grad(delta: f64, params: GateParams) -> Result<f64, GateError> {
    check(delta)?;
    Ok(gate_grad_unchecked(delta, params.tau_g))
}

/// Uniform bound `1/sqrt(e τ)` on `|g_τ|`, attained at `|Δ| = sqrt(τ)`.
pub fn gate_grad_bound(params: GateParams) -> f64 {
    1.0 / (E * params.tau_g).sqrt()
}

// -log((1 + e^{-x}) / 2) written as -log1p(expm1(-x) / 2) keeps full relative
// precision as x -> 0 and tends to log 2 as x -> inf.
pub(crate) fn gate_loss_unchecked(delta: f64, tau_g: f64) -> f64 {
    let x = delta * delta / (2.0 * tau_g);
    let v = -(0.5 * (-x).exp_m1()).ln_1p();
    v.clamp(0.0, LN_2)
}

pub(crate) fn gate_grad_unchecked(delta: f64, tau_g: f64) -> f64 {
    let x = delta * delta / (2.0 * tau_g);
    // logistic(-x) = e^{-x} / (1 + e^{-x})
    let w = (-x).exp();
    delta / tau_g * (w / (1.0 + w))
}
