use crate::gate::{gate_grad_unchecked, gate_loss_unchecked, GateParams};

use super::{same_len, DistillError, GapSeries, Polarity};

/// `ℓ̄ = Σ m_t ℓ_gate(Δ_t) / (Σ m_t + ε)` on raw (unclipped) gaps.
pub fn per_teacher_gated_loss(gaps: &GapSeries, gate: GateParams, epsilon: f64) -> f64 {
    let num: f64 = gaps
        .deltas()
        .iter()
        .zip(gaps.mask())
        .filter(|(_, m)| **m)
        .map(|(d, _)| gate_loss_unchecked(*d, gate.tau_g()))
        .sum();
    num / gaps.normalizer(epsilon)
}

/// `Σ_k α_k ρ_k ℓ̄^{(k)}`, reduced in teacher-index order.
pub fn sgsd_loss(
    per_teacher_losses: &[f64],
    weights: &[f64],
    polarities: &[Polarity],
) -> Result<f64, DistillError> {
    same_len("losses vs weights", per_teacher_losses.len(), weights.len())?;
    same_len("losses vs polarities", per_teacher_losses.len(), polarities.len())?;
    Ok(per_teacher_losses
        .iter()
        .zip(weights)
        .zip(polarities)
        .map(|((l, a), r)| a * r.factor() * l)
        .sum())
}

/// Dense token credits `W_t^{(k)} = α_k ρ_k (m_t / Z) g_τ(Δ_t^{(k)})`.
///
/// `-∇_θ L = Σ_{k,t} W_t^{(k)} ∇_θ log p_S(y_t | ·)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenCredit {
    credits: Vec<Vec<f64>>,
}

impl TokenCredit {
    pub fn per_teacher(&self) -> &[Vec<f64>] {
        &self.credits
    }

    pub fn teacher(&self, k: usize) -> &[f64] {
        &self.credits[k]
    }

    /// `Σ_k W_t^{(k)}` per position.
    pub fn position_totals(&self) -> Vec<f64> {
        let len = self.credits.first().map_or(0, Vec::len);
        (0..len)
            .map(|t| self.credits.iter().map(|row| row[t]).sum())
            .collect()
    }
}

pub fn token_credits(
    gaps: &[Vec<f64>],
    mask: &[bool],
    weights: &[f64],
    polarities: &[Polarity],
    gate: GateParams,
    epsilon: f64,
) -> Result<TokenCredit, DistillError> {
    same_len("teachers vs weights", gaps.len(), weights.len())?;
    same_len("teachers vs polarities", gaps.len(), polarities.len())?;
    for row in gaps {
        same_len("gaps vs mask", row.len(), mask.len())?;
        if row.iter().any(|d| !d.is_finite()) {
            return Err(DistillError::NonFinite("gaps"));
        }
    }
    let z = mask.iter().filter(|m| **m).count() as f64 + epsilon;
    let credits = gaps
        .iter()
        .zip(weights)
        .zip(polarities)
        .map(|((row, alpha), rho)| {
            let scale = alpha * rho.factor() / z;
            row.iter()
                .zip(mask)
                .map(|(d, m)| {
                    if *m && scale != 0.0 {
                        scale * gate_grad_unchecked(*d, gate.tau_g())
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    Ok(TokenCredit { credits })
}
