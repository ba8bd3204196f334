use serde::{Deserialize, Serialize};

use crate::gate::{gate_grad_unchecked, gate_loss_unchecked, GateParams};

use super::{same_len, DistillError};

const NORM_TOL: f64 = 1e-9;
const LOG_FLOOR: f64 = 1e-300;

/// A probability vector over a vocabulary (or a restricted support).
///
/// `new` requires strictly positive entries; `degraded` admits zeros, in which
/// case divergences floor log arguments at `1e-300`.
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution {
    probs: Vec<f64>,
}

impl Distribution {
    pub fn new(probs: Vec<f64>) -> Result<Self, DistillError> {
        Self::validated(probs, false)
    }

    pub fn degraded(probs: Vec<f64>) -> Result<Self, DistillError> {
        Self::validated(probs, true)
    }

    fn validated(probs: Vec<f64>, allow_zero: bool) -> Result<Self, DistillError> {
        if probs.is_empty() {
            return Err(DistillError::Empty("distribution"));
        }
        for (index, &value) in probs.iter().enumerate() {
            if !value.is_finite() {
                return Err(DistillError::NonFinite("distribution"));
            }
            let ok = if allow_zero { value >= 0.0 } else { value > 0.0 };
            if !ok {
                return Err(DistillError::NonPositiveEntry { index, value });
            }
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > NORM_TOL {
            return Err(DistillError::NotNormalized(total));
        }
        Ok(Self { probs })
    }

    /// Max-shifted softmax of a logit vector.
    pub fn from_logits(logits: &[f64]) -> Result<Self, DistillError> {
        if logits.iter().any(|z| !z.is_finite()) {
            return Err(DistillError::NonFinite("logits"));
        }
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        Self::degraded(exps.into_iter().map(|e| e / total).collect())
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    fn ln(&self, i: usize) -> f64 {
        self.probs[i].max(LOG_FLOOR).ln()
    }
}

fn kl(p: &Distribution, q: &Distribution) -> f64 {
    (0..p.len())
        .filter(|&i| p.probs[i] > 0.0)
        .map(|i| p.probs[i] * (p.ln(i) - q.ln(i)))
        .sum()
}

/// `D_KL(p_T ‖ p_S)`.
pub fn reverse_kl(p_teacher: &Distribution, p_student: &Distribution) -> Result<f64, DistillError> {
    same_len("teacher vs student vocabulary", p_teacher.len(), p_student.len())?;
    Ok(kl(p_teacher, p_student))
}

/// `D_KL(p_S ‖ p_T)`.
pub fn forward_kl(p_teacher: &Distribution, p_student: &Distribution) -> Result<f64, DistillError> {
    same_len("teacher vs student vocabulary", p_teacher.len(), p_student.len())?;
    Ok(kl(p_student, p_teacher))
}

/// Jensen–Shannon divergence (natural log).
pub fn jsd(p_teacher: &Distribution, p_student: &Distribution) -> Result<f64, DistillError> {
    same_len("teacher vs student vocabulary", p_teacher.len(), p_student.len())?;
    let mid = Distribution {
        probs: p_teacher
            .probs
            .iter()
            .zip(&p_student.probs)
            .map(|(a, b)| 0.5 * (a + b))
            .collect(),
    };
    Ok(0.5 * kl(p_teacher, &mid) + 0.5 * kl(p_student, &mid))
}

/// Indices of the teacher's `k` largest probabilities, ascending.
/// Ties prefer the lower index.
pub fn topk_support(teacher: &[f64], k: usize) -> Result<Vec<usize>, DistillError> {
    if k == 0 || k > teacher.len() {
        return Err(DistillError::TopKOutOfRange {
            k,
            vocab: teacher.len(),
        });
    }
    let mut order: Vec<usize> = (0..teacher.len()).collect();
    order.sort_by(|&a, &b| teacher[b].total_cmp(&teacher[a]).then(a.cmp(&b)));
    order.truncate(k);
    order.sort_unstable();
    Ok(order)
}

/// Restricts both distributions to the teacher's top-`k` support and renormalizes.
pub fn topk_renormalize(
    teacher: &Distribution,
    student: &Distribution,
    k: usize,
) -> Result<(Distribution, Distribution, Vec<usize>), DistillError> {
    same_len("teacher vs student vocabulary", teacher.len(), student.len())?;
    let support = topk_support(&teacher.probs, k)?;
    let restrict = |d: &Distribution| {
        let mass: f64 = support.iter().map(|&i| d.probs[i]).sum();
        Distribution {
            probs: support.iter().map(|&i| d.probs[i] / mass).collect(),
        }
    };
    Ok((restrict(teacher), restrict(student), support))
}

/// Per-token distillation objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Gated loss on the sampled token's gap.
    #[default]
    Gated,
    ReverseKl,
    ForwardKl,
    Jsd,
}

impl Objective {
    pub fn name(self) -> &'static str {
        match self {
            Objective::Gated => "gated",
            Objective::ReverseKl => "reverse_kl",
            Objective::ForwardKl => "forward_kl",
            Objective::Jsd => "jsd",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "gated" => Some(Objective::Gated),
            "reverse_kl" => Some(Objective::ReverseKl),
            "forward_kl" => Some(Objective::ForwardKl),
            "jsd" => Some(Objective::Jsd),
            _ => None,
        }
    }
}

/// Per-token loss and its gradient with respect to the student's logits.
///
/// `teacher_logp` and `student_logp` are normalized log-probabilities over the
/// same support; `token` indexes the sampled token within that support. The
/// returned gradient is over the same support (the student's log-partition is
/// taken over the support, so entries outside it receive nothing).
pub fn logit_grad(
    objective: Objective,
    gate: GateParams,
    teacher_logp: &[f64],
    student_logp: &[f64],
    token: usize,
) -> (f64, Vec<f64>) {
    let ps: Vec<f64> = student_logp.iter().map(|l| l.exp()).collect();
    match objective {
        Objective::Gated => {
            let delta = teacher_logp[token] - student_logp[token];
            let g = gate_grad_unchecked(delta, gate.tau_g());
            let mut grad: Vec<f64> = ps.iter().map(|p| g * p).collect();
            grad[token] -= g;
            (gate_loss_unchecked(delta, gate.tau_g()), grad)
        }
        Objective::ReverseKl => {
            let pt: Vec<f64> = teacher_logp.iter().map(|l| l.exp()).collect();
            let loss = pt
                .iter()
                .zip(teacher_logp.iter().zip(student_logp))
                .map(|(p, (lt, ls))| if *p > 0.0 { p * (lt - ls) } else { 0.0 })
                .sum();
            let grad = ps.iter().zip(&pt).map(|(s, t)| s - t).collect();
            (loss, grad)
        }
        Objective::ForwardKl => {
            let d: Vec<f64> = student_logp.iter().zip(teacher_logp).map(|(s, t)| s - t).collect();
            let loss: f64 = ps.iter().zip(&d).map(|(p, x)| p * x).sum();
            let grad = ps.iter().zip(&d).map(|(p, x)| p * (x - loss)).collect();
            (loss, grad)
        }
        Objective::Jsd => {
            let pt: Vec<f64> = teacher_logp.iter().map(|l| l.exp()).collect();
            let lm: Vec<f64> = pt.iter().zip(&ps).map(|(a, b)| (0.5 * (a + b)).ln()).collect();
            let loss: f64 = 0.5
                * pt
                    .iter()
                    .zip(teacher_logp.iter().zip(&lm))
                    .map(|(p, (l, m))| if *p > 0.0 { p * (l - m) } else { 0.0 })
                    .sum::<f64>()
                + 0.5
                    * ps
                        .iter()
                        .zip(student_logp.iter().zip(&lm))
                        .map(|(p, (l, m))| if *p > 0.0 { p * (l - m) } else { 0.0 })
                        .sum::<f64>();
            let h: Vec<f64> = student_logp.iter().zip(&lm).map(|(l, m)| 0.5 * (l - m)).collect();
            let mean: f64 = ps.iter().zip(&h).map(|(p, x)| p * x).sum();
            let grad = ps.iter().zip(&h).map(|(p, x)| p * (x - mean)).collect();
            (loss, grad)
        }
    }
}
