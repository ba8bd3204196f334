//! Loss and dense gradient for one scored rollout against a pool of teachers.

use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::distill::{
    logit_grad, per_teacher_gated_loss, sgsd_loss, topk_support, GapSeries, Objective, Outcome, Polarity,
    RobustParams, TeacherVerdict,
};
use crate::gate::GateParams;
use crate::policy::{ContextFeatures, ToyPolicy};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSettings {
    pub objective: Objective,
    pub gate: GateParams,
    pub robust: RobustParams,
    /// Drop the terminator from the effective tokens.
    pub mask_end: bool,
    /// Polarity ignores the outcome: `+1` outside the neutral zone.
    pub outcome_blind: bool,
    /// Teacher top-k support per position; 0 keeps the full vocabulary.
    pub topk_support: usize,
}

/// Per-teacher diagnostics for one rollout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TeacherRecord {
    pub verdict: TeacherVerdict,
    /// `ℓ̄` before weighting and polarity.
    pub loss: f64,
    pub effective_tokens: usize,
    /// Positions whose sampled token fell outside the teacher's top-k.
    pub out_of_support: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemStep {
    pub loss: f64,
    /// Dense `∇_θ L` for this rollout.
    pub grad: Vec<f64>,
    pub teachers: Vec<TeacherRecord>,
}

fn logsumexp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    m + xs.map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Both distributions at one position, restricted to `support` and renormalized.
struct Position {
    support: Vec<usize>,
    teacher: Vec<f64>,
    student: Vec<f64>,
    /// Index of the sampled token within `support`, if present.
    token: Option<usize>,
}

fn restrict(teacher: &[f64], student: &[f64], token: usize, k: usize) -> Result<Position, TrainError> {
    let support: Vec<usize> = if k == 0 {
        (0..teacher.len()).collect()
    } else {
        let probs: Vec<f64> = teacher.iter().map(|l| l.exp()).collect();
        topk_support(&probs, k)?
    };
    let renorm = |lp: &[f64]| {
        let z = logsumexp(support.iter().map(|&i| lp[i]));
        support.iter().map(|&i| lp[i] - z).collect::<Vec<f64>>()
    };
    Ok(Position {
        teacher: if k == 0 { teacher.to_vec() } else { renorm(teacher) },
        student: if k == 0 { student.to_vec() } else { renorm(student) },
        token: support.iter().position(|&i| i == token),
        support,
    })
}

/// Scores `tokens` under every teacher context, decides polarities and
/// returns `L = Σ_k α_k ρ_k ℓ̄_k` with its gradient in the student's parameters.
///
/// `teacher` is the stop-gradient snapshot. `polarities`, when given, replaces
/// the computed polarities (used to differentiate at a fixed decision).
#[allow(clippy::too_many_arguments)]
pub fn distill_problem(
    student: &ToyPolicy,
    teacher: &ToyPolicy,
    student_ctx: &ContextFeatures,
    teacher_ctxs: &[ContextFeatures],
    weights: &[f64],
    tokens: &[usize],
    outcome: Outcome,
    settings: &StepSettings,
    polarities: Option<&[Polarity]>,
) -> Result<ProblemStep, TrainError> {
    if !student_ctx.is_student() {
        return Err(TrainError::PrivilegedStudentContext);
    }
    if teacher_ctxs.len() != weights.len() || polarities.is_some_and(|p| p.len() != weights.len()) {
        return Err(TrainError::World("teacher contexts, weights and polarities differ in length".into()));
    }
    let student_lp = student.score_distributions(student_ctx, tokens)?;
    let end = student.shape().end_token;
    let base_mask: Vec<bool> = tokens.iter().map(|&y| !settings.mask_end || Some(y) != end).collect();

    let mut grad = vec![0.0; student.params().len()];
    let mut records = Vec::with_capacity(teacher_ctxs.len());
    let mut losses = Vec::with_capacity(teacher_ctxs.len());
    let mut chosen = Vec::with_capacity(teacher_ctxs.len());
    for (k, (ctx, &alpha)) in teacher_ctxs.iter().zip(weights).enumerate() {
        let teacher_lp = teacher.score_distributions(ctx, tokens)?;
        let positions = tokens
            .iter()
            .enumerate()
            .map(|(t, &y)| restrict(&teacher_lp[t], &student_lp[t], y, settings.topk_support))
            .collect::<Result<Vec<_>, _>>()?;
        let mask: Vec<bool> = base_mask.iter().zip(&positions).map(|(m, p)| *m && p.token.is_some()).collect();
        let out_of_support = positions.iter().filter(|p| p.token.is_none()).count();
        let deltas: Vec<f64> = positions
            .iter()
            .map(|p| p.token.map_or(0.0, |j| p.teacher[j] - p.student[j]))
            .collect();
        let gaps = GapSeries::new(deltas, mask)?;
        let mut verdict = TeacherVerdict::assess(&gaps, outcome, &settings.robust, alpha);
        if settings.outcome_blind {
            verdict.polarity = if verdict.robust_support.abs() > settings.robust.epsilon_a {
                Polarity::Distill
            } else {
                Polarity::Ignore
            };
        }
        if let Some(p) = polarities {
            verdict.polarity = p[k];
        }

        let z = gaps.normalizer(settings.robust.epsilon);
        let scale = alpha * verdict.polarity.factor() / z;
        let mut loss = 0.0;
        for (t, p) in positions.iter().enumerate() {
            let Some(j) = p.token.filter(|_| gaps.mask()[t]) else {
                continue;
            };
            let (l, dl) = logit_grad(settings.objective, settings.gate, &p.teacher, &p.student, j);
            loss += l;
            if scale != 0.0 {
                let mut full = vec![0.0; student.shape().vocab_size];
                for (&i, d) in p.support.iter().zip(dl) {
                    full[i] = d;
                }
                student.accumulate_logit_grad(student_ctx, tokens, t, &full, scale, &mut grad)?;
            }
        }
        let loss = if settings.objective == Objective::Gated {
            per_teacher_gated_loss(&gaps, settings.gate, settings.robust.epsilon)
        } else {
            loss / z
        };
        losses.push(loss);
        chosen.push(verdict.polarity);
        records.push(TeacherRecord {
            verdict,
            loss,
            effective_tokens: gaps.effective_count(),
            out_of_support,
        });
    }
    let loss = if records.is_empty() { 0.0 } else { sgsd_loss(&losses, weights, &chosen)? };
    Ok(ProblemStep {
        loss,
        grad,
        teachers: records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distill::token_credits;
    use crate::policy::PolicyShape;

    fn shape() -> PolicyShape {
        PolicyShape {
            vocab_size: 5,
            end_token: Some(4),
            problem_buckets: 3,
            tag_buckets: 4,
            t_max: 4,
        }
    }

    fn settings() -> StepSettings {
        StepSettings {
            objective: Objective::Gated,
            gate: GateParams::default(),
            robust: RobustParams::default(),
            mask_end: true,
            outcome_blind: false,
            topk_support: 0,
        }
    }

    fn setup() -> (ToyPolicy, ContextFeatures, Vec<ContextFeatures>, Vec<usize>) {
        let p = ToyPolicy::random(shape(), 4, 1.0).unwrap();
        let s = ContextFeatures::student(1);
        let t = vec![ContextFeatures::teacher(1, vec![0, 2]), ContextFeatures::teacher(1, vec![3])];
        (p, s, t, vec![2, 0, 3, 4])
    }

    #[test]
    fn gradient_matches_credit_assembly() {
        let (p, s, t, y) = setup();
        let w = [0.7, 0.3];
        let step = distill_problem(&p, &p, &s, &t, &w, &y, Outcome::Failure, &settings(), None).unwrap();
        // −∇L = Σ W ∇log p_S
        let gaps: Vec<Vec<f64>> = t
            .iter()
            .map(|c| {
                let lt = p.score_sequence(c, &y).unwrap();
                let ls = p.score_sequence(&s, &y).unwrap();
                lt.iter().zip(ls).map(|(a, b)| a - b).collect()
            })
            .collect();
        let mask = [true, true, true, false];
        let pol: Vec<Polarity> = step.teachers.iter().map(|r| r.verdict.polarity).collect();
        let credits = token_credits(&gaps, &mask, &w, &pol, GateParams::default(), 1e-8).unwrap();
        let mut assembled = vec![0.0; p.params().len()];
        for k in 0..t.len() {
            for (pos, c) in credits.teacher(k).iter().enumerate() {
                for (a, g) in assembled.iter_mut().zip(p.logprob_grad(&s, &y, pos).unwrap()) {
                    *a -= c * g;
                }
            }
        }
        for (a, b) in assembled.iter().zip(&step.grad) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn terminator_masking_and_zero_teachers() {
        let (p, s, t, y) = setup();
        let r = distill_problem(&p, &p, &s, &t, &[0.5, 0.5], &y, Outcome::Success, &settings(), None).unwrap();
        assert!(r.teachers.iter().all(|x| x.effective_tokens == 3));
        let open = StepSettings { mask_end: false, ..settings() };
        let r = distill_problem(&p, &p, &s, &t, &[0.5, 0.5], &y, Outcome::Success, &open, None).unwrap();
        assert!(r.teachers.iter().all(|x| x.effective_tokens == 4));
        let r = distill_problem(&p, &p, &s, &[], &[], &y, Outcome::Success, &settings(), None).unwrap();
        assert_eq!(r.loss, 0.0);
        assert!(r.grad.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn ignored_teachers_contribute_nothing() {
        let (p, s, t, y) = setup();
        let ignore = [Polarity::Ignore, Polarity::Ignore];
        let r = distill_problem(&p, &p, &s, &t, &[0.5, 0.5], &y, Outcome::Success, &settings(), Some(&ignore)).unwrap();
        assert_eq!(r.loss, 0.0);
        assert!(r.grad.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn privileged_student_context_is_rejected() {
        let (p, _, t, y) = setup();
        let e = distill_problem(&p, &p, &t[0], &t, &[0.5, 0.5], &y, Outcome::Success, &settings(), None);
        assert!(matches!(e, Err(TrainError::PrivilegedStudentContext)));
    }

    #[test]
    fn divergence_objectives_match_finite_differences() {
        let (p, s, t, y) = setup();
        let fixed = [Polarity::Distill, Polarity::Reverse];
        for objective in [Objective::ReverseKl, Objective::ForwardKl, Objective::Jsd, Objective::Gated] {
            for k in [0, 3] {
                let st = StepSettings { objective, topk_support: k, ..settings() };
                // frozen teacher so only the student moves
                let teacher = p.clone();
                let r = distill_problem(&p, &teacher, &s, &t, &[0.6, 0.4], &y, Outcome::Success, &st, Some(&fixed)).unwrap();
                let h = 1e-6;
                for i in (0..p.params().len()).step_by(7) {
                    let mut plus = p.clone();
                    plus.params_mut()[i] += h;
                    let mut minus = p.clone();
                    minus.params_mut()[i] -= h;
                    let lp = distill_problem(&plus, &teacher, &s, &t, &[0.6, 0.4], &y, Outcome::Success, &st, Some(&fixed))
                        .unwrap()
                        .loss;
                    let lm = distill_problem(&minus, &teacher, &s, &t, &[0.6, 0.4], &y, Outcome::Success, &st, Some(&fixed))
                        .unwrap()
                        .loss;
                    let fd = (lp - lm) / (2.0 * h);
                    assert!((fd - r.grad[i]).abs() < 1e-6, "{objective:?} k={k} i={i}: {fd} vs {}", r.grad[i]);
                }
            }
        }
    }
}
