//! Context-conditioned bigram softmax policy.
//!
//! Logits for the next token are the previous token's transition row plus a
//! sum of bias rows selected by the context: a global row, the problem's
//! bucket row, and one cross row per conditioning tag (tag bucket × problem
//! bucket). Student contexts carry no tags.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hash::fnv1a;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("invalid policy shape: {0}")]
    InvalidShape(String),
    #[error("token {token} outside vocabulary of size {vocab}")]
    TokenOutOfRange { token: usize, vocab: usize },
    #[error("position {position} outside sequence of length {len}")]
    InvalidPosition { position: usize, len: usize },
    #[error("bucket {bucket} outside 0..{count}")]
    BucketOutOfRange { bucket: usize, count: usize },
    #[error("parameter dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("rollouts must be sampled from a student context (found {0} conditioning tags)")]
    TeacherContext(usize),
    #[error("invalid learning rate {0}")]
    InvalidLearningRate(f64),
    #[error("invalid ema decay {0}; expected a value in [0, 1)")]
    InvalidDecay(f64),
    #[error("periodic teacher interval must be positive")]
    ZeroInterval,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyShape {
    pub vocab_size: usize,
    /// Sampling stops after emitting this token.
    pub end_token: Option<usize>,
    pub problem_buckets: usize,
    pub tag_buckets: usize,
    pub t_max: usize,
}

impl PolicyShape {
    fn validate(&self) -> Result<(), PolicyError> {
        let bad = |m: &str| Err(PolicyError::InvalidShape(m.to_string()));
        if self.vocab_size == 0 {
            return bad("vocabulary is empty");
        }
        if self.problem_buckets == 0 || self.tag_buckets == 0 {
            return bad("bucket counts must be positive");
        }
        if self.t_max == 0 {
            return bad("t_max must be positive");
        }
        if let Some(e) = self.end_token {
            if e >= self.vocab_size {
                return bad("end token outside vocabulary");
            }
        }
        Ok(())
    }

    /// Rows of the transition table: one per token plus the start row.
    pub fn transition_rows(&self) -> usize {
        self.vocab_size + 1
    }

    /// Rows of the bias table: global, per-problem, and tag × problem cross rows.
    pub fn bias_rows(&self) -> usize {
        1 + self.problem_buckets + self.tag_buckets * self.problem_buckets
    }

    pub fn param_count(&self) -> usize {
        (self.transition_rows() + self.bias_rows()) * self.vocab_size
    }

    pub fn problem_bucket(&self, problem_text: &str) -> usize {
        (fnv1a(problem_text.as_bytes()) % self.problem_buckets as u64) as usize
    }

    pub fn tag_bucket(&self, tag: &str) -> usize {
        (fnv1a(tag.as_bytes()) % self.tag_buckets as u64) as usize
    }

    pub fn problem_row(&self, problem_bucket: usize) -> usize {
        1 + problem_bucket
    }

    pub fn cross_row(&self, tag_bucket: usize, problem_bucket: usize) -> usize {
        1 + self.problem_buckets + tag_bucket * self.problem_buckets + problem_bucket
    }
}

/// Bucketed prompt encoding.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ContextFeatures {
    pub problem_bucket: usize,
    /// Tag buckets of the one skill–mistake pair in a teacher prompt; empty for students.
    pub tag_buckets: Vec<usize>,
}

impl ContextFeatures {
    pub fn student(problem_bucket: usize) -> Self {
        Self {
            problem_bucket,
            tag_buckets: Vec::new(),
        }
    }

    pub fn teacher(problem_bucket: usize, tag_buckets: Vec<usize>) -> Self {
        Self {
            problem_bucket,
            tag_buckets,
        }
    }

    pub fn for_problem(shape: &PolicyShape, problem_text: &str) -> Self {
        Self::student(shape.problem_bucket(problem_text))
    }

    pub fn with_tags<S: AsRef<str>>(shape: &PolicyShape, problem_text: &str, tags: &[S]) -> Self {
        Self::teacher(
            shape.problem_bucket(problem_text),
            tags.iter().map(|t| shape.tag_bucket(t.as_ref())).collect(),
        )
    }

    pub fn is_student(&self) -> bool {
        self.tag_buckets.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub tokens: Vec<usize>,
    pub logprobs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyPolicy {
    shape: PolicyShape,
    params: Vec<f64>,
}

fn log_softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
    z.iter().map(|x| x - lse).collect()
}

impl ToyPolicy {
    pub fn zeros(shape: PolicyShape) -> Result<Self, PolicyError> {
        shape.validate()?;
        Ok(Self {
            params: vec![0.0; shape.param_count()],
            shape,
        })
    }

    /// Every parameter drawn uniformly from `[-init_scale, init_scale]`.
    pub fn random(shape: PolicyShape, seed: u64, init_scale: f64) -> Result<Self, PolicyError> {
        let mut p = Self::zeros(shape)?;
        if init_scale > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for v in &mut p.params {
                *v = rng.gen_range(-init_scale..=init_scale);
            }
        }
        Ok(p)
    }

    pub fn from_params(shape: PolicyShape, params: Vec<f64>) -> Result<Self, PolicyError> {
        shape.validate()?;
        if params.len() != shape.param_count() {
            return Err(PolicyError::DimensionMismatch {
                expected: shape.param_count(),
                got: params.len(),
            });
        }
        Ok(Self { shape, params })
    }

    pub fn shape(&self) -> &PolicyShape {
        &self.shape
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn transition_index(&self, prev: Option<usize>, next: usize) -> usize {
        let row = prev.unwrap_or(self.shape.vocab_size);
        row * self.shape.vocab_size + next
    }

    fn bias_index(&self, row: usize, next: usize) -> usize {
        (self.shape.transition_rows() + row) * self.shape.vocab_size + next
    }

    /// Adds `amount` to the transition logit `prev → next` (`None` is the start row).
    pub fn add_transition(&mut self, prev: Option<usize>, next: usize, amount: f64) {
        let i = self.transition_index(prev, next);
        self.params[i] += amount;
    }

    /// Adds `amount` to one entry of a bias row.
    pub fn add_bias(&mut self, row: usize, next: usize, amount: f64) {
        let i = self.bias_index(row, next);
        self.params[i] += amount;
    }

    fn check_context(&self, ctx: &ContextFeatures) -> Result<(), PolicyError> {
        let s = &self.shape;
        if ctx.problem_bucket >= s.problem_buckets {
            return Err(PolicyError::BucketOutOfRange {
                bucket: ctx.problem_bucket,
                count: s.problem_buckets,
            });
        }
        if let Some(&b) = ctx.tag_buckets.iter().find(|b| **b >= s.tag_buckets) {
            return Err(PolicyError::BucketOutOfRange {
                bucket: b,
                count: s.tag_buckets,
            });
        }
        Ok(())
    }

    fn check_tokens(&self, tokens: &[usize]) -> Result<(), PolicyError> {
        match tokens.iter().find(|t| **t >= self.shape.vocab_size) {
            Some(&token) => Err(PolicyError::TokenOutOfRange {
                token,
                vocab: self.shape.vocab_size,
            }),
            None => Ok(()),
        }
    }

    fn active_rows(&self, ctx: &ContextFeatures) -> Vec<usize> {
        let mut rows = vec![0, self.shape.problem_row(ctx.problem_bucket)];
        rows.extend(
            ctx.tag_buckets
                .iter()
                .map(|&t| self.shape.cross_row(t, ctx.problem_bucket)),
        );
        rows
    }

    fn logits_unchecked(&self, rows: &[usize], prev: Option<usize>) -> Vec<f64> {
        let v = self.shape.vocab_size;
        let start = self.transition_index(prev, 0);
        let mut z = self.params[start..start + v].to_vec();
        for &r in rows {
            let b = self.bias_index(r, 0);
            for (zj, w) in z.iter_mut().zip(&self.params[b..b + v]) {
                *zj += w;
            }
        }
        z
    }

    pub fn logits(&self, ctx: &ContextFeatures, prev: Option<usize>) -> Result<Vec<f64>, PolicyError> {
        self.check_context(ctx)?;
        if let Some(p) = prev {
            self.check_tokens(&[p])?;
        }
        Ok(self.logits_unchecked(&self.active_rows(ctx), prev))
    }

    /// Full-vocabulary log-probabilities of the next token.
    pub fn log_probs(&self, ctx: &ContextFeatures, prev: Option<usize>) -> Result<Vec<f64>, PolicyError> {
        Ok(log_softmax(&self.logits(ctx, prev)?))
    }

    /// Ancestral sampling until the end token or `t_max` tokens.
    pub fn sample_rollout(&self, ctx: &ContextFeatures, seed: u64) -> Result<Rollout, PolicyError> {
        if !ctx.is_student() {
            return Err(PolicyError::TeacherContext(ctx.tag_buckets.len()));
        }
        self.check_context(ctx)?;
        let rows = self.active_rows(ctx);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tokens = Vec::new();
        let mut logprobs = Vec::new();
        let mut prev = None;
        while tokens.len() < self.shape.t_max {
            let lp = log_softmax(&self.logits_unchecked(&rows, prev));
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut pick = lp.len() - 1;
            for (j, l) in lp.iter().enumerate() {
                acc += l.exp();
                if u < acc {
                    pick = j;
                    break;
                }
            }
            tokens.push(pick);
            logprobs.push(lp[pick]);
            if Some(pick) == self.shape.end_token {
                break;
            }
            prev = Some(pick);
        }
        Ok(Rollout { tokens, logprobs })
    }

    /// Full log-probability vectors at every position of `tokens`.
    pub fn score_distributions(&self, ctx: &ContextFeatures, tokens: &[usize]) -> Result<Vec<Vec<f64>>, PolicyError> {
        self.check_context(ctx)?;
        self.check_tokens(tokens)?;
        let rows = self.active_rows(ctx);
        Ok((0..tokens.len())
            .map(|t| {
                let prev = if t == 0 { None } else { Some(tokens[t - 1]) };
                log_softmax(&self.logits_unchecked(&rows, prev))
            })
            .collect())
    }

    /// `log p(y_t | ctx, y_<t)` at each position.
    pub fn score_sequence(&self, ctx: &ContextFeatures, tokens: &[usize]) -> Result<Vec<f64>, PolicyError> {
        Ok(self
            .score_distributions(ctx, tokens)?
            .into_iter()
            .zip(tokens)
            .map(|(lp, &y)| lp[y])
            .collect())
    }

    /// Adds `scale · dlogits` at position `t` into a dense parameter gradient.
    ///
    /// `dlogits` is a gradient with respect to the logits at that position.
    pub fn accumulate_logit_grad(
        &self,
        ctx: &ContextFeatures,
        tokens: &[usize],
        position: usize,
        dlogits: &[f64],
        scale: f64,
        grad: &mut [f64],
    ) -> Result<(), PolicyError> {
        self.check_context(ctx)?;
        self.check_tokens(tokens)?;
        if position >= tokens.len() {
            return Err(PolicyError::InvalidPosition {
                position,
                len: tokens.len(),
            });
        }
        if grad.len() != self.params.len() || dlogits.len() != self.shape.vocab_size {
            return Err(PolicyError::DimensionMismatch {
                expected: self.params.len(),
                got: grad.len(),
            });
        }
        let v = self.shape.vocab_size;
        let prev = if position == 0 { None } else { Some(tokens[position - 1]) };
        let mut starts = vec![self.transition_index(prev, 0)];
        starts.extend(self.active_rows(ctx).into_iter().map(|r| self.bias_index(r, 0)));
        for s in starts {
            for (g, d) in grad[s..s + v].iter_mut().zip(dlogits) {
                *g += scale * d;
            }
        }
        Ok(())
    }

    /// `∇_θ log p(y_t | ctx, y_<t)` as a dense vector.
    pub fn logprob_grad(&self, ctx: &ContextFeatures, tokens: &[usize], position: usize) -> Result<Vec<f64>, PolicyError> {
        if position >= tokens.len() {
            return Err(PolicyError::InvalidPosition {
                position,
                len: tokens.len(),
            });
        }
        let prev = if position == 0 { None } else { Some(tokens[position - 1]) };
        self.check_tokens(tokens)?;
        let lp = self.log_probs(ctx, prev)?;
        let y = tokens[position];
        let dlogits: Vec<f64> = lp
            .iter()
            .enumerate()
            .map(|(j, l)| if j == y { 1.0 - l.exp() } else { -l.exp() })
            .collect();
        let mut grad = vec![0.0; self.params.len()];
        self.accumulate_logit_grad(ctx, tokens, position, &dlogits, 1.0, &mut grad)?;
        Ok(grad)
    }

    /// SGD step `θ ← θ − lr · ∇L`.
    pub fn apply_update(&self, grad: &[f64], learning_rate: f64) -> Result<Self, PolicyError> {
        if !(learning_rate >= 0.0 && learning_rate.is_finite()) {
            return Err(PolicyError::InvalidLearningRate(learning_rate));
        }
        if grad.len() != self.params.len() {
            return Err(PolicyError::DimensionMismatch {
                expected: self.params.len(),
                got: grad.len(),
            });
        }
        let mut next = self.clone();
        for (p, g) in next.params.iter_mut().zip(grad) {
            *p -= learning_rate * g;
        }
        Ok(next)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let v = self.shape.vocab_size;
        let split = self.shape.transition_rows() * v;
        Checkpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            shape: self.shape,
            arrays: vec![
                NamedArray {
                    name: "transition".into(),
                    dims: vec![self.shape.transition_rows(), v],
                    data: self.params[..split].to_vec(),
                },
                NamedArray {
                    name: "bias".into(),
                    dims: vec![self.shape.bias_rows(), v],
                    data: self.params[split..].to_vec(),
                },
            ],
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, PolicyError> {
        if ck.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(PolicyError::Checkpoint(format!(
                "unsupported format version {}",
                ck.format_version
            )));
        }
        let shape = ck.shape;
        shape.validate()?;
        let find = |name: &str, rows: usize| -> Result<&NamedArray, PolicyError> {
            let a = ck
                .arrays
                .iter()
                .find(|a| a.name == name)
                .ok_or_else(|| PolicyError::Checkpoint(format!("missing array {name}")))?;
            if a.dims != [rows, shape.vocab_size] || a.data.len() != rows * shape.vocab_size {
                return Err(PolicyError::Checkpoint(format!("array {name} has wrong dimensions")));
            }
            Ok(a)
        };
        let mut params = find("transition", shape.transition_rows())?.data.clone();
        params.extend_from_slice(&find("bias", shape.bias_rows())?.data);
        Self::from_params(shape, params)
    }

    pub fn save(&self, path: &Path) -> Result<(), PolicyError> {
        fs::write(path, serde_json::to_string(&self.to_checkpoint())?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, PolicyError> {
        let ck: Checkpoint = serde_json::from_str(&fs::read_to_string(path)?)?;
        Self::from_checkpoint(&ck)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedArray {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

/// Flat named-array parameter container.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub shape: PolicyShape,
    pub arrays: Vec<NamedArray>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum TeacherStrategy {
    Live,
    Frozen,
    Periodic { interval: u64 },
    Ema { decay: f64 },
}

impl TeacherStrategy {
    pub fn validate(&self) -> Result<(), PolicyError> {
        match *self {
            TeacherStrategy::Periodic { interval: 0 } => Err(PolicyError::ZeroInterval),
            TeacherStrategy::Ema { decay } if !(0.0..1.0).contains(&decay) => Err(PolicyError::InvalidDecay(decay)),
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            TeacherStrategy::Live => "live",
            TeacherStrategy::Frozen => "frozen",
            TeacherStrategy::Periodic { .. } => "periodic",
            TeacherStrategy::Ema { .. } => "ema",
        }
    }
}

/// Stop-gradient parameter snapshot used for teacher scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherHandle {
    snapshot: ToyPolicy,
    strategy: TeacherStrategy,
}

impl TeacherHandle {
    pub fn new(current: &ToyPolicy, strategy: TeacherStrategy) -> Result<Self, PolicyError> {
        strategy.validate()?;
        Ok(Self {
            snapshot: current.clone(),
            strategy,
        })
    }

    pub fn strategy(&self) -> TeacherStrategy {
        self.strategy
    }

    pub fn policy(&self) -> &ToyPolicy {
        &self.snapshot
    }

    /// Brings the snapshot up to date for `step` (1-indexed).
    pub fn sync(&mut self, current: &ToyPolicy, step: u64) -> Result<(), PolicyError> {
        if current.params.len() != self.snapshot.params.len() {
            return Err(PolicyError::DimensionMismatch {
                expected: self.snapshot.params.len(),
                got: current.params.len(),
            });
        }
        match self.strategy {
            TeacherStrategy::Live => self.snapshot.params.copy_from_slice(&current.params),
            TeacherStrategy::Frozen => {}
            TeacherStrategy::Periodic { interval } => {
                if step % interval == 0 {
                    self.snapshot.params.copy_from_slice(&current.params);
                }
            }
            TeacherStrategy::Ema { decay } => {
                for (s, c) in self.snapshot.params.iter_mut().zip(&current.params) {
                    *s = decay * *s + (1.0 - decay) * c;
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small(vocab: usize) -> PolicyShape {
        PolicyShape {
            vocab_size: vocab,
            end_token: Some(vocab - 1),
            problem_buckets: 4,
            tag_buckets: 3,
            t_max: 6,
        }
    }

    #[test]
    fn distributions_are_normalized() {
        let p = ToyPolicy::random(small(7), 1, 3.0).unwrap();
        for pb in 0..4 {
            for tags in [vec![], vec![1], vec![0, 2]] {
                let ctx = ContextFeatures::teacher(pb, tags);
                for prev in std::iter::once(None).chain((0..7).map(Some)) {
                    let total: f64 = p.log_probs(&ctx, prev).unwrap().iter().map(|l| l.exp()).sum();
                    assert!((total - 1.0).abs() < 1e-9);
                }
            }
        }
    }

    fn one_hot_policy() -> ToyPolicy {
        // start → 1 → 2 → 3(end), each with a logit margin of 800
        let mut p = ToyPolicy::zeros(small(4)).unwrap();
        p.add_transition(None, 1, 800.0);
        p.add_transition(Some(1), 2, 800.0);
        p.add_transition(Some(2), 3, 800.0);
        p
    }

    #[test]
    fn one_hot_policy_is_greedy() {
        let p = one_hot_policy();
        let ctx = ContextFeatures::student(0);
        let r = p.sample_rollout(&ctx, 9).unwrap();
        assert_eq!(r.tokens, vec![1, 2, 3]);
        assert!(r.logprobs.iter().all(|l| l.abs() < 1e-12));
        assert!(p.score_sequence(&ctx, &r.tokens).unwrap().iter().all(|l| l.abs() < 1e-12));
        let g = p.logprob_grad(&ctx, &r.tokens, 1).unwrap();
        assert!(g.iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn sampling_is_deterministic_and_consistent() {
        let p = ToyPolicy::random(small(6), 2, 1.0).unwrap();
        let ctx = ContextFeatures::student(3);
        let a = p.sample_rollout(&ctx, 77).unwrap();
        assert_eq!(a, p.sample_rollout(&ctx, 77).unwrap());
        // bit-for-bit
        assert_eq!(p.score_sequence(&ctx, &a.tokens).unwrap(), a.logprobs);
        assert!(p.sample_rollout(&ContextFeatures::teacher(3, vec![1]), 77).is_err());
    }

    #[test]
    fn uniform_policy_frequencies() {
        let shape = PolicyShape {
            vocab_size: 4,
            end_token: None,
            problem_buckets: 1,
            tag_buckets: 1,
            t_max: 1,
        };
        let p = ToyPolicy::zeros(shape).unwrap();
        let ctx = ContextFeatures::student(0);
        let n = 10_000;
        let mut counts = [0usize; 4];
        for s in 0..n {
            counts[p.sample_rollout(&ctx, s).unwrap().tokens[0]] += 1;
        }
        let sigma = (n as f64 * 0.25 * 0.75).sqrt();
        for c in counts {
            assert!((c as f64 - n as f64 * 0.25).abs() <= 3.0 * sigma, "{counts:?}");
        }
    }

    #[test]
    fn tags_change_teacher_scores() {
        let shape = small(5);
        let mut p = ToyPolicy::random(shape, 4, 0.1).unwrap();
        p.add_bias(shape.cross_row(0, 2), 1, 2.0);
        p.add_bias(shape.cross_row(1, 2), 3, 2.0);
        let y = [1, 3, 0, 4];
        let a = p.score_sequence(&ContextFeatures::teacher(2, vec![0]), &y).unwrap();
        let b = p.score_sequence(&ContextFeatures::teacher(2, vec![1]), &y).unwrap();
        assert!(a.iter().zip(&b).any(|(x, z)| x != z));
        assert!(p.score_sequence(&ContextFeatures::student(2), &[5]).is_err());
    }

    #[test]
    fn gradient_rows_sum_to_zero() {
        let shape = small(5);
        let p = ToyPolicy::random(shape, 5, 1.0).unwrap();
        let ctx = ContextFeatures::teacher(1, vec![2]);
        let g = p.logprob_grad(&ctx, &[0, 2, 4], 2).unwrap();
        for row in g.chunks(5) {
            assert!(row.iter().sum::<f64>().abs() < 1e-12);
        }
        assert!(p.logprob_grad(&ctx, &[0, 2, 4], 3).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let shape = small(5);
        let ctx = ContextFeatures::teacher(1, vec![2, 0]);
        let tokens = [3, 0, 0, 4];
        for seed in 0..5 {
            let p = ToyPolicy::random(shape, seed, 1.5).unwrap();
            for t in 0..tokens.len() {
                let g = p.logprob_grad(&ctx, &tokens, t).unwrap();
                let h = 1e-5;
                let mut fd = vec![0.0; g.len()];
                for (i, f) in fd.iter_mut().enumerate() {
                    let mut up = p.clone();
                    up.params[i] += h;
                    let mut dn = p.clone();
                    dn.params[i] -= h;
                    *f = (up.score_sequence(&ctx, &tokens).unwrap()[t] - dn.score_sequence(&ctx, &tokens).unwrap()[t])
                        / (2.0 * h);
                }
                let err: f64 = g.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                let norm: f64 = fd.iter().map(|x| x * x).sum::<f64>().sqrt();
                assert!(err / norm <= 1e-6, "seed {seed} t {t}: {}", err / norm);
            }
        }
    }

    #[test]
    fn update_examples() {
        let p = ToyPolicy::random(small(4), 6, 1.0).unwrap();
        let n = p.params().len();
        assert_eq!(p.apply_update(&vec![0.0; n], 0.3).unwrap(), p);
        assert_eq!(p.apply_update(&vec![1.0; n], 0.0).unwrap(), p);
        assert!(p.apply_update(&vec![1.0; n - 1], 0.1).is_err());
        assert!(p.apply_update(&vec![1.0; n], -0.1).is_err());

        // one coordinate on f(w) = (w - 2)^2
        let mut q = ToyPolicy::zeros(small(4)).unwrap();
        q.params[0] = 5.0;
        let f = |w: f64| (w - 2.0).powi(2);
        let mut grad = vec![0.0; n];
        grad[0] = 2.0 * (q.params[0] - 2.0);
        let q2 = q.apply_update(&grad, 0.1).unwrap();
        assert!(f(q2.params[0]) < f(q.params[0]));
    }

    #[test]
    fn teacher_strategies() {
        let shape = small(4);
        let init = ToyPolicy::random(shape, 7, 1.0).unwrap();
        let mut cur = init.clone();
        let mut frozen = TeacherHandle::new(&init, TeacherStrategy::Frozen).unwrap();
        let mut live = TeacherHandle::new(&init, TeacherStrategy::Live).unwrap();
        let mut periodic = TeacherHandle::new(&init, TeacherStrategy::Periodic { interval: 25 }).unwrap();
        let mut ema0 = TeacherHandle::new(&init, TeacherStrategy::Ema { decay: 0.0 }).unwrap();
        let mut updated_at = Vec::new();
        for step in 1..=100u64 {
            let n = cur.params().len();
            cur = cur.apply_update(&vec![0.01; n], 1.0).unwrap();
            let before = periodic.policy().clone();
            for h in [&mut frozen, &mut live, &mut periodic, &mut ema0] {
                h.sync(&cur, step).unwrap();
            }
            if periodic.policy() != &before {
                updated_at.push(step);
            }
            assert_eq!(live.policy(), &cur);
            assert_eq!(ema0.policy(), &cur);
        }
        assert_eq!(frozen.policy(), &init);
        assert_eq!(updated_at, vec![25, 50, 75, 100]);
        assert!(TeacherHandle::new(&init, TeacherStrategy::Ema { decay: 1.0 }).is_err());
        assert!(TeacherHandle::new(&init, TeacherStrategy::Periodic { interval: 0 }).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let p = ToyPolicy::random(small(5), 8, 1.0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        p.save(&path).unwrap();
        assert_eq!(ToyPolicy::load(&path).unwrap(), p);
        let mut ck = p.to_checkpoint();
        ck.format_version = 9;
        assert!(ToyPolicy::from_checkpoint(&ck).is_err());
    }

    proptest! {
        #[test]
        fn normalization_for_random_params(seed in 0u64..1000, scale in 0.0f64..20.0, prev in 0usize..6) {
            let p = ToyPolicy::random(small(6), seed, scale).unwrap();
            let ctx = ContextFeatures::teacher(seed as usize % 4, vec![prev % 3]);
            let total: f64 = p.log_probs(&ctx, Some(prev)).unwrap().iter().map(|l| l.exp()).sum();
            prop_assert!((total - 1.0).abs() < 1e-9);
        }
    }
}
