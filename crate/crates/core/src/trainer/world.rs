//! The toy task world: task pool, initial policy, and the ground-truth effect
//! of every conditioning tag bucket.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::Map;

use super::{RunConfig, TrainError};
use crate::env::{generate_tasks, Difficulty, TaskInstance, Vocab};
use crate::hash::fnv1a;
use crate::policy::{PolicyShape, ToyPolicy};
use crate::skillbank::{format_id, CommonMistake, GeneralSkill, Origin, SkillBank};

/// What conditioning on a tag bucket does to the teacher.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TagEffect {
    /// Raises the logits of the correct answer digits.
    Helpful,
    /// Lowers the logits of the correct answer digits.
    Misleading,
    Neutral,
}

#[derive(Debug, Clone)]
pub struct World {
    pub vocab: Vocab,
    pub shape: PolicyShape,
    pub tasks: Vec<TaskInstance>,
    pub policy: ToyPolicy,
    /// Indexed by tag bucket.
    pub effects: Vec<TagEffect>,
}

/// Independent stream seed for a named purpose.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    fnv1a(format!("{seed}/{label}").as_bytes())
}

impl World {
    pub fn build(cfg: &RunConfig) -> Result<Self, TrainError> {
        let vocab = Vocab::new(cfg.fillers);
        let shape = PolicyShape {
            vocab_size: vocab.size(),
            end_token: Some(vocab.end()),
            problem_buckets: cfg.problem_buckets,
            tag_buckets: cfg.tag_buckets,
            t_max: cfg.t_max,
        };
        let difficulty = Difficulty::new(cfg.difficulty)?;

        // distinct problem buckets so each task owns its problem row
        let mut tasks = Vec::with_capacity(cfg.train_tasks);
        let mut used = BTreeSet::new();
        let pool = generate_tasks(derive_seed(cfg.seed, "tasks"), 64 * cfg.train_tasks.max(16), difficulty)?;
        for t in pool {
            if used.insert(shape.problem_bucket(&t.problem_text())) {
                tasks.push(t);
                if tasks.len() == cfg.train_tasks {
                    break;
                }
            }
        }
        if tasks.len() < cfg.train_tasks {
            return Err(TrainError::World(format!(
                "could only place {} of {} tasks in distinct problem buckets",
                tasks.len(),
                cfg.train_tasks
            )));
        }

        let mut buckets: Vec<usize> = (0..cfg.tag_buckets).collect();
        buckets.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "effects")));
        let third = cfg.tag_buckets / 3;
        let mut effects = vec![TagEffect::Neutral; cfg.tag_buckets];
        for (rank, b) in buckets.into_iter().enumerate() {
            effects[b] = if rank < third {
                TagEffect::Helpful
            } else if rank < 2 * third {
                TagEffect::Misleading
            } else {
                TagEffect::Neutral
            };
        }

        let mut policy = ToyPolicy::random(shape, derive_seed(cfg.seed, "policy"), cfg.init_scale)?;
        let cross_start = (shape.transition_rows() + shape.cross_row(0, 0)) * shape.vocab_size;
        policy.params_mut()[cross_start..].fill(0.0);
        for d in 0..Vocab::DIGITS {
            policy.add_transition(Some(d), vocab.end(), cfg.end_prior);
        }
        policy.add_transition(None, vocab.end(), -2.0 * cfg.end_prior);
        for prev in std::iter::once(None).chain((0..vocab.size()).map(Some)) {
            for f in Vocab::DIGITS..vocab.end() {
                policy.add_transition(prev, f, -cfg.end_prior);
            }
        }
        for task in &tasks {
            let pb = shape.problem_bucket(&task.problem_text());
            let digits: BTreeSet<usize> = task.answer_digits().into_iter().collect();
            for &d in &digits {
                policy.add_bias(shape.problem_row(pb), d, cfg.base_competence);
            }
            for (b, effect) in effects.iter().enumerate() {
                let sign = match effect {
                    TagEffect::Helpful => 1.0,
                    TagEffect::Misleading => -1.0,
                    TagEffect::Neutral => continue,
                };
                for &d in &digits {
                    policy.add_bias(shape.cross_row(b, pb), d, sign * cfg.skill_strength);
                }
            }
        }

        Ok(Self {
            vocab,
            shape,
            tasks,
            policy,
            effects,
        })
    }

    pub fn tag_effect(&self, tag: &str) -> TagEffect {
        self.effects[self.shape.tag_bucket(tag)]
    }

    // first unused tag `{stem}-{j}` whose bucket has the wanted effect
    fn pick_tag(&self, stem: &str, want: TagEffect, taken: &mut BTreeSet<usize>) -> Result<String, TrainError> {
        for j in 0..100_000 {
            let tag = format!("{stem}-{j}");
            let b = self.shape.tag_bucket(&tag);
            if self.effects[b] == want && !taken.contains(&b) {
                taken.insert(b);
                return Ok(tag);
            }
        }
        Err(TrainError::World(format!("no free tag bucket with effect {want:?}")))
    }

    /// Bank whose skills carry helpful or misleading tags and whose mistakes are neutral.
    pub fn seeded_bank(&self, helpful: usize, misleading: usize, neutral_mistakes: usize) -> Result<SkillBank, TrainError> {
        let mut taken = BTreeSet::new();
        let mut bank = SkillBank::default();
        bank.metadata.source = "seeded scenario".into();
        for i in 0..helpful {
            let tag = self.pick_tag("helpful", TagEffect::Helpful, &mut taken)?;
            bank.general_skills.push(GeneralSkill {
                skill_id: format_id("gen", bank.general_skills.len() + 1),
                title: format!("Reduce every partial result ({})", i + 1),
                principle: "Take the remainder after each operation before continuing the chain.".into(),
                when_to_apply: "Whenever a chain mixes several operations under one modulus.".into(),
                origin: Origin::Static,
                tags: vec![tag],
                created_step: None,
                extra: Map::new(),
            });
        }
        for i in 0..misleading {
            let tag = self.pick_tag("misleading", TagEffect::Misleading, &mut taken)?;
            bank.general_skills.push(GeneralSkill {
                skill_id: format_id("gen", bank.general_skills.len() + 1),
                title: format!("Trust the first impression ({})", i + 1),
                principle: "Write down the leading digit of the unreduced value.".into(),
                when_to_apply: "When the chain looks familiar.".into(),
                origin: Origin::Static,
                tags: vec![tag],
                created_step: None,
                extra: Map::new(),
            });
        }
        for i in 0..neutral_mistakes {
            let tag = self.pick_tag("neutral", TagEffect::Neutral, &mut taken)?;
            bank.common_mistakes.push(CommonMistake {
                mistake_id: format_id("err", i + 1),
                description: format!("Formatting slip ({})", i + 1),
                why_it_happens: "Extra symbols are emitted around the answer.".into(),
                how_to_avoid: "Keep the answer span clean and stop right after it.".into(),
                origin: Origin::Static,
                tags: vec![tag],
                created_step: None,
                extra: Map::new(),
            });
        }
        Ok(bank)
    }
}
