//! Training loop: rollouts, verification, skill-conditioned distillation and
//! periodic bank evolution on the toy world.

mod config;
mod step;
mod world;

use std::collections::VecDeque;
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

pub use config::{Ablation, BankSource, ConfigError, RunConfig, TeacherKind};
pub use step::{distill_problem, ProblemStep, StepSettings, TeacherRecord};
pub use world::{derive_seed, TagEffect, World};

use crate::distill::{teacher_weights, DistillError, Outcome, Polarity};
use crate::env::{verify, EnvError, TaskInstance, Vocab};
use crate::extraction::{ExtractionError, Extractor};
use crate::policy::{ContextFeatures, PolicyError, TeacherHandle, ToyPolicy};
use crate::skillbank::{
    cold_start, compose_context, online_update, pair_rankwise, retrieve, student_prompt, BankEntry, BankError,
    ColdStartParams, HashingEmbedder, MemoryRecord, Origin, SkillBank, UpdateOutcome, LATEST_BANK_FILE,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Distill(#[from] DistillError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Bank(#[from] BankError),
    #[error(transparent)]
    Extraction(#[from] ExtractionError),
    #[error("{0}")]
    World(String),
    #[error("student context carries privileged tags")]
    PrivilegedStudentContext,
    #[error("student prompt leaks retrieved entry {0:?}")]
    PromptLeak(String),
    #[error("cannot write {path}: {message}")]
    Persist { path: PathBuf, message: String },
}

/// Column order of `metrics.csv`. List-valued columns are `;`-joined in teacher order.
pub const METRICS_COLUMNS: [&str; 19] = [
    "step",
    "slot",
    "problem",
    "answer",
    "extracted",
    "outcome",
    "completion",
    "k_x",
    "pairs",
    "weights",
    "plain_supports",
    "robust_supports",
    "polarities",
    "teacher_losses",
    "loss",
    "batch_loss",
    "effective_tokens",
    "rolling_success",
    "bank_update",
];

pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const FINAL_POLICY_FILE: &str = "policy_final.json";

/// One scored rollout.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: u64,
    pub slot: usize,
    pub problem: String,
    pub answer: String,
    pub extracted: Option<String>,
    pub outcome: Outcome,
    pub completion: String,
    /// `skill_id+mistake_id` per teacher.
    pub pairs: Vec<String>,
    /// Tags of each teacher context.
    pub teacher_tags: Vec<Vec<String>>,
    pub teachers: Vec<TeacherRecord>,
    pub loss: f64,
    pub batch_loss: f64,
    pub effective_tokens: usize,
    pub rolling_success: f64,
    pub bank_update: String,
}

fn join<T>(items: &[T], f: impl Fn(&T) -> String) -> String {
    items.iter().map(f).collect::<Vec<_>>().join(";")
}

impl StepRecord {
    pub fn row(&self) -> Vec<String> {
        vec![
            self.step.to_string(),
            self.slot.to_string(),
            self.problem.clone(),
            self.answer.clone(),
            self.extracted.clone().unwrap_or_default(),
            self.outcome.reward().to_string(),
            self.completion.clone(),
            self.teachers.len().to_string(),
            self.pairs.join(";"),
            join(&self.teachers, |t| t.verdict.weight.to_string()),
            join(&self.teachers, |t| t.verdict.plain_support.to_string()),
            join(&self.teachers, |t| t.verdict.robust_support.to_string()),
            join(&self.teachers, |t| t.verdict.polarity.value().to_string()),
            join(&self.teachers, |t| t.loss.to_string()),
            self.loss.to_string(),
            self.batch_loss.to_string(),
            self.effective_tokens.to_string(),
            self.rolling_success.to_string(),
            self.bank_update.clone(),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BankUpdateRecord {
    pub step: u64,
    pub outcome: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub seed: u64,
    pub steps: u64,
    pub objective: String,
    pub ablation: String,
    pub teacher: String,
    /// Per-problem gradients in a minibatch are averaged.
    pub batch_accumulation: &'static str,
    pub initial_success: f64,
    pub final_success: f64,
    pub final_rolling_success: f64,
    pub zero_teacher_rollouts: u64,
    pub general_skills: usize,
    pub common_mistakes: usize,
    pub dynamic_skills: usize,
    pub dynamic_mistakes: usize,
    pub bank_updates: Vec<BankUpdateRecord>,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub summary: RunSummary,
    pub records: Vec<StepRecord>,
    pub policy: ToyPolicy,
    pub bank: SkillBank,
}

/// Success rate of `samples` sampled completions per task from the plain prompt.
pub fn evaluate(
    policy: &ToyPolicy,
    tasks: &[TaskInstance],
    vocab: &Vocab,
    samples: usize,
    seed: u64,
) -> Result<f64, TrainError> {
    if tasks.is_empty() || samples == 0 {
        return Err(TrainError::World("evaluation needs at least one task and sample".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut wins = 0usize;
    for task in tasks {
        let ctx = ContextFeatures::for_problem(policy.shape(), &task.problem_text());
        for _ in 0..samples {
            let r = policy.sample_rollout(&ctx, rng.gen())?;
            if verify(task, &r.tokens, vocab).outcome.is_success() {
                wins += 1;
            }
        }
    }
    Ok(wins as f64 / (tasks.len() * samples) as f64)
}

/// Bank the run starts from, per `bank_source`.
pub fn initial_bank(cfg: &RunConfig, world: &World, extractor: &dyn Extractor) -> Result<SkillBank, TrainError> {
    let bank = match cfg.bank_source {
        config::BankSource::Seeded => {
            world.seeded_bank(cfg.helpful_skills, cfg.misleading_skills, cfg.neutral_mistakes)?
        }
        config::BankSource::ColdStart => {
            let seeds = crate::env::generate_tasks(
                derive_seed(cfg.seed, "coldstart"),
                cfg.cold_start_problems,
                crate::env::Difficulty::new(cfg.difficulty)?,
            )?;
            let params = ColdStartParams {
                seed: derive_seed(cfg.seed, "coldstart-rollouts"),
                merge: cfg.merge_params(),
                max_candidates: 3,
            };
            cold_start(&seeds, &world.policy, &world.vocab, extractor, params)?.0
        }
        config::BankSource::File => SkillBank::load(Path::new(&cfg.bank_path))?,
    };
    bank.check_ids()?;
    Ok(bank)
}

fn persist<T>(path: &Path, r: Result<T, impl std::fmt::Display>) -> Result<T, TrainError> {
    r.map_err(|e| TrainError::Persist {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn update_label(u: &UpdateOutcome) -> String {
    match u {
        UpdateOutcome::Skipped(why) => format!("skipped: {why}"),
        UpdateOutcome::AboveThreshold { success_rate } => format!("above threshold ({success_rate})"),
        UpdateOutcome::ExtractorFailed(_) => "extractor failed".into(),
        UpdateOutcome::Updated { added, evicted, .. } => format!(
            "updated: +{} skills, +{} mistakes, evicted {}/{}",
            added.0, added.1, evicted.0, evicted.1
        ),
    }
}

struct Outputs {
    root: PathBuf,
    metrics: csv::Writer<fs::File>,
}

impl Outputs {
    fn create(root: &Path, cfg: &RunConfig, bank: &SkillBank) -> Result<Self, TrainError> {
        for dir in [root.to_path_buf(), root.join("bank"), root.join("checkpoints")] {
            persist(&dir, fs::create_dir_all(&dir))?;
        }
        let cfg_path = root.join("config.toml");
        persist(&cfg_path, fs::write(&cfg_path, cfg.to_toml()))?;
        let bank_dir = root.join("bank");
        bank.save(&bank_dir.join(LATEST_BANK_FILE))?;
        bank.save(&bank_dir.join("bank_step_0.json"))?;
        let metrics_path = root.join(METRICS_FILE);
        let mut metrics = persist(&metrics_path, csv::Writer::from_path(&metrics_path))?;
        persist(&metrics_path, metrics.write_record(METRICS_COLUMNS))?;
        Ok(Self {
            root: root.to_path_buf(),
            metrics,
        })
    }

    fn rows(&mut self, records: &[StepRecord]) -> Result<(), TrainError> {
        let path = self.root.join(METRICS_FILE);
        for r in records {
            persist(&path, self.metrics.write_record(r.row()))?;
        }
        persist(&path, self.metrics.flush())
    }

    fn checkpoint(&self, policy: &ToyPolicy, name: &str) -> Result<(), TrainError> {
        policy.save(&self.root.join("checkpoints").join(name))?;
        Ok(())
    }
}

/// Runs a configured training job; writes artifacts under `out` when given.
pub fn train(cfg: &RunConfig, out: Option<&Path>) -> Result<TrainReport, TrainError> {
    cfg.validate()?;
    let world = World::build(cfg)?;
    let extractor = cfg.extractor_config().build()?;
    let bank = initial_bank(cfg, &world, extractor.as_ref())?;
    train_with(cfg, &world, bank, extractor.as_ref(), out)
}

/// Training from an explicit world, bank and extractor.
pub fn train_with(
    cfg: &RunConfig,
    world: &World,
    mut bank: SkillBank,
    extractor: &dyn Extractor,
    out: Option<&Path>,
) -> Result<TrainReport, TrainError> {
    cfg.validate()?;
    let mut policy = if cfg.init_checkpoint.is_empty() {
        world.policy.clone()
    } else {
        let p = ToyPolicy::load(Path::new(&cfg.init_checkpoint))?;
        if *p.shape() != world.shape {
            return Err(TrainError::World("initial checkpoint shape does not match the configured world".into()));
        }
        p
    };
    let settings = StepSettings {
        objective: cfg.objective,
        gate: cfg.gate(),
        robust: cfg.robust(),
        mask_end: cfg.ablation.masks(),
        outcome_blind: cfg.ablation == Ablation::NoPolarity,
        topk_support: cfg.topk_support,
    };
    let online = cfg.online_params();
    let embedder = HashingEmbedder::default();
    let eval_seed = derive_seed(cfg.seed, "eval");
    let initial_success = evaluate(&policy, &world.tasks, &world.vocab, cfg.eval_samples, eval_seed)?;
    info!("initial success rate {initial_success:.3}");

    let mut outputs = match out {
        Some(root) => Some(Outputs::create(root, cfg, &bank)?),
        None => None,
    };
    let mut teacher = TeacherHandle::new(&policy, cfg.teacher_strategy())?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "train"));
    let mut recent: VecDeque<bool> = VecDeque::with_capacity(cfg.rolling_window);
    let mut window: Vec<MemoryRecord> = Vec::new();
    let mut records = Vec::new();
    let mut bank_updates = Vec::new();
    let mut zero_teacher = 0u64;

    for step in 1..=cfg.steps {
        teacher.sync(&policy, step)?;
        let mut grad = vec![0.0; policy.params().len()];
        let mut batch = Vec::with_capacity(cfg.batch_size);
        for slot in 0..cfg.batch_size {
            let task = &world.tasks[rng.gen_range(0..world.tasks.len())];
            let problem = task.problem_text();
            let retrieval = retrieve(&bank, &problem, cfg.pairs(), &embedder)?;
            let pairs = pair_rankwise(&retrieval.skills, &retrieval.mistakes);
            let contexts: Vec<_> = pairs.iter().map(|p| compose_context(&bank, p, &problem, &world.shape)).collect();

            // privileged text must never reach the student side
            let student_ctx = ContextFeatures::for_problem(&world.shape, &problem);
            let prompt = student_prompt(&problem);
            for p in &pairs {
                let skill = &bank.general_skills[p.skill.index];
                let mistake = &bank.common_mistakes[p.mistake.index];
                for text in [skill.headline(), mistake.headline()] {
                    if prompt.contains(text) {
                        return Err(TrainError::PromptLeak(text.to_string()));
                    }
                }
            }

            let rollout = policy.sample_rollout(&student_ctx, rng.gen())?;
            let verdict = verify(task, &rollout.tokens, &world.vocab);
            let weights = if pairs.is_empty() {
                if zero_teacher == 0 {
                    warn!("no teacher pairs retrieved; those rollouts contribute no gradient");
                }
                zero_teacher += 1;
                Vec::new()
            } else {
                let gs: Vec<f64> = pairs.iter().map(|p| p.skill.score).collect();
                let es: Vec<f64> = pairs.iter().map(|p| p.mistake.score).collect();
                teacher_weights(&gs, &es)?
            };
            let features: Vec<ContextFeatures> = contexts.iter().map(|c| c.features.clone()).collect();
            let scored = distill_problem(
                &policy,
                teacher.policy(),
                &student_ctx,
                &features,
                &weights,
                &rollout.tokens,
                verdict.outcome,
                &settings,
                None,
            )?;
            for (g, d) in grad.iter_mut().zip(&scored.grad) {
                *g += d / cfg.batch_size as f64;
            }

            if recent.len() == cfg.rolling_window {
                recent.pop_front();
            }
            recent.push_back(verdict.outcome.is_success());
            let completion = world.vocab.render(&rollout.tokens);
            window.push(MemoryRecord::new(
                &problem,
                completion.clone(),
                verdict.outcome.is_success(),
                verdict.extracted.as_deref(),
                &task.answer,
                rollout.tokens.len(),
            ));
            batch.push(StepRecord {
                step,
                slot,
                problem,
                answer: task.answer.clone(),
                extracted: verdict.extracted,
                outcome: verdict.outcome,
                completion,
                pairs: pairs.iter().map(|p| format!("{}+{}", p.skill.id, p.mistake.id)).collect(),
                teacher_tags: contexts.into_iter().map(|c| c.tags).collect(),
                effective_tokens: scored.teachers.first().map_or(0, |t| t.effective_tokens),
                teachers: scored.teachers,
                loss: scored.loss,
                batch_loss: 0.0,
                rolling_success: recent.iter().filter(|s| **s).count() as f64 / recent.len() as f64,
                bank_update: String::new(),
            });
        }
        let batch_loss = batch.iter().map(|r| r.loss).sum::<f64>() / batch.len() as f64;
        policy = policy.apply_update(&grad, cfg.learning_rate)?;

        if step % cfg.bank_update_frequency == 0 {
            let bank_dir = outputs.as_ref().map(|o| o.root.join("bank"));
            let result = online_update(&mut bank, &window, step, &online, extractor, bank_dir.as_deref());
            let label = match result {
                Ok(u) => update_label(&u),
                Err(e) => return Err(abort(outputs.as_ref(), &policy, step, e.into())),
            };
            bank_updates.push(BankUpdateRecord {
                step,
                outcome: label.clone(),
            });
            for r in &mut batch {
                r.bank_update = label.clone();
            }
            window.clear();
        }
        for r in &mut batch {
            r.batch_loss = batch_loss;
        }
        if let Some(o) = outputs.as_mut() {
            if let Err(e) = o.rows(&batch) {
                return Err(abort(Some(o), &policy, step, e));
            }
            if cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 {
                o.checkpoint(&policy, &format!("step_{step}.json"))?;
            }
        }
        records.extend(batch);
    }

    let final_success = evaluate(&policy, &world.tasks, &world.vocab, cfg.eval_samples, eval_seed)?;
    info!("final success rate {final_success:.3}");
    let summary = RunSummary {
        seed: cfg.seed,
        steps: cfg.steps,
        objective: cfg.objective.name().into(),
        ablation: cfg.ablation.name().into(),
        teacher: cfg.teacher_strategy().name().into(),
        batch_accumulation: "mean",
        initial_success,
        final_success,
        final_rolling_success: records.last().map_or(0.0, |r| r.rolling_success),
        zero_teacher_rollouts: zero_teacher,
        general_skills: bank.general_skills.len(),
        common_mistakes: bank.common_mistakes.len(),
        dynamic_skills: bank.count_origin(Origin::Dynamic).0,
        dynamic_mistakes: bank.count_origin(Origin::Dynamic).1,
        bank_updates,
    };
    if let Some(o) = outputs.as_ref() {
        policy.save(&o.root.join(FINAL_POLICY_FILE))?;
        let path = o.root.join(SUMMARY_FILE);
        let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
        persist(&path, fs::write(&path, text + "\n"))?;
    }
    Ok(TrainReport {
        summary,
        records,
        policy,
        bank,
    })
}

// leaves a loadable checkpoint behind before surfacing a persistence failure
fn abort(outputs: Option<&Outputs>, policy: &ToyPolicy, step: u64, err: TrainError) -> TrainError {
    if let Some(o) = outputs {
        let name = format!("abort_step_{step}.json");
        match o.checkpoint(policy, &name) {
            Ok(()) => warn!("run aborted at step {step}; resume from checkpoints/{name} via init_checkpoint"),
            Err(e) => warn!("run aborted at step {step} and the checkpoint could not be written: {e}"),
        }
    }
    err
}

/// Which seeded teacher a record's pair belongs to, by its skill tag.
pub fn pair_effects(world: &World, record: &StepRecord) -> Vec<TagEffect> {
    record
        .teacher_tags
        .iter()
        .map(|tags| {
            tags.iter()
                .map(|t| world.tag_effect(t))
                .find(|e| *e != TagEffect::Neutral)
                .unwrap_or(TagEffect::Neutral)
        })
        .collect()
}

/// Fraction of scored rollouts where the helpful teacher distills on success
/// and the misleading teacher reverses on failure.
pub fn seeded_polarity_accuracy(world: &World, records: &[StepRecord]) -> (usize, usize) {
    let mut hits = 0;
    let mut total = 0;
    for r in records {
        for (effect, t) in pair_effects(world, r).into_iter().zip(&r.teachers) {
            let want = match (effect, r.outcome) {
                (TagEffect::Helpful, Outcome::Success) => Polarity::Distill,
                (TagEffect::Misleading, Outcome::Failure) => Polarity::Reverse,
                _ => continue,
            };
            total += 1;
            if t.verdict.polarity == want {
                hits += 1;
            }
        }
    }
    (hits, total)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick() -> RunConfig {
        RunConfig {
            steps: 30,
            train_tasks: 8,
            eval_samples: 4,
            bank_update_frequency: 10,
            checkpoint_every: 10,
            ..RunConfig::default()
        }
    }

    #[test]
    fn runs_are_reproducible() {
        let a = train(&quick(), None).unwrap();
        let b = train(&quick(), None).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(a.policy, b.policy);
        assert_eq!(a.records.len(), 30);
        assert!(a.records.iter().all(|r| r.teachers.len() == 8));
    }

    #[test]
    fn artifacts_are_written() {
        let dir = tempfile::tempdir().unwrap();
        let r = train(&quick(), Some(dir.path())).unwrap();
        let csv = fs::read_to_string(dir.path().join(METRICS_FILE)).unwrap();
        assert_eq!(csv.lines().next().unwrap(), METRICS_COLUMNS.join(","));
        assert_eq!(csv.lines().count(), 31);
        for f in ["config.toml", SUMMARY_FILE, FINAL_POLICY_FILE, "checkpoints/step_30.json", "bank/bank_step_0.json"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let loaded = ToyPolicy::load(&dir.path().join(FINAL_POLICY_FILE)).unwrap();
        assert_eq!(loaded, r.policy);
        assert_eq!(r.summary.bank_updates.len(), 3);
    }

    #[test]
    fn minibatch_gradient_is_the_mean() {
        let cfg = RunConfig {
            batch_size: 3,
            steps: 2,
            ..quick()
        };
        let r = train(&cfg, None).unwrap();
        assert_eq!(r.records.len(), 6);
        let mean = r.records[..3].iter().map(|x| x.loss).sum::<f64>() / 3.0;
        assert!((r.records[0].batch_loss - mean).abs() < 1e-15);
    }

    #[test]
    fn empty_bank_gives_zero_loss() {
        let cfg = RunConfig {
            bank_updates: false,
            ..quick()
        };
        let world = World::build(&cfg).unwrap();
        let ex = cfg.extractor_config().build().unwrap();
        let r = train_with(&cfg, &world, SkillBank::default(), ex.as_ref(), None).unwrap();
        assert!(r.records.iter().all(|x| x.loss == 0.0 && x.teachers.is_empty()));
        assert_eq!(r.summary.zero_teacher_rollouts, 30);
    }

    #[test]
    fn zero_steps_leave_everything_untouched() {
        let cfg = RunConfig { steps: 0, ..quick() };
        let world = World::build(&cfg).unwrap();
        let r = train(&cfg, None).unwrap();
        assert!(r.records.is_empty());
        assert_eq!(r.policy, world.policy);
        assert_eq!(r.bank, world.seeded_bank(cfg.helpful_skills, cfg.misleading_skills, cfg.neutral_mistakes).unwrap());
    }

    #[test]
    fn single_teacher_and_cadence() {
        let cfg = RunConfig {
            ablation: Ablation::SingleTeacher,
            ..quick()
        };
        let r = train(&cfg, None).unwrap();
        assert!(r.records.iter().all(|x| x.teachers.len() == 1));
        for x in &r.records {
            assert_eq!(x.step % 10 == 0, !x.bank_update.is_empty(), "step {}", x.step);
            assert!((0.0..=1.0).contains(&x.rolling_success));
            assert!(x.teachers.iter().all(|t| (-1..=1).contains(&t.verdict.polarity.value())));
        }
    }

    #[test]
    fn frozen_teacher_never_moves() {
        let cfg = RunConfig {
            teacher: TeacherKind::Frozen,
            steps: 5,
            ..quick()
        };
        let world = World::build(&cfg).unwrap();
        let mut handle = TeacherHandle::new(&world.policy, cfg.teacher_strategy()).unwrap();
        let trained = train(&cfg, None).unwrap().policy;
        assert_ne!(trained, world.policy);
        for s in 1..=5 {
            handle.sync(&trained, s).unwrap();
            assert_eq!(handle.policy().params(), world.policy.params());
        }
    }

    #[test]
    fn outcome_blind_ablation_distills_misleading_teachers() {
        let cfg = RunConfig {
            ablation: Ablation::NoPolarity,
            helpful_skills: 1,
            misleading_skills: 1,
            neutral_mistakes: 2,
            steps: 60,
            bank_updates: false,
            ..quick()
        };
        let world = World::build(&cfg).unwrap();
        let r = train(&cfg, None).unwrap();
        let mut seen = 0;
        for x in r.records.iter().filter(|x| !x.outcome.is_success()) {
            for (e, t) in pair_effects(&world, x).into_iter().zip(&x.teachers) {
                if e == TagEffect::Misleading && t.verdict.polarity != Polarity::Ignore {
                    assert_eq!(t.verdict.polarity, Polarity::Distill);
                    seen += 1;
                }
            }
        }
        assert!(seen > 0);
    }

    fn digit_policy(world: &World, favored: impl Fn(&TaskInstance) -> Option<usize>) -> ToyPolicy {
        let mut p = ToyPolicy::zeros(world.shape).unwrap();
        let end = world.vocab.end();
        for f in Vocab::DIGITS..=end {
            p.add_transition(None, f, -1e3);
        }
        for d in 0..Vocab::DIGITS {
            p.add_transition(Some(d), end, 1e4);
        }
        for t in &world.tasks {
            if let Some(d) = favored(t) {
                p.add_bias(world.shape.problem_row(world.shape.problem_bucket(&t.problem_text())), d, 1e3);
            }
        }
        p
    }

    #[test]
    fn evaluation_reference_policies() {
        let world = World::build(&quick()).unwrap();
        let right = digit_policy(&world, |t| Some(t.answer_digits()[0]));
        assert_eq!(evaluate(&right, &world.tasks, &world.vocab, 5, 1).unwrap(), 1.0);
        let wrong = digit_policy(&world, |t| Some((t.answer_digits()[0] + 1) % 10));
        assert_eq!(evaluate(&wrong, &world.tasks, &world.vocab, 5, 1).unwrap(), 0.0);
        let uniform = digit_policy(&world, |_| None);
        let n = 10_000;
        let per_task = n / world.tasks.len();
        let rate = evaluate(&uniform, &world.tasks, &world.vocab, per_task, 2).unwrap();
        let total = (per_task * world.tasks.len()) as f64;
        let sigma = (0.1 * 0.9 / total).sqrt();
        assert!((rate - 0.1).abs() <= 3.0 * sigma, "{rate}");
        assert!(evaluate(&uniform, &world.tasks, &world.vocab, 0, 2).is_err());
    }
}
