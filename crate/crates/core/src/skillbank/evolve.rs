use std::collections::BTreeMap;
use std::path::Path;

use log::{info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::merge::{hierarchical_merge, MergeParams};
use super::{format_id, BankEntry, BankError, BankMetadata, CommonMistake, GeneralSkill, LayerCounts, Origin, SkillBank};
use crate::env::{verify, TaskInstance, Vocab};
use crate::extraction::{extract, ExtractOutcome, ExtractionError, ExtractionRequest, Extractor};
use crate::policy::{ContextFeatures, ToyPolicy};

pub const LATEST_BANK_FILE: &str = "skill_bank.json";

/// One verified attempt, as handed to the extraction prompts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryRecord {
    pub problem: String,
    pub completion: String,
    pub reward: i64,
    pub answer: String,
    pub summary: String,
    pub feedback: String,
}

impl MemoryRecord {
    pub fn new(problem: &str, completion: String, success: bool, extracted: Option<&str>, truth: &str, len: usize) -> Self {
        let answer = extracted.unwrap_or("").to_string();
        let shown = extracted.unwrap_or("none");
        let summary = format!("{len} tokens generated; final digit run: {shown}");
        let feedback = if success {
            format!("The final answer {shown} matches the reference answer.")
        } else {
            format!("The final answer {shown} does not match the reference answer {truth}.")
        };
        Self {
            problem: problem.to_string(),
            completion,
            reward: if success { 1 } else { -1 },
            answer,
            summary,
            feedback,
        }
    }

    pub fn is_success(&self) -> bool {
        self.reward > 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColdStartParams {
    pub seed: u64,
    pub merge: MergeParams,
    /// Candidates kept per memory.
    pub max_candidates: usize,
}

impl Default for ColdStartParams {
    fn default() -> Self {
        Self {
            seed: 0,
            merge: MergeParams::default(),
            max_candidates: 3,
        }
    }
}

enum Extracted<C> {
    Items(Vec<C>),
    Skipped,
}

fn extract_from_memory<E: BankEntry>(
    record: &MemoryRecord,
    extractor: &dyn Extractor,
    max: usize,
) -> Result<Extracted<E::Candidate>, ExtractionError> {
    let mut inputs = BTreeMap::new();
    inputs.insert("memory_json", serde_json::to_string_pretty(record).expect("records serialize"));
    let request = ExtractionRequest::render(E::EXTRACT_KIND, &inputs)?;
    match extract(extractor, &request)? {
        ExtractOutcome::Candidates(c) => {
            let mut items = E::unwrap_candidates(c)
                .ok_or_else(|| ExtractionError::Schema(format!("expected {}", E::KEY)))?;
            items.truncate(max);
            Ok(Extracted::Items(items))
        }
        ExtractOutcome::Fallback(why) => {
            warn!("skipping {} extraction for {:?}: {why}", E::KEY, record.problem);
            Ok(Extracted::Skipped)
        }
    }
}

fn gather<E: BankEntry>(
    records: &[&MemoryRecord],
    extractor: &dyn Extractor,
    max: usize,
) -> Result<Vec<E::Candidate>, ExtractionError> {
    let mut out = Vec::new();
    for r in records {
        if let Extracted::Items(items) = extract_from_memory::<E>(r, extractor, max)? {
            out.extend(items);
        }
    }
    Ok(out)
}

fn entries<E: BankEntry>(items: Vec<E::Candidate>, origin: Origin) -> Vec<E> {
    items
        .into_iter()
        .enumerate()
        .map(|(i, c)| E::from_candidate(c, format_id(E::PREFIX, i + 1), origin, None))
        .collect()
}

/// Builds the static bank from one sampled completion per seed problem.
pub fn cold_start(
    tasks: &[TaskInstance],
    policy: &ToyPolicy,
    vocab: &Vocab,
    extractor: &dyn Extractor,
    params: ColdStartParams,
) -> Result<(SkillBank, Vec<MemoryRecord>), BankError> {
    if tasks.is_empty() {
        return Err(BankError::NoSeedProblems);
    }
    params.merge.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut memories = Vec::with_capacity(tasks.len());
    for task in tasks {
        let problem = task.problem_text();
        let ctx = ContextFeatures::for_problem(policy.shape(), &problem);
        let rollout = policy.sample_rollout(&ctx, rng.gen())?;
        let v = verify(task, &rollout.tokens, vocab);
        memories.push(MemoryRecord::new(
            &problem,
            vocab.render(&rollout.tokens),
            v.outcome.is_success(),
            v.extracted.as_deref(),
            &task.answer,
            rollout.tokens.len(),
        ));
    }
    let (wins, losses): (Vec<&MemoryRecord>, Vec<&MemoryRecord>) = memories.iter().partition(|m| m.is_success());
    info!("cold start: {} successes, {} failures", wins.len(), losses.len());

    let skills = gather::<GeneralSkill>(&wins, extractor, params.max_candidates)?;
    let mistakes = gather::<CommonMistake>(&losses, extractor, params.max_candidates)?;
    let ms = hierarchical_merge::<GeneralSkill>(skills, extractor, params.merge)?;
    let mm = hierarchical_merge::<CommonMistake>(mistakes, extractor, params.merge)?;

    let bank = SkillBank {
        general_skills: entries(ms.items, Origin::Static),
        common_mistakes: entries(mm.items, Origin::Static),
        metadata: BankMetadata {
            merge_group_size: params.merge.group_size,
            merge_stagnation_patience: params.merge.patience,
            layer_merge_counts: LayerCounts {
                general_skills: ms.layer_counts,
                common_mistakes: mm.layer_counts,
            },
            ..BankMetadata::default()
        },
        extra: Default::default(),
    };
    Ok((bank, memories))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OnlineParams {
    pub enabled: bool,
    /// Update every `frequency` steps.
    pub frequency: u64,
    /// Skip when the window success rate reaches this.
    pub success_threshold: f64,
    /// Net new dynamic entries per update and collection.
    pub max_new: usize,
    /// Dynamic entries per collection.
    pub capacity: usize,
    pub merge: MergeParams,
    pub max_candidates: usize,
}

impl Default for OnlineParams {
    fn default() -> Self {
        Self {
            enabled: true,
            frequency: 25,
            success_threshold: 0.8,
            max_new: 5,
            capacity: 30,
            merge: MergeParams::default(),
            max_candidates: 3,
        }
    }
}

impl OnlineParams {
    pub fn validate(&self) -> Result<(), BankError> {
        if self.frequency == 0 {
            return Err(BankError::InvalidParam("update frequency must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.success_threshold) {
            return Err(BankError::InvalidParam(format!(
                "success threshold must lie in [0, 1], got {}",
                self.success_threshold
            )));
        }
        self.merge.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum UpdateOutcome {
    Skipped(&'static str),
    AboveThreshold { success_rate: f64 },
    ExtractorFailed(String),
    Updated {
        success_rate: f64,
        added: (usize, usize),
        evicted: (usize, usize),
    },
}

struct Evolved<E> {
    entries: Vec<E>,
    added: usize,
    evicted: usize,
}

fn next_index<E: BankEntry>(entries: &[E]) -> usize {
    entries
        .iter()
        .filter_map(|e| e.id().rsplit('_').next().and_then(|n| n.parse::<usize>().ok()))
        .max()
        .unwrap_or(0)
        + 1
}

fn evolve<E: BankEntry>(
    existing: &[E],
    fresh: Vec<E::Candidate>,
    step: u64,
    params: &OnlineParams,
    extractor: &dyn Extractor,
) -> Result<Evolved<E>, BankError> {
    let statics: Vec<E> = existing.iter().filter(|e| e.origin() == Origin::Static).cloned().collect();
    let dynamics: Vec<E> = existing.iter().filter(|e| e.origin() == Origin::Dynamic).cloned().collect();
    let static_cands: Vec<E::Candidate> = statics.iter().map(E::to_candidate).collect();
    let merged_new: Vec<E::Candidate> = hierarchical_merge::<E>(fresh, extractor, params.merge)?
        .items
        .into_iter()
        .filter(|c| !static_cands.contains(c))
        .collect();
    if merged_new.is_empty() {
        return Ok(Evolved {
            entries: existing.to_vec(),
            added: 0,
            evicted: 0,
        });
    }

    let mut combined: Vec<E::Candidate> = dynamics.iter().map(E::to_candidate).collect();
    combined.extend(merged_new);
    let survivors = hierarchical_merge::<E>(combined, extractor, params.merge)?.items;

    let mut unmatched: Vec<Option<&E>> = dynamics.iter().map(Some).collect();
    let mut next = next_index(existing);
    let mut kept: Vec<E> = Vec::new();
    let mut added = 0;
    for c in survivors {
        if static_cands.contains(&c) {
            continue;
        }
        let prior = unmatched
            .iter_mut()
            .find(|slot| slot.is_some_and(|e| e.to_candidate() == c))
            .and_then(Option::take);
        match prior {
            Some(e) => kept.push(e.clone()),
            None if added < params.max_new => {
                kept.push(E::from_candidate(c, format_id(E::PREFIX, next), Origin::Dynamic, Some(step)));
                next += 1;
                added += 1;
            }
            None => {}
        }
    }

    let mut evicted = 0;
    while kept.len() > params.capacity {
        // oldest insertion step first; earlier position breaks ties
        let (pos, _) = kept
            .iter()
            .enumerate()
            .min_by_key(|(i, e)| (e.created_step().unwrap_or(0), *i))
            .expect("nonempty");
        kept.remove(pos);
        evicted += 1;
    }

    let mut entries = statics;
    entries.extend(kept);
    Ok(Evolved {
        entries,
        added,
        evicted,
    })
}

/// Periodic update of the dynamic part of the bank from recent rollouts.
///
/// Static entries are never touched. When `out_dir` is given and the bank
/// changes, the latest bank and a `bank_step_{step}.json` snapshot are written.
pub fn online_update(
    bank: &mut SkillBank,
    window: &[MemoryRecord],
    step: u64,
    params: &OnlineParams,
    extractor: &dyn Extractor,
    out_dir: Option<&Path>,
) -> Result<UpdateOutcome, BankError> {
    params.validate()?;
    if !params.enabled {
        return Ok(UpdateOutcome::Skipped("online updates disabled"));
    }
    if window.is_empty() {
        return Ok(UpdateOutcome::Skipped("empty window"));
    }
    if step % params.frequency != 0 {
        return Ok(UpdateOutcome::Skipped("off schedule"));
    }
    let wins = window.iter().filter(|r| r.is_success()).count();
    let success_rate = wins as f64 / window.len() as f64;
    if success_rate >= params.success_threshold {
        return Ok(UpdateOutcome::AboveThreshold { success_rate });
    }
    let (pos, neg): (Vec<&MemoryRecord>, Vec<&MemoryRecord>) = window.iter().partition(|r| r.is_success());

    let fresh_skills = match gather::<GeneralSkill>(&pos, extractor, params.max_candidates) {
        Ok(v) => v,
        Err(e) => return Ok(failed(step, e)),
    };
    let fresh_mistakes = match gather::<CommonMistake>(&neg, extractor, params.max_candidates) {
        Ok(v) => v,
        Err(e) => return Ok(failed(step, e)),
    };
    let s = evolve(&bank.general_skills, fresh_skills, step, params, extractor)?;
    let m = evolve(&bank.common_mistakes, fresh_mistakes, step, params, extractor)?;
    bank.general_skills = s.entries;
    bank.common_mistakes = m.entries;
    bank.check_ids()?;
    if let Some(dir) = out_dir {
        bank.save(&dir.join(LATEST_BANK_FILE))?;
        bank.save(&dir.join(format!("bank_step_{step}.json")))?;
    }
    info!(
        "bank update at step {step}: +{} skills, +{} mistakes, evicted {}/{}",
        s.added, m.added, s.evicted, m.evicted
    );
    Ok(UpdateOutcome::Updated {
        success_rate,
        added: (s.added, m.added),
        evicted: (s.evicted, m.evicted),
    })
}

fn failed(step: u64, e: ExtractionError) -> UpdateOutcome {
    warn!("bank update at step {step} abandoned; bank unchanged: {e}");
    UpdateOutcome::ExtractorFailed(e.to_string())
}
