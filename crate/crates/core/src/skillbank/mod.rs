//! Structured bank of general skills and common mistakes.

mod evolve;
mod merge;
mod retrieval;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::extraction::{Candidates, ExtractionError, ExtractionKind, MistakeCandidate, SkillCandidate};
use crate::hash::fnv1a;

pub use evolve::{
    cold_start, online_update, ColdStartParams, MemoryRecord, OnlineParams, UpdateOutcome, LATEST_BANK_FILE,
};
pub use merge::{hierarchical_merge, MergeParams, MergeResult};
pub use retrieval::{
    compose_context, pair_rankwise, retrieve, student_prompt, Embedder, HashingEmbedder, Retrieval, RetrievalHit,
    TeacherContext, TeacherPair,
};

#[derive(Debug, Error)]
pub enum BankError {
    #[error("cannot parse bank {path}: {message}")]
    Parse { path: String, message: String },
    #[error("retrieval size must be at least 1")]
    ZeroK,
    #[error("seed problem set is empty")]
    NoSeedProblems,
    #[error("invalid bank parameter: {0}")]
    InvalidParam(String),
    #[error("duplicate entry id {0}")]
    DuplicateId(String),
    #[error(transparent)]
    Extraction(#[from] ExtractionError),
    #[error(transparent)]
    Policy(#[from] crate::policy::PolicyError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    /// Built at cold start; never modified by online updates.
    #[default]
    Static,
    Dynamic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneralSkill {
    pub skill_id: String,
    pub title: String,
    pub principle: String,
    pub when_to_apply: String,
    #[serde(default)]
    pub origin: Origin,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tags: Vec<String>,
    /// Training step at which a dynamic entry was inserted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created_step: Option<u64>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommonMistake {
    pub mistake_id: String,
    pub description: String,
    pub why_it_happens: String,
    pub how_to_avoid: String,
    #[serde(default)]
    pub origin: Origin,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tags: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created_step: Option<u64>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct LayerCounts {
    #[serde(default)]
    pub general_skills: Vec<usize>,
    #[serde(default)]
    pub common_mistakes: Vec<usize>,
}

impl LayerCounts {
    fn is_empty(&self) -> bool {
        self.general_skills.is_empty() && self.common_mistakes.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BankMetadata {
    pub source: String,
    #[serde(default = "default_group_size")]
    pub merge_group_size: usize,
    #[serde(default = "default_patience")]
    pub merge_stagnation_patience: usize,
    /// Item count before the first merge layer and after each layer.
    #[serde(default, skip_serializing_if = "LayerCounts::is_empty")]
    pub layer_merge_counts: LayerCounts,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

fn default_group_size() -> usize {
    32
}

fn default_patience() -> usize {
    3
}

impl Default for BankMetadata {
    fn default() -> Self {
        Self {
            source: "hierarchical merge from raw candidates".into(),
            merge_group_size: default_group_size(),
            merge_stagnation_patience: default_patience(),
            layer_merge_counts: LayerCounts::default(),
            extra: Map::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct SkillBank {
    #[serde(default)]
    pub general_skills: Vec<GeneralSkill>,
    #[serde(default)]
    pub common_mistakes: Vec<CommonMistake>,
    #[serde(default)]
    pub metadata: BankMetadata,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

/// Shared behavior of the two entry collections.
pub trait BankEntry: Clone + PartialEq {
    type Candidate: Clone + PartialEq + Serialize + for<'de> Deserialize<'de>;
    const PREFIX: &'static str;
    const KEY: &'static str;
    const MERGE_KIND: ExtractionKind;
    const EXTRACT_KIND: ExtractionKind;

    fn id(&self) -> &str;
    fn origin(&self) -> Origin;
    fn created_step(&self) -> Option<u64>;
    fn tags(&self) -> &[String];
    fn to_candidate(&self) -> Self::Candidate;
    fn from_candidate(c: Self::Candidate, id: String, origin: Origin, created_step: Option<u64>) -> Self;
    /// Text fed to the embedder.
    fn embed_text(&self) -> String;
    /// Short human-readable label.
    fn headline(&self) -> &str;
    fn unwrap_candidates(c: Candidates) -> Option<Vec<Self::Candidate>>;

    /// Explicit tags, or one derived from the content when none are present.
    fn effective_tags(&self) -> Vec<String> {
        if self.tags().is_empty() {
            vec![format!("entry-{:016x}", fnv1a(self.embed_text().as_bytes()))]
        } else {
            self.tags().to_vec()
        }
    }
}

pub fn format_id(prefix: &str, index: usize) -> String {
    format!("{prefix}_{index:03}")
}

impl BankEntry for GeneralSkill {
    type Candidate = SkillCandidate;
    const PREFIX: &'static str = "gen";
    const KEY: &'static str = "general_skills";
    const MERGE_KIND: ExtractionKind = ExtractionKind::MergeSkills;
    const EXTRACT_KIND: ExtractionKind = ExtractionKind::SuccessSkills;

    fn id(&self) -> &str {
        &self.skill_id
    }

    fn origin(&self) -> Origin {
        self.origin
    }

    fn created_step(&self) -> Option<u64> {
        self.created_step
    }

    fn tags(&self) -> &[String] {
        &self.tags
    }

    fn to_candidate(&self) -> SkillCandidate {
        SkillCandidate {
            title: self.title.clone(),
            principle: self.principle.clone(),
            when_to_apply: self.when_to_apply.clone(),
            tags: self.tags.clone(),
            extra: self.extra.clone(),
        }
    }

    fn from_candidate(c: SkillCandidate, id: String, origin: Origin, created_step: Option<u64>) -> Self {
        Self {
            skill_id: id,
            title: c.title,
            principle: c.principle,
            when_to_apply: c.when_to_apply,
            origin,
            tags: c.tags,
            created_step,
            extra: c.extra,
        }
    }

    fn embed_text(&self) -> String {
        format!("{}. {} {}", self.title, self.principle, self.when_to_apply)
    }

    fn headline(&self) -> &str {
        &self.title
    }

    fn unwrap_candidates(c: Candidates) -> Option<Vec<SkillCandidate>> {
        match c {
            Candidates::Skills(v) => Some(v),
            Candidates::Mistakes(_) => None,
        }
    }
}

impl BankEntry for CommonMistake {
    type Candidate = MistakeCandidate;
    const PREFIX: &'static str = "err";
    const KEY: &'static str = "common_mistakes";
    const MERGE_KIND: ExtractionKind = ExtractionKind::MergeMistakes;
    const EXTRACT_KIND: ExtractionKind = ExtractionKind::FailureMistakes;

    fn id(&self) -> &str {
        &self.mistake_id
    }

    fn origin(&self) -> Origin {
        self.origin
    }

    fn created_step(&self) -> Option<u64> {
        self.created_step
    }

    fn tags(&self) -> &[String] {
        &self.tags
    }

    fn to_candidate(&self) -> MistakeCandidate {
        MistakeCandidate {
            description: self.description.clone(),
            why_it_happens: self.why_it_happens.clone(),
            how_to_avoid: self.how_to_avoid.clone(),
            tags: self.tags.clone(),
            extra: self.extra.clone(),
        }
    }

    fn from_candidate(c: MistakeCandidate, id: String, origin: Origin, created_step: Option<u64>) -> Self {
        Self {
            mistake_id: id,
            description: c.description,
            why_it_happens: c.why_it_happens,
            how_to_avoid: c.how_to_avoid,
            origin,
            tags: c.tags,
            created_step,
            extra: c.extra,
        }
    }

    fn embed_text(&self) -> String {
        format!("{}. {} {}", self.description, self.why_it_happens, self.how_to_avoid)
    }

    fn headline(&self) -> &str {
        &self.description
    }

    fn unwrap_candidates(c: Candidates) -> Option<Vec<MistakeCandidate>> {
        match c {
            Candidates::Mistakes(v) => Some(v),
            Candidates::Skills(_) => None,
        }
    }
}

impl SkillBank {
    pub fn is_empty(&self) -> bool {
        self.general_skills.is_empty() && self.common_mistakes.is_empty()
    }

    pub fn load(path: &Path) -> Result<Self, BankError> {
        let text = fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| match e {
            BankError::Parse { message, .. } => BankError::Parse {
                path: path.display().to_string(),
                message,
            },
            other => other,
        })
    }

    pub fn from_json(text: &str) -> Result<Self, BankError> {
        let bank: SkillBank = serde_json::from_str(text).map_err(|e| BankError::Parse {
            path: "<memory>".into(),
            message: e.to_string(),
        })?;
        bank.check_ids()?;
        Ok(bank)
    }

    pub fn to_json(&self) -> Result<String, BankError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), BankError> {
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                fs::create_dir_all(dir)?;
            }
        }
        fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    /// Ids must be unique within each collection and carry the right prefix.
    pub fn check_ids(&self) -> Result<(), BankError> {
        fn check<E: BankEntry>(entries: &[E]) -> Result<(), BankError> {
            let mut seen = std::collections::BTreeSet::new();
            for e in entries {
                if !e.id().starts_with(E::PREFIX) {
                    return Err(BankError::Parse {
                        path: "<memory>".into(),
                        message: format!("{}: id {} lacks prefix {}", E::KEY, e.id(), E::PREFIX),
                    });
                }
                if !seen.insert(e.id().to_string()) {
                    return Err(BankError::DuplicateId(e.id().to_string()));
                }
            }
            Ok(())
        }
        check(&self.general_skills)?;
        check(&self.common_mistakes)
    }

    pub fn count_origin(&self, origin: Origin) -> (usize, usize) {
        (
            self.general_skills.iter().filter(|e| e.origin == origin).count(),
            self.common_mistakes.iter().filter(|e| e.origin == origin).count(),
        )
    }
}
