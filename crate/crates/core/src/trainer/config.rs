use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distill::{Objective, RobustParams};
use crate::extraction::{Backend, ExtractorConfig, MergeBehavior};
use crate::gate::GateParams;
use crate::policy::TeacherStrategy;
use crate::skillbank::{MergeParams, OnlineParams};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid value for `{field}`: {reason}")]
    Invalid { field: &'static str, reason: String },
}

fn invalid(field: &'static str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field,
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    #[default]
    None,
    /// `ρ_k = +1` whenever `|ã_k| > ε_a`, regardless of outcome.
    NoPolarity,
    /// One retrieved pair.
    SingleTeacher,
    /// All positions effective, terminator included.
    NoMask,
    /// `c_Δ = ∞`.
    NoClip,
    /// `ε_a = 0`.
    NoThreshold,
    NoAllThree,
}

impl Ablation {
    pub const ALL: [Ablation; 7] = [
        Ablation::None,
        Ablation::NoPolarity,
        Ablation::SingleTeacher,
        Ablation::NoMask,
        Ablation::NoClip,
        Ablation::NoThreshold,
        Ablation::NoAllThree,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::None => "none",
            Ablation::NoPolarity => "no_polarity",
            Ablation::SingleTeacher => "single_teacher",
            Ablation::NoMask => "no_mask",
            Ablation::NoClip => "no_clip",
            Ablation::NoThreshold => "no_threshold",
            Ablation::NoAllThree => "no_all_three",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.name() == s)
    }

    pub fn masks(self) -> bool {
        !matches!(self, Ablation::NoMask | Ablation::NoAllThree)
    }

    pub fn clips(self) -> bool {
        !matches!(self, Ablation::NoClip | Ablation::NoAllThree)
    }

    pub fn thresholds(self) -> bool {
        !matches!(self, Ablation::NoThreshold | Ablation::NoAllThree)
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BankSource {
    /// Hand-built bank whose tags hit known helpful/misleading buckets.
    #[default]
    Seeded,
    /// Build the bank from student rollouts on seed problems.
    ColdStart,
    /// Load `bank_path`.
    File,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TeacherKind {
    #[default]
    Live,
    Frozen,
    Periodic,
    Ema,
}

/// Every knob of a run; serialized as a flat TOML table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub steps: u64,
    pub batch_size: usize,
    pub learning_rate: f64,

    // distillation
    pub top_k_pairs: usize,
    pub tau_g: f64,
    pub c_delta: f64,
    pub epsilon_a: f64,
    pub epsilon: f64,
    pub objective: Objective,
    /// Restrict per-token distributions to the teacher's top-k tokens; 0 disables.
    pub topk_support: usize,
    pub ablation: Ablation,
    pub teacher: TeacherKind,
    pub teacher_period: u64,
    pub teacher_ema_decay: f64,

    // skill bank
    pub bank_source: BankSource,
    pub bank_path: String,
    pub cold_start_problems: usize,
    pub bank_updates: bool,
    pub bank_update_frequency: u64,
    pub bank_success_threshold: f64,
    pub bank_max_new: usize,
    pub bank_capacity: usize,
    pub merge_group_size: usize,
    pub merge_patience: usize,

    // toy world
    pub difficulty: u8,
    pub train_tasks: usize,
    pub eval_samples: usize,
    pub fillers: usize,
    pub t_max: usize,
    pub problem_buckets: usize,
    pub tag_buckets: usize,
    pub init_scale: f64,
    pub end_prior: f64,
    /// Initial logit bonus of the correct digits in each task's problem row.
    pub base_competence: f64,
    pub skill_strength: f64,
    pub helpful_skills: usize,
    pub misleading_skills: usize,
    pub neutral_mistakes: usize,

    // output
    pub checkpoint_every: u64,
    pub rolling_window: usize,
    /// Policy checkpoint to start from instead of the world's initial policy.
    pub init_checkpoint: String,

    // extraction backend
    pub extractor_backend: Backend,
    pub extractor_endpoint: String,
    pub extractor_model: String,
    pub extractor_timeout_secs: f64,
    pub extractor_retries: u32,
    pub extractor_credential_env: String,
    pub extractor_temperature: f64,
    pub extractor_mock_merge: MergeBehavior,
}

impl Default for RunConfig {
    fn default() -> Self {
        let ex = ExtractorConfig::default();
        Self {
            seed: 0,
            steps: 500,
            batch_size: 1,
            learning_rate: 1.0,
            top_k_pairs: 8,
            tau_g: 1.0,
            c_delta: 3.0,
            epsilon_a: 0.05,
            epsilon: 1e-8,
            objective: Objective::Gated,
            topk_support: 0,
            ablation: Ablation::None,
            teacher: TeacherKind::Live,
            teacher_period: 25,
            teacher_ema_decay: 0.99,
            bank_source: BankSource::Seeded,
            bank_path: String::new(),
            cold_start_problems: 256,
            bank_updates: true,
            bank_update_frequency: 25,
            bank_success_threshold: 0.8,
            bank_max_new: 5,
            bank_capacity: 30,
            merge_group_size: 32,
            merge_patience: 3,
            difficulty: 1,
            train_tasks: 32,
            eval_samples: 12,
            fillers: 2,
            t_max: 4,
            problem_buckets: 64,
            tag_buckets: 32,
            init_scale: 0.1,
            end_prior: 6.0,
            base_competence: 2.0,
            skill_strength: 3.0,
            helpful_skills: 3,
            misleading_skills: 5,
            neutral_mistakes: 8,
            checkpoint_every: 100,
            rolling_window: 25,
            init_checkpoint: String::new(),
            extractor_backend: ex.backend,
            extractor_endpoint: String::new(),
            extractor_model: String::new(),
            extractor_timeout_secs: ex.timeout_secs,
            extractor_retries: ex.retries,
            extractor_credential_env: ex.credential_env,
            extractor_temperature: ex.temperature,
            extractor_mock_merge: ex.mock_merge,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("flat config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = |field: &'static str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(invalid(field, format!("must be positive and finite, got {v}")))
            }
        };
        let nonzero = |field: &'static str, v: usize| {
            if v > 0 {
                Ok(())
            } else {
                Err(invalid(field, "must be at least 1"))
            }
        };
        positive("tau_g", self.tau_g)?;
        if !(self.c_delta > 0.0) {
            return Err(invalid("c_delta", format!("must be positive, got {}", self.c_delta)));
        }
        if !(self.epsilon_a >= 0.0 && self.epsilon_a.is_finite()) {
            return Err(invalid("epsilon_a", format!("must be non-negative, got {}", self.epsilon_a)));
        }
        positive("epsilon", self.epsilon)?;
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid("learning_rate", format!("must be non-negative, got {}", self.learning_rate)));
        }
        nonzero("batch_size", self.batch_size)?;
        nonzero("top_k_pairs", self.top_k_pairs)?;
        if self.topk_support > self.vocab_size() {
            return Err(invalid(
                "topk_support",
                format!("{} exceeds the vocabulary size {}", self.topk_support, self.vocab_size()),
            ));
        }
        if self.teacher == TeacherKind::Periodic && self.teacher_period == 0 {
            return Err(invalid("teacher_period", "must be at least 1"));
        }
        if self.teacher == TeacherKind::Ema && !(0.0..1.0).contains(&self.teacher_ema_decay) {
            return Err(invalid("teacher_ema_decay", format!("must lie in [0, 1), got {}", self.teacher_ema_decay)));
        }
        if self.bank_source == BankSource::File && self.bank_path.is_empty() {
            return Err(invalid("bank_path", "required when bank_source = \"file\""));
        }
        nonzero("cold_start_problems", self.cold_start_problems)?;
        if self.bank_update_frequency == 0 {
            return Err(invalid("bank_update_frequency", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.bank_success_threshold) {
            return Err(invalid("bank_success_threshold", "must lie in [0, 1]"));
        }
        if self.merge_group_size < 2 {
            return Err(invalid("merge_group_size", "must be at least 2"));
        }
        nonzero("merge_patience", self.merge_patience)?;
        if !(1..=3).contains(&self.difficulty) {
            return Err(invalid("difficulty", format!("expected 1, 2 or 3, got {}", self.difficulty)));
        }
        nonzero("train_tasks", self.train_tasks)?;
        if self.train_tasks > self.problem_buckets {
            return Err(invalid(
                "train_tasks",
                format!("cannot exceed problem_buckets ({})", self.problem_buckets),
            ));
        }
        nonzero("eval_samples", self.eval_samples)?;
        if self.t_max < 3 {
            return Err(invalid("t_max", "must be at least 3 to fit a two-digit answer and terminator"));
        }
        nonzero("problem_buckets", self.problem_buckets)?;
        nonzero("tag_buckets", self.tag_buckets)?;
        if self.init_scale < 0.0 || !self.init_scale.is_finite() {
            return Err(invalid("init_scale", "must be non-negative"));
        }
        for (field, v) in [
            ("end_prior", self.end_prior),
            ("base_competence", self.base_competence),
            ("skill_strength", self.skill_strength),
        ] {
            if !v.is_finite() {
                return Err(invalid(field, "must be finite"));
            }
        }
        let seeded = self.helpful_skills + self.misleading_skills + self.neutral_mistakes;
        if self.bank_source == BankSource::Seeded && seeded > self.tag_buckets {
            return Err(invalid(
                "tag_buckets",
                format!("{seeded} seeded entries need as many distinct tag buckets"),
            ));
        }
        nonzero("rolling_window", self.rolling_window)?;
        self.extractor_config()
            .validate()
            .map_err(|e| invalid("extractor_backend", e.to_string()))?;
        Ok(())
    }

    pub fn vocab_size(&self) -> usize {
        crate::env::Vocab::new(self.fillers).size()
    }

    pub fn gate(&self) -> GateParams {
        GateParams::new(self.tau_g).expect("validated")
    }

    /// Robust-support parameters after ablations.
    pub fn robust(&self) -> RobustParams {
        RobustParams {
            c_delta: if self.ablation.clips() { self.c_delta } else { f64::INFINITY },
            epsilon_a: if self.ablation.thresholds() { self.epsilon_a } else { 0.0 },
            epsilon: self.epsilon,
        }
    }

    /// Retrieved pairs per problem after ablations.
    pub fn pairs(&self) -> usize {
        if self.ablation == Ablation::SingleTeacher {
            1
        } else {
            self.top_k_pairs
        }
    }

    pub fn teacher_strategy(&self) -> TeacherStrategy {
        match self.teacher {
            TeacherKind::Live => TeacherStrategy::Live,
            TeacherKind::Frozen => TeacherStrategy::Frozen,
            TeacherKind::Periodic => TeacherStrategy::Periodic {
                interval: self.teacher_period,
            },
            TeacherKind::Ema => TeacherStrategy::Ema {
                decay: self.teacher_ema_decay,
            },
        }
    }

    pub fn merge_params(&self) -> MergeParams {
        MergeParams {
            group_size: self.merge_group_size,
            patience: self.merge_patience,
        }
    }

    pub fn online_params(&self) -> OnlineParams {
        OnlineParams {
            enabled: self.bank_updates,
            frequency: self.bank_update_frequency,
            success_threshold: self.bank_success_threshold,
            max_new: self.bank_max_new,
            capacity: self.bank_capacity,
            merge: self.merge_params(),
            max_candidates: 3,
        }
    }

    pub fn extractor_config(&self) -> ExtractorConfig {
        let opt = |s: &str| (!s.is_empty()).then(|| s.to_string());
        ExtractorConfig {
            backend: self.extractor_backend,
            endpoint: opt(&self.extractor_endpoint),
            model: opt(&self.extractor_model),
            timeout_secs: self.extractor_timeout_secs,
            retries: self.extractor_retries,
            backoff_ms: 500,
            credential_env: self.extractor_credential_env.clone(),
            temperature: self.extractor_temperature,
            mock_merge: self.extractor_mock_merge,
        }
    }
}
