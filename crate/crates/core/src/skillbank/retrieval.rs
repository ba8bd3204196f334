use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{BankEntry, BankError, SkillBank};
use crate::extraction::{render_template, STUDENT_PROMPT, TEACHER_PROMPT};
use crate::hash::fnv1a;
use crate::policy::{ContextFeatures, PolicyShape};

pub trait Embedder {
    fn embed(&self, text: &str) -> Vec<f64>;
}

/// Character n-gram counts hashed into a fixed-width vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashingEmbedder {
    pub dim: usize,
    pub n: usize,
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        Self { dim: 256, n: 3 }
    }
}

impl Embedder for HashingEmbedder {
    fn embed(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        let padded: Vec<char> = format!(" {} ", text.to_lowercase()).chars().collect();
        if padded.len() < self.n {
            return v;
        }
        let mut buf = String::new();
        for w in padded.windows(self.n) {
            buf.clear();
            buf.extend(w);
            v[(fnv1a(buf.as_bytes()) % self.dim as u64) as usize] += 1.0;
        }
        v
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalHit {
    pub id: String,
    /// Position of the entry in its collection.
    pub index: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Retrieval {
    pub skills: Vec<RetrievalHit>,
    pub mistakes: Vec<RetrievalHit>,
}

impl Retrieval {
    /// Number of teacher pairs available.
    pub fn k_x(&self) -> usize {
        self.skills.len().min(self.mistakes.len())
    }
}

fn rank<E: BankEntry>(entries: &[E], query: &[f64], k: usize, embedder: &dyn Embedder) -> Vec<RetrievalHit> {
    let mut hits: Vec<RetrievalHit> = entries
        .iter()
        .enumerate()
        .map(|(index, e)| RetrievalHit {
            id: e.id().to_string(),
            index,
            score: cosine(query, &embedder.embed(&e.embed_text())),
        })
        .collect();
    hits.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.id.cmp(&b.id)));
    hits.truncate(k);
    hits
}

/// Top-`k` entries of each collection by cosine similarity to `query`.
pub fn retrieve(bank: &SkillBank, query: &str, k: usize, embedder: &dyn Embedder) -> Result<Retrieval, BankError> {
    if k == 0 {
        return Err(BankError::ZeroK);
    }
    let q = embedder.embed(query);
    Ok(Retrieval {
        skills: rank(&bank.general_skills, &q, k, embedder),
        mistakes: rank(&bank.common_mistakes, &q, k, embedder),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherPair {
    pub skill: RetrievalHit,
    pub mistake: RetrievalHit,
}

/// The k-th skill hit with the k-th mistake hit, truncated to the shorter list.
pub fn pair_rankwise(skills: &[RetrievalHit], mistakes: &[RetrievalHit]) -> Vec<TeacherPair> {
    skills
        .iter()
        .zip(mistakes)
        .map(|(s, m)| TeacherPair {
            skill: s.clone(),
            mistake: m.clone(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TeacherContext {
    pub text: String,
    pub features: ContextFeatures,
    pub tags: Vec<String>,
}

pub fn student_prompt(problem: &str) -> String {
    let mut inputs = BTreeMap::new();
    inputs.insert("problem", problem.to_string());
    render_template(STUDENT_PROMPT, &inputs).expect("student template has one placeholder")
}

/// Teacher prompt and policy features for one skill–mistake pair.
pub fn compose_context(bank: &SkillBank, pair: &TeacherPair, problem: &str, shape: &PolicyShape) -> TeacherContext {
    let skill = &bank.general_skills[pair.skill.index];
    let mistake = &bank.common_mistakes[pair.mistake.index];
    let mut inputs = BTreeMap::new();
    inputs.insert("skill_title", skill.title.clone());
    inputs.insert("skill_principle", skill.principle.clone());
    inputs.insert("skill_when_to_apply", skill.when_to_apply.clone());
    inputs.insert("mistake_description", mistake.description.clone());
    inputs.insert("mistake_how_to_avoid", mistake.how_to_avoid.clone());
    inputs.insert("problem", problem.to_string());
    let text = render_template(TEACHER_PROMPT, &inputs).expect("teacher template placeholders are all supplied");
    let mut tags = skill.effective_tags();
    tags.extend(mistake.effective_tags());
    TeacherContext {
        text,
        features: ContextFeatures::with_tags(shape, problem, &tags),
        tags,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skillbank::{format_id, CommonMistake, GeneralSkill, Origin};
    use serde_json::Map;

    fn skill(i: usize, title: &str) -> GeneralSkill {
        GeneralSkill {
            skill_id: format_id("gen", i),
            title: title.into(),
            principle: String::new(),
            when_to_apply: String::new(),
            origin: Origin::Static,
            tags: vec![],
            created_step: None,
            extra: Map::new(),
        }
    }

    fn mistake(i: usize, d: &str) -> CommonMistake {
        CommonMistake {
            mistake_id: format_id("err", i),
            description: d.into(),
            why_it_happens: String::new(),
            how_to_avoid: String::new(),
            origin: Origin::Static,
            tags: vec![],
            created_step: None,
            extra: Map::new(),
        }
    }

    /// Embeds by keyword presence along fixed axes.
    struct AxisEmbedder;

    impl Embedder for AxisEmbedder {
        fn embed(&self, text: &str) -> Vec<f64> {
            ["alpha", "beta", "gamma"]
                .iter()
                .map(|w| text.matches(w).count() as f64)
                .collect()
        }
    }

    #[test]
    fn brute_force_ranking() {
        let mut bank = SkillBank::default();
        bank.general_skills = vec![skill(1, "alpha"), skill(2, "beta"), skill(3, "gamma")];
        bank.common_mistakes = vec![mistake(1, "beta beta"), mistake(2, "alpha")];
        let query = "alpha alpha beta";
        let r = retrieve(&bank, query, 8, &AxisEmbedder).unwrap();
        // brute-force oracle
        let q = AxisEmbedder.embed(query);
        let mut expect: Vec<(f64, String)> = bank
            .general_skills
            .iter()
            .map(|s| (cosine(&q, &AxisEmbedder.embed(&s.embed_text())), s.skill_id.clone()))
            .collect();
        expect.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let got: Vec<String> = r.skills.iter().map(|h| h.id.clone()).collect();
        assert_eq!(got, expect.iter().map(|e| e.1.clone()).collect::<Vec<_>>());
        assert_eq!(got, vec!["gen_001", "gen_002", "gen_003"]);
        assert!((r.skills[0].score - 2.0 / 5f64.sqrt()).abs() < 1e-12);
        assert_eq!(r.k_x(), 2);
        assert!(retrieve(&bank, query, 0, &AxisEmbedder).is_err());
    }

    #[test]
    fn identical_text_ranks_first() {
        let mut bank = SkillBank::default();
        bank.general_skills = vec![
            skill(1, "Reduce after each addition"),
            skill(2, "Verify the final residue"),
            skill(3, "Check the operator order"),
        ];
        let e = HashingEmbedder::default();
        let query = bank.general_skills[1].embed_text();
        let r = retrieve(&bank, &query, 2, &e).unwrap();
        assert_eq!(r.skills[0].id, "gen_002");
        assert!((r.skills[0].score - 1.0).abs() < 1e-12);
        assert_eq!(r.skills.len(), 2);
        assert!(r.mistakes.is_empty());
        assert_eq!(r, retrieve(&bank, &query, 2, &e).unwrap());
    }

    #[test]
    fn ties_break_by_id() {
        let mut bank = SkillBank::default();
        bank.general_skills = vec![skill(3, "same"), skill(1, "same"), skill(2, "same")];
        let r = retrieve(&bank, "same", 3, &HashingEmbedder::default()).unwrap();
        let ids: Vec<&str> = r.skills.iter().map(|h| h.id.as_str()).collect();
        assert_eq!(ids, vec!["gen_001", "gen_002", "gen_003"]);
    }

    fn hits(n: usize, prefix: &str) -> Vec<RetrievalHit> {
        (0..n)
            .map(|i| RetrievalHit {
                id: format_id(prefix, i + 1),
                index: i,
                score: 1.0 - i as f64 * 0.1,
            })
            .collect()
    }

    #[test]
    fn pairing() {
        assert_eq!(pair_rankwise(&hits(4, "gen"), &hits(4, "err")).len(), 4);
        let p = pair_rankwise(&hits(5, "gen"), &hits(3, "err"));
        assert_eq!(p.len(), 3);
        assert_eq!(p[2].skill.id, "gen_003");
        assert_eq!(p[2].mistake.id, "err_003");
        // prefix property
        let longer = pair_rankwise(&hits(6, "gen"), &hits(4, "err"));
        assert_eq!(&longer[..3], &p[..]);
    }

    #[test]
    fn context_rendering() {
        let bank = SkillBank::from_json(crate::skillbank::tests::EXAMPLE).unwrap();
        let shape = PolicyShape {
            vocab_size: 13,
            end_token: Some(12),
            problem_buckets: 64,
            tag_buckets: 32,
            t_max: 4,
        };
        let pair = pair_rankwise(&hits(1, "gen"), &hits(1, "err")).remove(0);
        let c = compose_context(&bank, &pair, "2 + 3 mod 10", &shape);
        assert_eq!(c, compose_context(&bank, &pair, "2 + 3 mod 10", &shape));
        assert_eq!(c.text.matches("Translate Constraints to Algebra").count(), 1);
        assert_eq!(c.text.matches("Skipping the constraint model.").count(), 1);
        assert!(c.text.starts_with("You may use the following retrieved math-reasoning guidance as soft guidance.\n"));
        assert!(c.text.contains(
            "- **Translate Constraints to Algebra**: Convert stated constraints into algebraic relations.\n  _Apply when: When variables are governed by explicit conditions._"
        ));
        assert!(c.text.ends_with("Problem: 2 + 3 mod 10\n\nPlease reason step by step, and put your final answer within \\boxed{}."));
        assert_eq!(c.features.tag_buckets.len(), 2);
        assert!(!c.features.is_student());

        let mut other = bank.clone();
        other.general_skills[0].title = "Something else".into();
        other.general_skills[0].tags = vec!["other".into()];
        let c2 = compose_context(&other, &pair, "2 + 3 mod 10", &shape);
        assert_ne!(c.text, c2.text);

        assert_eq!(
            student_prompt("2 + 3 mod 10"),
            "Problem: 2 + 3 mod 10\n\nPlease reason step by step, and put your final answer within \\boxed{}."
        );
    }
}
