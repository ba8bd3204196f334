use std::collections::BTreeMap;

use log::{debug, warn};
use serde_json::{Map, Value};

use super::{BankEntry, BankError};
use crate::extraction::{extract, ExtractOutcome, ExtractionRequest, Extractor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MergeParams {
    pub group_size: usize,
    pub patience: usize,
}

impl Default for MergeParams {
    fn default() -> Self {
        Self {
            group_size: 32,
            patience: 3,
        }
    }
}

impl MergeParams {
    pub fn validate(&self) -> Result<(), BankError> {
        if self.group_size < 2 {
            return Err(BankError::InvalidParam(format!(
                "merge group size must be at least 2, got {}",
                self.group_size
            )));
        }
        if self.patience == 0 {
            return Err(BankError::InvalidParam("merge patience must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MergeResult<C> {
    pub items: Vec<C>,
    /// Count before the first layer, then after each layer.
    pub layer_counts: Vec<usize>,
    /// Groups that passed through unmerged.
    pub fallbacks: usize,
}

fn merge_group<E: BankEntry>(group: &[E::Candidate], extractor: &dyn Extractor) -> Result<Vec<E::Candidate>, String> {
    let mut wrapper = Map::new();
    wrapper.insert(
        E::KEY.to_string(),
        Value::Array(group.iter().map(|c| serde_json::to_value(c).expect("candidates serialize")).collect()),
    );
    let mut inputs = BTreeMap::new();
    inputs.insert(
        "items_json",
        serde_json::to_string_pretty(&Value::Object(wrapper)).expect("json value serializes"),
    );
    let request = ExtractionRequest::render(E::MERGE_KIND, &inputs).map_err(|e| e.to_string())?;
    match extract(extractor, &request) {
        Ok(ExtractOutcome::Candidates(c)) => {
            let merged = E::unwrap_candidates(c).ok_or("response has the wrong collection kind")?;
            if merged.is_empty() {
                Err("merge returned no items".into())
            } else if merged.len() > group.len() {
                Err(format!("merge grew the group from {} to {}", group.len(), merged.len()))
            } else {
                Ok(merged)
            }
        }
        Ok(ExtractOutcome::Fallback(why)) => Err(why),
        Err(e) => Err(e.to_string()),
    }
}

/// Layered group-and-merge until the root group is processed or the item
/// count fails to shrink for `patience` consecutive layers, then exact
/// duplicates are dropped. A group whose merge fails passes through as is.
pub fn hierarchical_merge<E: BankEntry>(
    candidates: Vec<E::Candidate>,
    extractor: &dyn Extractor,
    params: MergeParams,
) -> Result<MergeResult<E::Candidate>, BankError> {
    params.validate()?;
    let mut items = candidates;
    let mut layer_counts = vec![items.len()];
    let mut fallbacks = 0;
    let mut stagnant = 0;
    while !items.is_empty() {
        let groups = items.len().div_ceil(params.group_size);
        let mut next = Vec::with_capacity(items.len());
        for group in items.chunks(params.group_size) {
            if group.len() == 1 {
                next.extend_from_slice(group);
                continue;
            }
            match merge_group::<E>(group, extractor) {
                Ok(merged) => next.extend(merged),
                Err(why) => {
                    warn!("{} merge fell back for a group of {}: {why}", E::KEY, group.len());
                    fallbacks += 1;
                    next.extend_from_slice(group);
                }
            }
        }
        stagnant = if next.len() < items.len() { 0 } else { stagnant + 1 };
        items = next;
        layer_counts.push(items.len());
        debug!("{} merge layer {}: {} items", E::KEY, layer_counts.len() - 1, items.len());
        if groups == 1 || stagnant >= params.patience {
            break;
        }
    }
    let mut unique: Vec<E::Candidate> = Vec::with_capacity(items.len());
    for c in items {
        if !unique.contains(&c) {
            unique.push(c);
        }
    }
    Ok(MergeResult {
        items: unique,
        layer_counts,
        fallbacks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extraction::{MergeBehavior, MockExtractor, SkillCandidate};
    use crate::skillbank::{format_id, BankEntry, GeneralSkill, Origin};

    fn cand(i: usize) -> SkillCandidate {
        SkillCandidate {
            title: format!("skill {i}"),
            principle: "p".into(),
            when_to_apply: "w".into(),
            tags: vec![],
            extra: Map::new(),
        }
    }

    fn run(n: usize, behavior: MergeBehavior) -> MergeResult<SkillCandidate> {
        hierarchical_merge::<GeneralSkill>((0..n).map(cand).collect(), &MockExtractor::new(behavior), MergeParams::default())
            .unwrap()
    }

    #[test]
    fn single_candidate_passes_through() {
        let r = run(1, MergeBehavior::Halve);
        assert_eq!(r.items, vec![cand(0)]);
        let entry = GeneralSkill::from_candidate(r.items[0].clone(), format_id("gen", 1), Origin::Static, None);
        assert_eq!(entry.skill_id, "gen_001");
    }

    #[test]
    fn halving_terminates_with_monotone_counts() {
        let r = run(64, MergeBehavior::Halve);
        assert_eq!(r.layer_counts, vec![64, 32, 16]);
        assert!(r.layer_counts.windows(2).all(|w| w[1] <= w[0]));
        let r = run(200, MergeBehavior::Halve);
        assert!(r.layer_counts.len() <= 10);
        assert!(r.layer_counts.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn stagnation_stops_after_patience() {
        let r = run(64, MergeBehavior::Identity);
        // three stagnant layers after the initial count
        assert_eq!(r.layer_counts, vec![64, 64, 64, 64]);
        let r = run(64, MergeBehavior::Garbage);
        assert_eq!(r.layer_counts.len(), 4);
        assert_eq!(r.fallbacks, 6);
        assert_eq!(r.items.len(), 64);
    }

    #[test]
    fn exact_duplicates_removed() {
        let mut c: Vec<SkillCandidate> = (0..5).map(cand).collect();
        c.push(cand(2));
        let r = hierarchical_merge::<GeneralSkill>(c, &MockExtractor::new(MergeBehavior::Identity), MergeParams::default())
            .unwrap();
        assert_eq!(r.items.len(), 5);
    }

    #[test]
    fn extractor_errors_never_abort() {
        let r = hierarchical_merge::<GeneralSkill>(
            (0..40).map(cand).collect(),
            &MockExtractor::failing(),
            MergeParams::default(),
        )
        .unwrap();
        assert_eq!(r.items.len(), 40);
    }
}
