use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use super::{
    longest_json_object, ExtractionError, ExtractionKind, ExtractionRequest, Extractor, MISTAKES_KEY, SKILLS_KEY,
};
use crate::hash::fnv1a;

/// How the mock answers merge prompts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MergeBehavior {
    /// Drop items whose headline text repeats an earlier item.
    #[default]
    Dedupe,
    /// Keep every other item.
    Halve,
    /// Echo the group unchanged.
    Identity,
    /// Reply with prose and no JSON.
    Garbage,
}

/// Deterministic offline extractor; every reply is a pure function of the payload.
#[derive(Debug, Clone, Default)]
pub struct MockExtractor {
    merge: MergeBehavior,
    fail: bool,
}

const OPS: [(char, &str); 3] = [('+', "addition"), ('-', "subtraction"), ('*', "multiplication")];

// number of hashed "pattern" variants per kind
const PATTERNS: u64 = 8;

impl MockExtractor {
    pub fn new(merge: MergeBehavior) -> Self {
        Self { merge, fail: false }
    }

    /// Every call errors; used to exercise caller fallbacks.
    pub fn failing() -> Self {
        Self {
            merge: MergeBehavior::Dedupe,
            fail: true,
        }
    }

    fn problem_ops(payload: &str) -> Vec<&'static str> {
        let memory = longest_json_object(payload).unwrap_or_default();
        let problem = memory.get("problem").and_then(Value::as_str).unwrap_or("");
        let mut ops: Vec<(usize, &'static str)> = OPS
            .iter()
            .filter_map(|(c, name)| problem.find(&format!(" {c} ")).map(|i| (i, *name)))
            .collect();
        ops.sort();
        ops.into_iter().map(|(_, n)| n).take(2).collect()
    }

    fn skills(payload: &str) -> Value {
        let mut items: Vec<Value> = Self::problem_ops(payload)
            .into_iter()
            .map(|op| {
                json!({
                    "title": format!("Reduce after each {op}"),
                    "principle": format!("Apply the modulus right after every {op} so intermediate values stay small."),
                    "when_to_apply": format!("When the chain contains {op}."),
                    "tags": [format!("{op}-reduce")],
                })
            })
            .collect();
        let k = fnv1a(payload.as_bytes()) % PATTERNS;
        items.push(json!({
            "title": format!("Verify the final residue (pattern {k})"),
            "principle": "Recompute the last operation before committing to the answer digits.",
            "when_to_apply": "Before writing the final answer.",
            "tags": [format!("verify-{k}")],
        }));
        items.truncate(3);
        json!({ SKILLS_KEY: items })
    }

    fn mistakes(payload: &str) -> Value {
        let mut items: Vec<Value> = Self::problem_ops(payload)
            .into_iter()
            .map(|op| {
                json!({
                    "description": format!("Losing track of the residue after {op}"),
                    "why_it_happens": format!("The {op} result is carried forward without reduction."),
                    "how_to_avoid": format!("Reduce modulo the base immediately after each {op}."),
                    "tags": [format!("{op}-slip")],
                })
            })
            .collect();
        let k = fnv1a(payload.as_bytes()) % PATTERNS;
        items.push(json!({
            "description": format!("Emitting stray digits after the answer (pattern {k})"),
            "why_it_happens": "Generation continues past the final residue.",
            "how_to_avoid": "Stop immediately after the answer digits.",
            "tags": [format!("stray-{k}")],
        }));
        items.truncate(3);
        json!({ MISTAKES_KEY: items })
    }

    fn merge(&self, payload: &str, key: &str, headline: &str) -> Option<Value> {
        let group = longest_json_object(payload)?;
        let items = group.get(key)?.as_array()?.clone();
        let merged: Vec<Value> = match self.merge {
            MergeBehavior::Dedupe => {
                let mut seen = Vec::new();
                items
                    .into_iter()
                    .filter(|it| {
                        let h = it.get(headline).cloned().unwrap_or(Value::Null);
                        if seen.contains(&h) {
                            false
                        } else {
                            seen.push(h);
                            true
                        }
                    })
                    .collect()
            }
            MergeBehavior::Halve => items.into_iter().step_by(2).collect(),
            MergeBehavior::Identity => items,
            MergeBehavior::Garbage => return None,
        };
        let mut out = Map::new();
        out.insert(key.to_string(), Value::Array(merged));
        Some(Value::Object(out))
    }
}

impl Extractor for MockExtractor {
    fn complete(&self, request: &ExtractionRequest) -> Result<String, ExtractionError> {
        if self.fail {
            return Err(ExtractionError::Injected(format!("{:?}", request.kind)));
        }
        let p = &request.payload;
        let body = match request.kind {
            ExtractionKind::MemoryGeneration => return Err(ExtractionError::NotAnExtraction(request.kind)),
            ExtractionKind::SuccessSkills => Some(Self::skills(p)),
            ExtractionKind::FailureMistakes => Some(Self::mistakes(p)),
            ExtractionKind::MergeSkills => self.merge(p, SKILLS_KEY, "title"),
            ExtractionKind::MergeMistakes => self.merge(p, MISTAKES_KEY, "description"),
        };
        Ok(match body {
            Some(v) => format!("Here is the result:\n{v}\n"),
            None => "I could not produce a merged collection for this group.".to_string(),
        })
    }

    fn name(&self) -> &str {
        "mock"
    }
}
