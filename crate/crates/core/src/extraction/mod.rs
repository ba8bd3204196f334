//! Skill and mistake extraction backends.
//!
//! A backend turns a rendered prompt into response text; parsing the JSON
//! payload out of that text is shared, so the mock and HTTP backends go
//! through the same validation path.

mod http;
mod mock;
mod templates;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

pub use http::HttpExtractor;
pub use mock::{MergeBehavior, MockExtractor};
pub use templates::{placeholders, render_template, STUDENT_PROMPT, TEACHER_PROMPT};

#[derive(Debug, Error)]
pub enum ExtractionError {
    #[error("missing value for placeholder {{{0}}}")]
    MissingPlaceholder(String),
    #[error("malformed template: {0}")]
    Template(String),
    #[error("{0:?} prompts are not parsed into candidates")]
    NotAnExtraction(ExtractionKind),
    #[error("schema violation: {0}")]
    Schema(String),
    #[error("extractor config: {0}")]
    Config(String),
    #[error("credential environment variable {0} is not set")]
    MissingCredential(String),
    #[error("request failed after {attempts} attempts: {message}")]
    Transport { attempts: u32, message: String },
    #[error("endpoint returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("mock extractor failure: {0}")]
    Injected(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractionKind {
    MemoryGeneration,
    SuccessSkills,
    FailureMistakes,
    MergeSkills,
    MergeMistakes,
}

impl ExtractionKind {
    pub fn template(self) -> &'static str {
        templates::template(self)
    }

    /// JSON key the response must carry.
    pub fn expected_key(self) -> Option<&'static str> {
        match self {
            ExtractionKind::MemoryGeneration => None,
            ExtractionKind::SuccessSkills | ExtractionKind::MergeSkills => Some(SKILLS_KEY),
            ExtractionKind::FailureMistakes | ExtractionKind::MergeMistakes => Some(MISTAKES_KEY),
        }
    }
}

pub const SKILLS_KEY: &str = "general_skills";
pub const MISTAKES_KEY: &str = "common_mistakes";

pub fn render_prompt(kind: ExtractionKind, inputs: &BTreeMap<&str, String>) -> Result<String, ExtractionError> {
    render_template(kind.template(), inputs)
}

/// Candidate general skill as returned by an extractor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkillCandidate {
    pub title: String,
    pub principle: String,
    pub when_to_apply: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tags: Vec<String>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

/// Candidate common mistake as returned by an extractor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MistakeCandidate {
    pub description: String,
    pub why_it_happens: String,
    pub how_to_avoid: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tags: Vec<String>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

// bank bookkeeping fields that may echo back from a merge call
const BOOKKEEPING: [&str; 4] = ["skill_id", "mistake_id", "origin", "created_step"];

fn strip_bookkeeping(extra: &mut Map<String, Value>) {
    for k in BOOKKEEPING {
        extra.remove(k);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Candidates {
    Skills(Vec<SkillCandidate>),
    Mistakes(Vec<MistakeCandidate>),
}

impl Candidates {
    pub fn len(&self) -> usize {
        match self {
            Candidates::Skills(v) => v.len(),
            Candidates::Mistakes(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExtractionRequest {
    pub kind: ExtractionKind,
    pub payload: String,
}

impl ExtractionRequest {
    pub fn render(kind: ExtractionKind, inputs: &BTreeMap<&str, String>) -> Result<Self, ExtractionError> {
        Ok(Self {
            kind,
            payload: render_prompt(kind, inputs)?,
        })
    }

    pub fn expected_key(&self) -> Option<&'static str> {
        self.kind.expected_key()
    }
}

/// Result of an extraction call that reached the backend.
#[derive(Debug, Clone, PartialEq)]
pub enum ExtractOutcome {
    Candidates(Candidates),
    /// The response carried no usable JSON object or lacked the expected key;
    /// the caller keeps its original input.
    Fallback(String),
}

pub trait Extractor {
    /// Raw completion text for a rendered prompt.
    fn complete(&self, request: &ExtractionRequest) -> Result<String, ExtractionError>;

    fn name(&self) -> &str;
}

/// Runs the request and parses the response into candidates.
pub fn extract(extractor: &dyn Extractor, request: &ExtractionRequest) -> Result<ExtractOutcome, ExtractionError> {
    let key = request
        .expected_key()
        .ok_or(ExtractionError::NotAnExtraction(request.kind))?;
    let text = extractor.complete(request)?;
    parse_response(&text, key)
}

/// Parses response text that should contain a JSON object with `key`.
pub fn parse_response(text: &str, key: &str) -> Result<ExtractOutcome, ExtractionError> {
    let Some(obj) = longest_json_object(text) else {
        return Ok(ExtractOutcome::Fallback("no JSON object in response".into()));
    };
    let Some(items) = obj.get(key) else {
        return Ok(ExtractOutcome::Fallback(format!("response has no {key} key")));
    };
    let Value::Array(items) = items else {
        return Err(ExtractionError::Schema(format!("{key} must be an array")));
    };
    let schema = |i: usize, e: serde_json::Error| ExtractionError::Schema(format!("{key}[{i}]: {e}"));
    if key == SKILLS_KEY {
        let mut out = Vec::with_capacity(items.len());
        for (i, v) in items.iter().enumerate() {
            let mut c: SkillCandidate = serde_json::from_value(v.clone()).map_err(|e| schema(i, e))?;
            strip_bookkeeping(&mut c.extra);
            out.push(c);
        }
        Ok(ExtractOutcome::Candidates(Candidates::Skills(out)))
    } else {
        let mut out = Vec::with_capacity(items.len());
        for (i, v) in items.iter().enumerate() {
            let mut c: MistakeCandidate = serde_json::from_value(v.clone()).map_err(|e| schema(i, e))?;
            strip_bookkeeping(&mut c.extra);
            out.push(c);
        }
        Ok(ExtractOutcome::Candidates(Candidates::Mistakes(out)))
    }
}

/// Longest balanced `{...}` span that parses as a JSON object.
pub fn longest_json_object(text: &str) -> Option<Map<String, Value>> {
    let bytes = text.as_bytes();
    let mut best: Option<(usize, Map<String, Value>)> = None;
    let mut start = 0;
    while let Some(off) = text[start..].find('{') {
        let open = start + off;
        if let Some(end) = balanced_end(bytes, open) {
            let len = end - open;
            if best.as_ref().is_none_or(|(l, _)| len > *l) {
                if let Ok(Value::Object(m)) = serde_json::from_str(&text[open..end]) {
                    best = Some((len, m));
                }
            }
        }
        start = open + 1;
    }
    best.map(|(_, m)| m)
}

// Exclusive end of the object opening at `open`, skipping string contents.
fn balanced_end(bytes: &[u8], open: usize) -> Option<usize> {
    let mut depth = 0usize;
    let mut in_str = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(open) {
        if in_str {
            match (escaped, b) {
                (true, _) => escaped = false,
                (false, b'\\') => escaped = true,
                (false, b'"') => in_str = false,
                _ => {}
            }
            continue;
        }
        match b {
            b'"' => in_str = true,
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(i + 1);
                }
            }
            _ => {}
        }
    }
    None
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    #[default]
    Mock,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractorConfig {
    pub backend: Backend,
    /// Full chat-completions URL.
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub timeout_secs: f64,
    pub retries: u32,
    pub backoff_ms: u64,
    pub credential_env: String,
    pub temperature: f64,
    pub mock_merge: MergeBehavior,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        Self {
            backend: Backend::Mock,
            endpoint: None,
            model: None,
            timeout_secs: 60.0,
            retries: 3,
            backoff_ms: 500,
            credential_env: "SGSD_EXTRACTOR_API_KEY".into(),
            temperature: 0.0,
            mock_merge: MergeBehavior::Dedupe,
        }
    }
}

impl ExtractorConfig {
    pub fn validate(&self) -> Result<(), ExtractionError> {
        if self.backend == Backend::Http {
            if self.endpoint.as_deref().is_none_or(str::is_empty) {
                return Err(ExtractionError::Config("http backend requires an endpoint".into()));
            }
            if self.model.as_deref().is_none_or(str::is_empty) {
                return Err(ExtractionError::Config("http backend requires a model".into()));
            }
        }
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return Err(ExtractionError::Config(format!("timeout_secs must be positive, got {}", self.timeout_secs)));
        }
        Ok(())
    }

    pub fn build(&self) -> Result<Box<dyn Extractor>, ExtractionError> {
        self.validate()?;
        Ok(match self.backend {
            Backend::Mock => Box::new(MockExtractor::new(self.mock_merge)),
            Backend::Http => Box::new(HttpExtractor::from_config(self)?),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inputs(pairs: &[(&'static str, &str)]) -> BTreeMap<&'static str, String> {
        pairs.iter().map(|(k, v)| (*k, v.to_string())).collect()
    }

    #[test]
    fn prompt_contents() {
        let s = render_prompt(ExtractionKind::SuccessSkills, &inputs(&[("memory_json", "{}")])).unwrap();
        assert!(s.contains("Derive 1-3 GENERAL skills"));
        assert!(s.ends_with("Return ONLY valid JSON with key general_skills."));
        let m = render_prompt(ExtractionKind::MergeSkills, &inputs(&[("items_json", "[]")])).unwrap();
        assert!(m.contains("up to 32 general skills"));
        let m = render_prompt(ExtractionKind::MergeMistakes, &inputs(&[("items_json", "[]")])).unwrap();
        assert!(m.contains("up to 32 common-mistake items"));
        let g = render_prompt(ExtractionKind::MemoryGeneration, &inputs(&[("problem", "1 + 1 mod 10")])).unwrap();
        assert!(g.contains("enclosed in \\boxed{}."));
        assert!(g.ends_with("Problem:\n1 + 1 mod 10"));
    }

    #[test]
    fn rendering_is_exact_and_stable() {
        let i = inputs(&[("memory_json", "{\"problem\": \"{x}\"}")]);
        let a = render_prompt(ExtractionKind::FailureMistakes, &i).unwrap();
        assert_eq!(a, render_prompt(ExtractionKind::FailureMistakes, &i).unwrap());
        // substituted braces are not re-expanded
        assert!(a.contains("{\"problem\": \"{x}\"}"));
        for kind in [
            ExtractionKind::MemoryGeneration,
            ExtractionKind::SuccessSkills,
            ExtractionKind::FailureMistakes,
            ExtractionKind::MergeSkills,
            ExtractionKind::MergeMistakes,
        ] {
            let names = placeholders(kind.template());
            assert_eq!(names.len(), 1, "{kind:?}");
            let filled: BTreeMap<&str, String> = names.iter().map(|n| (n.as_str(), "V".to_string())).collect();
            let out = render_template(kind.template(), &filled).unwrap();
            assert!(!out.contains("{memory_json}") && !out.contains("{items_json}") && !out.contains("{problem}"));
        }
    }

    #[test]
    fn missing_placeholder() {
        let err = render_prompt(ExtractionKind::MergeSkills, &BTreeMap::new()).unwrap_err();
        assert!(matches!(err, ExtractionError::MissingPlaceholder(ref n) if n == "items_json"));
    }

    #[test]
    fn longest_object_is_chosen() {
        let text = r#"Sure! {"a": 1} and here: {"general_skills": [{"title": "t {x}", "principle": "p", "when_to_apply": "w"}]} done"#;
        let obj = longest_json_object(text).unwrap();
        assert!(obj.contains_key("general_skills"));
        assert!(longest_json_object("no json here").is_none());
        assert!(longest_json_object("{\"unterminated\": ").is_none());
    }

    #[test]
    fn missing_key_falls_back() {
        let out = parse_response(r#"{"common_mistakes": []}"#, SKILLS_KEY).unwrap();
        assert!(matches!(out, ExtractOutcome::Fallback(_)));
        let out = parse_response("I cannot help with that.", MISTAKES_KEY).unwrap();
        assert!(matches!(out, ExtractOutcome::Fallback(_)));
    }

    #[test]
    fn extras_are_preserved() {
        let text = r#"{"general_skills": [{"title": "T", "principle": "P", "when_to_apply": "W", "confidence": 0.9, "skill_id": "gen_004"}]}"#;
        let ExtractOutcome::Candidates(Candidates::Skills(v)) = parse_response(text, SKILLS_KEY).unwrap() else {
            panic!("expected skills");
        };
        assert_eq!(v[0].title, "T");
        assert_eq!(v[0].extra.get("confidence"), Some(&serde_json::json!(0.9)));
        assert!(!v[0].extra.contains_key("skill_id"));
    }

    #[test]
    fn missing_field_is_a_schema_error() {
        let text = r#"{"common_mistakes": [{"description": "d", "how_to_avoid": "h"}]}"#;
        let err = parse_response(text, MISTAKES_KEY).unwrap_err();
        assert!(err.to_string().contains("why_it_happens"), "{err}");
    }

    #[test]
    fn config_validation() {
        let mut c = ExtractorConfig {
            backend: Backend::Http,
            ..ExtractorConfig::default()
        };
        assert!(c.validate().is_err());
        c.endpoint = Some("http://localhost:1/v1/chat/completions".into());
        assert!(c.validate().is_err());
        c.model = Some("m".into());
        assert!(c.validate().is_ok());
        assert!(ExtractorConfig::default().build().is_ok());
    }
}
