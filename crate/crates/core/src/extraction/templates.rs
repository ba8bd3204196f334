use std::collections::BTreeMap;

use super::{ExtractionError, ExtractionKind};

const MEMORY_GENERATION: &str = "You are a careful mathematical problem-solving agent.

Solve the following problem step by step. Keep the reasoning coherent and self-contained, and end with a single final answer enclosed in \\boxed{{}}.

Problem:
{problem}";

const SUCCESS_SKILLS: &str = "You are an expert at distilling mathematical reasoning behavior into concise, reusable skills for a reinforcement-learning agent.

You will be given ONE successful math problem-solving memory. The memory contains the original problem, a compact reasoning trajectory, and a summarized raw attempt.

Your task:
1. Derive 1-3 GENERAL skills that likely contributed to the success.
2. Each skill must be broadly reusable across algebra, geometry, number theory, combinatorics, and olympiad-style reasoning.
3. Phrase each skill as an actionable principle; avoid task-specific constants, entity names, or one-off details unless they express a general method.
4. Merge overlapping ideas inside this response; do not output near-duplicate skills.
5. Use only evidence grounded in the provided memory.

Successful memory:
{memory_json}

Return ONLY valid JSON with key general_skills.";

const FAILURE_MISTAKES: &str = "You are an expert at analyzing failed mathematical reasoning and turning failures into concise, reusable cautionary skills for a reinforcement-learning agent.

You will be given ONE failed math problem-solving memory. The memory contains the original problem, summarized failure evidence, and the raw final attempt.

Your task:
1. Derive 1-3 COMMON mistakes that explain the failure.
2. Each item must describe a general failure mode, why it happens, and how to avoid it in future math reasoning.
3. Make every item broadly reusable across algebra, geometry, number theory, combinatorics, and olympiad-style reasoning.
4. Merge overlapping ideas inside this response; do not output near-duplicate mistakes.
5. Use only evidence grounded in the provided memory.

Failed memory:
{memory_json}

Return ONLY valid JSON with key common_mistakes.";

const MERGE_SKILLS: &str = "You are an expert at consolidating independently-generated math skills into a compact, non-redundant skill bank.

You will be given up to 32 general skills extracted from different memories. Some are duplicates, some partially overlap, and some are unique.

Your task:
1. Merge semantically duplicate or strongly overlapping skills.
2. Preserve all unique insights.
3. Prefer the most general, transferable wording.
4. Treat recurrence as evidence that the pattern is systematic and synthesize one stronger skill.
5. Do not force a fixed final count.
6. Do not mention specific problems, source memories, or dataset names.

General skills to merge:
{items_json}

Return ONLY valid JSON with key general_skills.";

const MERGE_MISTAKES: &str = "You are an expert at consolidating independently-generated math failure lessons into a compact, non-redundant caution bank.

You will be given up to 32 common-mistake items extracted from different memories. Some are duplicates, some partially overlap, and some are unique.

Your task:
1. Merge semantically duplicate or strongly overlapping mistakes.
2. Preserve all unique insights.
3. Prefer the most general, transferable wording.
4. Treat recurrence as evidence that the failure pattern is systematic and synthesize one stronger mistake item.
5. Do not force a fixed final count.
6. Do not mention specific problems, source memories, or dataset names.

Common mistakes to merge:
{items_json}

Return ONLY valid JSON with key common_mistakes.";

/// Student prompt; the student sees the problem only.
pub const STUDENT_PROMPT: &str = "Problem: {problem}

Please reason step by step, and put your final answer within \\boxed{{}}.";

/// Teacher prompt for one retrieved skill–mistake pair.
pub const TEACHER_PROMPT: &str = "You may use the following retrieved math-reasoning guidance as soft guidance.
Solve the current problem independently and do not quote it verbatim.

### General Principles
- **{skill_title}**: {skill_principle}
  _Apply when: {skill_when_to_apply}_

### Mistakes to Avoid
- **Don't**: {mistake_description}
  **Instead**: {mistake_how_to_avoid}

Problem: {problem}

Please reason step by step, and put your final answer within \\boxed{{}}.";

pub(super) fn template(kind: ExtractionKind) -> &'static str {
    match kind {
        ExtractionKind::MemoryGeneration => MEMORY_GENERATION,
        ExtractionKind::SuccessSkills => SUCCESS_SKILLS,
        ExtractionKind::FailureMistakes => FAILURE_MISTAKES,
        ExtractionKind::MergeSkills => MERGE_SKILLS,
        ExtractionKind::MergeMistakes => MERGE_MISTAKES,
    }
}

/// Substitutes `{name}` placeholders; `{{` and `}}` are literal braces.
/// Substituted values are inserted verbatim and never rescanned.
pub fn render_template(template: &str, inputs: &BTreeMap<&str, String>) -> Result<String, ExtractionError> {
    let mut out = String::with_capacity(template.len() + 256);
    let mut rest = template;
    while let Some(i) = rest.find(['{', '}']) {
        out.push_str(&rest[..i]);
        let tail = &rest[i..];
        if tail.starts_with("{{") {
            out.push('{');
            rest = &tail[2..];
        } else if tail.starts_with("}}") {
            out.push('}');
            rest = &tail[2..];
        } else if tail.starts_with('{') {
            let close = tail
                .find('}')
                .ok_or_else(|| ExtractionError::Template("unterminated placeholder".into()))?;
            let name = &tail[1..close];
            let value = inputs
                .get(name)
                .ok_or_else(|| ExtractionError::MissingPlaceholder(name.to_string()))?;
            out.push_str(value);
            rest = &tail[close + 1..];
        } else {
            return Err(ExtractionError::Template("unmatched '}'".into()));
        }
    }
    out.push_str(rest);
    Ok(out)
}

/// Placeholder names a template expects.
pub fn placeholders(template: &str) -> Vec<String> {
    let cleaned = template.replace("{{", "").replace("}}", "");
    let mut names = Vec::new();
    let mut rest = cleaned.as_str();
    while let Some(i) = rest.find('{') {
        let Some(j) = rest[i..].find('}') else { break };
        names.push(rest[i + 1..i + j].to_string());
        rest = &rest[i + j + 1..];
    }
    names
}
