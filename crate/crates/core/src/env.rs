//! Synthetic verifiable tasks: modular arithmetic chains with a digit verifier.

use std::fmt;
use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distill::Outcome;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("task count must be at least 1")]
    EmptyTaskSet,
    #[error("unknown difficulty {0}; expected 1, 2 or 3")]
    UnknownDifficulty(u8),
    #[error("malformed task record on line {line}: {reason}")]
    BadRecord { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Token layout shared by the policy and the verifier:
/// `0..=9` are digits, then `fillers` free-form work tokens, then the terminator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    pub fillers: usize,
}

impl Vocab {
    pub const DIGITS: usize = 10;

    pub fn new(fillers: usize) -> Self {
        Self { fillers }
    }

    pub fn size(&self) -> usize {
        Self::DIGITS + self.fillers + 1
    }

    pub fn end(&self) -> usize {
        Self::DIGITS + self.fillers
    }

    pub fn is_digit(&self, token: usize) -> bool {
        token < Self::DIGITS
    }

    pub fn is_filler(&self, token: usize) -> bool {
        (Self::DIGITS..self.end()).contains(&token)
    }

    pub fn digit_token(&self, c: char) -> Option<usize> {
        c.to_digit(10).map(|d| d as usize)
    }

    pub fn render(&self, tokens: &[usize]) -> String {
        tokens
            .iter()
            .map(|&t| {
                if self.is_digit(t) {
                    char::from(b'0' + t as u8).to_string()
                } else if t == self.end() {
                    "<end>".to_string()
                } else {
                    format!("<w{}>", t - Self::DIGITS)
                }
            })
            .collect::<Vec<_>>()
            .join(" ")
    }
}

impl Default for Vocab {
    fn default() -> Self {
        Self { fillers: 2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Op {
    #[serde(rename = "+")]
    Add,
    #[serde(rename = "-")]
    Sub,
    #[serde(rename = "*")]
    Mul,
}

impl Op {
    fn symbol(self) -> char {
        match self {
            Op::Add => '+',
            Op::Sub => '-',
            Op::Mul => '*',
        }
    }

    fn apply(self, acc: i64, x: i64, m: i64) -> i64 {
        let v = match self {
            Op::Add => acc + x,
            Op::Sub => acc - x,
            Op::Mul => acc * x,
        };
        v.rem_euclid(m)
    }
}

/// Difficulty level; controls chain length and modulus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Difficulty(u8);

impl Difficulty {
    pub fn new(level: u8) -> Result<Self, EnvError> {
        match level {
            1..=3 => Ok(Self(level)),
            other => Err(EnvError::UnknownDifficulty(other)),
        }
    }

    pub fn level(self) -> u8 {
        self.0
    }

    /// Number of operands in the chain.
    pub fn chain_length(self) -> usize {
        if self.0 == 1 {
            2
        } else {
            3
        }
    }
}

/// `((a op b) op c) mod m`, evaluated left to right.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub operands: Vec<u32>,
    pub ops: Vec<Op>,
    pub modulus: u32,
    pub answer: String,
}

impl TaskInstance {
    pub fn new(operands: Vec<u32>, ops: Vec<Op>, modulus: u32) -> Self {
        let answer = evaluate_chain(&operands, &ops, modulus).to_string();
        Self {
            operands,
            ops,
            modulus,
            answer,
        }
    }

    pub fn problem_text(&self) -> String {
        self.to_string()
    }

    pub fn answer_digits(&self) -> Vec<usize> {
        self.answer.bytes().map(|b| (b - b'0') as usize).collect()
    }
}

impl fmt::Display for TaskInstance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut expr = self.operands[0].to_string();
        for (i, (op, x)) in self.ops.iter().zip(&self.operands[1..]).enumerate() {
            if i > 0 {
                expr = format!("({expr})");
            }
            expr = format!("{expr} {} {x}", op.symbol());
        }
        write!(f, "{expr} mod {}", self.modulus)
    }
}

fn evaluate_chain(operands: &[u32], ops: &[Op], modulus: u32) -> i64 {
    let m = i64::from(modulus);
    let mut acc = i64::from(operands[0]).rem_euclid(m);
    for (op, x) in ops.iter().zip(&operands[1..]) {
        acc = op.apply(acc, i64::from(*x), m);
    }
    acc
}

/// Deterministic task list for `(seed, count, difficulty)`.
pub fn generate_tasks(seed: u64, count: usize, difficulty: Difficulty) -> Result<Vec<TaskInstance>, EnvError> {
    if count == 0 {
        return Err(EnvError::EmptyTaskSet);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ops = [Op::Add, Op::Sub, Op::Mul];
    Ok((0..count)
        .map(|_| {
            let n = difficulty.chain_length();
            let operands: Vec<u32> = (0..n).map(|_| rng.gen_range(0..10)).collect();
            let chain: Vec<Op> = (1..n).map(|_| ops[rng.gen_range(0..ops.len())]).collect();
            let modulus = if difficulty.level() < 3 { 10 } else { rng.gen_range(11..100) };
            TaskInstance::new(operands, chain, modulus)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifierResult {
    pub outcome: Outcome,
    pub extracted: Option<String>,
}

/// Last contiguous digit run before the terminator.
pub fn extract_answer(tokens: &[usize], vocab: &Vocab) -> Option<String> {
    let body = match tokens.iter().position(|&t| t == vocab.end()) {
        Some(i) => &tokens[..i],
        None => tokens,
    };
    let end = body.iter().rposition(|&t| vocab.is_digit(t))? + 1;
    let start = body[..end]
        .iter()
        .rposition(|&t| !vocab.is_digit(t))
        .map_or(0, |i| i + 1);
    Some(body[start..end].iter().map(|&t| char::from(b'0' + t as u8)).collect())
}

/// `+1` iff the extracted answer equals the ground truth digit string.
pub fn verify(task: &TaskInstance, tokens: &[usize], vocab: &Vocab) -> VerifierResult {
    let extracted = extract_answer(tokens, vocab);
    let outcome = match &extracted {
        Some(a) if *a == task.answer => Outcome::Success,
        _ => Outcome::Failure,
    };
    VerifierResult { outcome, extracted }
}

#[derive(Serialize, Deserialize)]
struct TaskRecord {
    problem: String,
    answer: String,
    operands: Vec<u32>,
    ops: Vec<Op>,
    modulus: u32,
}

/// One JSON record per line.
pub fn export_tasks<W: Write>(tasks: &[TaskInstance], mut out: W) -> Result<(), EnvError> {
    for t in tasks {
        let rec = TaskRecord {
            problem: t.problem_text(),
            answer: t.answer.clone(),
            operands: t.operands.clone(),
            ops: t.ops.clone(),
            modulus: t.modulus,
        };
        let line = serde_json::to_string(&rec).map_err(std::io::Error::other)?;
        writeln!(out, "{line}")?;
    }
    Ok(())
}

pub fn import_tasks<R: BufRead>(input: R) -> Result<Vec<TaskInstance>, EnvError> {
    let mut tasks = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |reason: String| EnvError::BadRecord { line: i + 1, reason };
        let rec: TaskRecord = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        if rec.operands.is_empty() || rec.ops.len() + 1 != rec.operands.len() || rec.modulus == 0 {
            return Err(bad("inconsistent operator chain".into()));
        }
        let task = TaskInstance::new(rec.operands, rec.ops, rec.modulus);
        if task.answer != rec.answer {
            return Err(bad(format!("answer {} does not match chain value {}", rec.answer, task.answer)));
        }
        if task.problem_text() != rec.problem {
            return Err(bad(format!("problem text {:?} does not match chain", rec.problem)));
        }
        tasks.push(task);
    }
    Ok(tasks)
}
