//! Synthetic verifiable environment: modular-arithmetic path-finding.
//!
//! A task fixes a start value, a target value, a modulus, and a length
//! budget. The policy emits a sequence of operation tokens (`+k` or `*k`,
//! applied mod `m`) ending in `eos`. The verifier replays the sequence and
//! pays reward 1 exactly when the sequence terminated with `eos` and the
//! folded value equals the target. Because the alphabet and length budget
//! are small, the full set of correct answers is enumerable, which gives the
//! trainer an exact notion of "mode coverage" and gives the theory checks an
//! exact outcome distribution.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

/// Default cap on the number of candidate sequences an enumeration may
/// visit before giving up.
pub const DEFAULT_ENUM_BUDGET: usize = 1 << 22;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EnvError {
    #[error("modulus must be in 1..=2^32-1, got {0}")]
    BadModulus(u64),
    #[error("start value {start} not reduced mod {modulus}")]
    BadStart { start: u64, modulus: u64 },
    #[error("target value {target} not reduced mod {modulus}")]
    BadTarget { target: u64, modulus: u64 },
    #[error("max_len must be at least 1")]
    ZeroMaxLen,
    #[error("vocabulary must contain exactly one eos token, found {0}")]
    EosCount(usize),
    #[error("token id {id} outside vocabulary of size {vocab_size}")]
    UnknownToken { id: usize, vocab_size: usize },
    #[error("sequence of length {len} exceeds task budget {max_len}")]
    TooLong { len: usize, max_len: usize },
    #[error("enumeration would visit more than {budget} candidate sequences")]
    EnumerationBudget { budget: usize },
}

/// One vocabulary entry: an arithmetic step or the end-of-sequence marker.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum OpEffect {
    Add(u64),
    Mul(u64),
    Eos,
}

impl OpEffect {
    /// Applies the operation to `state` mod `modulus`. `Eos` leaves the
    /// state unchanged.
    pub fn apply(self, state: u64, modulus: u64) -> u64 {
        match self {
            OpEffect::Add(k) => (state % modulus + k % modulus) % modulus,
            OpEffect::Mul(k) => (state % modulus) * (k % modulus) % modulus,
            OpEffect::Eos => state % modulus,
        }
    }

    pub fn is_eos(self) -> bool {
        matches!(self, OpEffect::Eos)
    }
}

impl fmt::Display for OpEffect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OpEffect::Add(k) => write!(f, "+{k}"),
            OpEffect::Mul(k) => write!(f, "*{k}"),
            OpEffect::Eos => write!(f, "eos"),
        }
    }
}

/// Token alphabet shared by every task in a run. Token ids are the indices
/// into the constructor's list; exactly one entry must be `Eos`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<OpEffect>,
    eos_id: usize,
}

impl Vocab {
    pub fn new(tokens: Vec<OpEffect>) -> Result<Self, EnvError> {
        let eos_ids: Vec<usize> = tokens
            .iter()
            .enumerate()
            .filter(|(_, t)| t.is_eos())
            .map(|(i, _)| i)
            .collect();
        if eos_ids.len() != 1 {
            return Err(EnvError::EosCount(eos_ids.len()));
        }
        Ok(Self { tokens, eos_id: eos_ids[0] })
    }

    /// Arithmetic ops followed by `eos`, the layout every config-built
    /// vocabulary uses.
    pub fn from_ops(ops: Vec<OpEffect>) -> Result<Self, EnvError> {
        let mut tokens = ops;
        tokens.push(OpEffect::Eos);
        Self::new(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn eos_id(&self) -> usize {
        self.eos_id
    }

    pub fn is_eos(&self, id: usize) -> bool {
        id == self.eos_id
    }

    pub fn tokens(&self) -> &[OpEffect] {
        &self.tokens
    }

    pub fn get(&self, id: usize) -> Result<OpEffect, EnvError> {
        self.tokens
            .get(id)
            .copied()
            .ok_or(EnvError::UnknownToken { id, vocab_size: self.tokens.len() })
    }

    /// Ids of the non-eos tokens, in id order.
    pub fn op_ids(&self) -> Vec<usize> {
        (0..self.tokens.len()).filter(|id| !self.is_eos(*id)).collect()
    }
}

/// One path-finding instance: reach `target` from `start` (mod `modulus`)
/// in at most `max_len` tokens including the closing `eos`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TaskSpec {
    pub start: u64,
    pub target: u64,
    pub modulus: u64,
    pub max_len: usize,
}

impl TaskSpec {
    pub fn new(start: u64, target: u64, modulus: u64, max_len: usize) -> Result<Self, EnvError> {
        if modulus == 0 || modulus > u64::from(u32::MAX) {
            return Err(EnvError::BadModulus(modulus));
        }
        if start >= modulus {
            return Err(EnvError::BadStart { start, modulus });
        }
        if target >= modulus {
            return Err(EnvError::BadTarget { target, modulus });
        }
        if max_len == 0 {
            return Err(EnvError::ZeroMaxLen);
        }
        Ok(Self { start, target, modulus, max_len })
    }
}

fn check_sequence(task: &TaskSpec, vocab: &Vocab, tokens: &[usize]) -> Result<(), EnvError> {
    if tokens.len() > task.max_len {
        return Err(EnvError::TooLong { len: tokens.len(), max_len: task.max_len });
    }
    for &id in tokens {
        vocab.get(id)?;
    }
    Ok(())
}

/// Binary verifier. Returns 1.0 exactly when the sequence reaches `eos` and
/// the folded state equals the target; truncated sequences (no `eos` within
/// the budget) score 0.0. Tokens after the first `eos` are ignored.
pub fn verify(task: &TaskSpec, vocab: &Vocab, tokens: &[usize]) -> Result<f64, EnvError> {
    check_sequence(task, vocab, tokens)?;
    let mut state = task.start;
    for &id in tokens {
        let op = vocab.get(id)?;
        if op.is_eos() {
            return Ok(if state == task.target { 1.0 } else { 0.0 });
        }
        state = op.apply(state, task.modulus);
    }
    Ok(0.0)
}

/// Renders the sequence as arithmetic lines, one per operation, with all
/// values reduced mod the task modulus, followed by a final answer line:
///
/// ```text
/// 1 + 3 = 4
/// answer = 4
/// ```
///
/// Truncated sequences render the same way; the answer line then reports the
/// state where generation stopped.
pub fn render_text(task: &TaskSpec, vocab: &Vocab, tokens: &[usize]) -> Result<String, EnvError> {
    check_sequence(task, vocab, tokens)?;
    let mut out = String::new();
    let mut state = task.start;
    for &id in tokens {
        let op = vocab.get(id)?;
        if op.is_eos() {
            break;
        }
        let next = op.apply(state, task.modulus);
        match op {
            OpEffect::Add(k) => {
                out.push_str(&alloc::format!("{state} + {} = {next}\n", k % task.modulus));
            }
            OpEffect::Mul(k) => {
                out.push_str(&alloc::format!("{state} * {} = {next}\n", k % task.modulus));
            }
            OpEffect::Eos => unreachable!(),
        }
        state = next;
    }
    out.push_str(&alloc::format!("answer = {state}"));
    Ok(out)
}

fn op_sequences_visit<F: FnMut(&[usize], u64)>(
    task: &TaskSpec,
    vocab: &Vocab,
    max_ops: usize,
    budget: usize,
    mut visit: F,
) -> Result<(), EnvError> {
    let op_ids = vocab.op_ids();
    let mut total: usize = 0;
    let mut count = 1usize;
    for _ in 0..=max_ops {
        total = total.saturating_add(count);
        count = count.saturating_mul(op_ids.len());
    }
    if total > budget {
        return Err(EnvError::EnumerationBudget { budget });
    }

    let mut prefix: Vec<usize> = Vec::new();
    let mut states: Vec<u64> = alloc::vec![task.start];
    visit(&prefix, task.start);
    if max_ops == 0 || op_ids.is_empty() {
        return Ok(());
    }
    // Iterative depth-first walk over op strings of length 1..=max_ops,
    // reusing the running state along the current prefix.
    let mut cursor: Vec<usize> = alloc::vec![0];
    loop {
        let depth = cursor.len();
        let choice = cursor[depth - 1];
        if choice >= op_ids.len() {
            cursor.pop();
            prefix.pop();
            states.pop();
            match cursor.last_mut() {
                Some(c) => *c += 1,
                None => return Ok(()),
            }
            continue;
        }
        let id = op_ids[choice];
        let state = vocab.get(id)?.apply(*states.last().unwrap(), task.modulus);
        prefix.push(id);
        states.push(state);
        visit(&prefix, state);
        if depth < max_ops {
            cursor.push(0);
        } else {
            prefix.pop();
            states.pop();
            cursor[depth - 1] += 1;
        }
    }
}

/// Every correct answer of the task: op strings of length at most
/// `max_len - 1` that fold to the target, each closed with `eos`.
///
/// Fails with [`EnvError::EnumerationBudget`] when the candidate space is
/// larger than `budget`.
pub fn enumerate_correct(
    task: &TaskSpec,
    vocab: &Vocab,
    budget: usize,
) -> Result<BTreeSet<Vec<usize>>, EnvError> {
    let mut correct = BTreeSet::new();
    let target = task.target;
    let eos = vocab.eos_id();
    op_sequences_visit(task, vocab, task.max_len - 1, budget, |prefix, state| {
        if state == target {
            let mut seq = prefix.to_vec();
            seq.push(eos);
            correct.insert(seq);
        }
    })?;
    Ok(correct)
}

/// Every sequence generation can produce: op strings closed with `eos`
/// within the budget, plus `eos`-free strings of exactly `max_len` ops
/// (truncation). Under any policy these outcomes partition the probability
/// space, which the analytical checks rely on.
pub fn enumerate_outcomes(
    task: &TaskSpec,
    vocab: &Vocab,
    budget: usize,
) -> Result<Vec<Vec<usize>>, EnvError> {
    let mut outcomes = BTreeSet::new();
    let eos = vocab.eos_id();
    op_sequences_visit(task, vocab, task.max_len - 1, budget, |prefix, _| {
        let mut seq = prefix.to_vec();
        seq.push(eos);
        outcomes.insert(seq);
    })?;
    if !vocab.op_ids().is_empty() {
        op_sequences_visit(task, vocab, task.max_len, budget, |prefix, _| {
            if prefix.len() == task.max_len {
                outcomes.insert(prefix.to_vec());
            }
        })?;
    }
    Ok(outcomes.into_iter().collect())
}

/// Number of distinct correct answers (modes) of the task.
pub fn count_modes(task: &TaskSpec, vocab: &Vocab, budget: usize) -> Result<usize, EnvError> {
    Ok(enumerate_correct(task, vocab, budget)?.len())
}
