//! Context-windowed tabular softmax policy.
//!
//! The policy conditions on the task index and the last `context_window`
//! generated tokens. Every reachable context owns one row of logits, stored
//! in a single flat parameter vector so finite-difference probes and
//! gradient-ascent updates are plain index arithmetic. Log-probabilities,
//! entropies, and score-function gradients are exact: the gradient of a
//! token's log-probability with respect to its context row is one-hot minus
//! softmax, and zero everywhere else.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;

use crate::env::{self, TaskSpec, Vocab};
use crate::math;
use crate::rng;

pub type TokenId = usize;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PolicyError {
    #[error("task index {idx} out of range for {n_tasks} task(s)")]
    TaskOutOfRange { idx: usize, n_tasks: usize },
    #[error("context (task {task}, window {window:?}) is not in the policy table")]
    UnknownContext { task: usize, window: Vec<TokenId> },
    #[error("group size must be at least 2, got {got}")]
    GroupTooSmall { got: usize },
    #[error("environment error: {0}")]
    Env(#[from] env::EnvError),
}

/// A conditioning state: which task is being solved and the most recent
/// tokens, capped at the configured window length.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Context {
    pub task: usize,
    pub window: Vec<TokenId>,
}

/// Immutable table layout shared by every parameter snapshot of a run: the
/// tasks, the vocabulary, and the sorted enumeration of reachable contexts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PolicyShape {
    tasks: Vec<TaskSpec>,
    vocab: Vocab,
    context_window: usize,
    contexts: Vec<Context>,
    index: BTreeMap<Context, usize>,
}

impl PolicyShape {
    /// Enumerates every context reachable while generating for the given
    /// tasks: all windows of non-eos tokens up to the window length (eos
    /// ends generation, so it never appears inside a window).
    pub fn build(
        tasks: Vec<TaskSpec>,
        vocab: Vocab,
        context_window: usize,
    ) -> Result<Arc<Self>, PolicyError> {
        let mut contexts = Vec::new();
        let op_ids = vocab.op_ids();
        for (task_idx, task) in tasks.iter().enumerate() {
            let max_window = context_window.min(task.max_len - 1);
            for len in 0..=max_window {
                let mut window: Vec<TokenId> = alloc::vec![0; len];
                if len == 0 {
                    contexts.push(Context { task: task_idx, window: Vec::new() });
                    continue;
                }
                if op_ids.is_empty() {
                    break;
                }
                'odometer: loop {
                    contexts.push(Context {
                        task: task_idx,
                        window: window.iter().map(|i| op_ids[*i]).collect(),
                    });
                    for slot in (0..len).rev() {
                        window[slot] += 1;
                        if window[slot] < op_ids.len() {
                            continue 'odometer;
                        }
                        window[slot] = 0;
                    }
                    break;
                }
            }
        }
        contexts.sort();
        let index = contexts.iter().cloned().zip(0..).collect();
        Ok(Arc::new(Self { tasks, vocab, context_window, contexts, index }))
    }

    pub fn tasks(&self) -> &[TaskSpec] {
        &self.tasks
    }

    pub fn task(&self, idx: usize) -> Result<&TaskSpec, PolicyError> {
        self.tasks
            .get(idx)
            .ok_or(PolicyError::TaskOutOfRange { idx, n_tasks: self.tasks.len() })
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn context_window(&self) -> usize {
        self.context_window
    }

    pub fn n_contexts(&self) -> usize {
        self.contexts.len()
    }

    pub fn n_params(&self) -> usize {
        self.contexts.len() * self.vocab.len()
    }

    pub fn contexts(&self) -> &[Context] {
        &self.contexts
    }

    pub fn row_of(&self, ctx: &Context) -> Result<usize, PolicyError> {
        self.index.get(ctx).copied().ok_or_else(|| PolicyError::UnknownContext {
            task: ctx.task,
            window: ctx.window.clone(),
        })
    }

    /// Context in force when generating token `t` (0-based) of `tokens`.
    pub fn context_at(&self, task: usize, tokens: &[TokenId], t: usize) -> Context {
        let lo = t.saturating_sub(self.context_window);
        Context { task, window: tokens[lo..t].to_vec() }
    }

    /// Row index for each position of a full token sequence.
    pub fn rows_for(&self, task: usize, tokens: &[TokenId]) -> Result<Vec<usize>, PolicyError> {
        self.task(task)?;
        (0..tokens.len())
            .map(|t| self.row_of(&self.context_at(task, tokens, t)))
            .collect()
    }
}

/// One snapshot of policy parameters over a shared [`PolicyShape`].
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    shape: Arc<PolicyShape>,
    logits: Vec<f64>,
}

impl PolicyParams {
    /// The uniform policy: every logit zero.
    pub fn uniform(shape: Arc<PolicyShape>) -> Self {
        let logits = alloc::vec![0.0; shape.n_params()];
        Self { shape, logits }
    }

    /// Independent uniform logits in `[-scale, scale]`, for randomized
    /// checks.
    pub fn random(shape: Arc<PolicyShape>, scale: f64, rng: &mut rng::Rng) -> Self {
        let mut params = Self::uniform(shape);
        for v in params.logits.iter_mut() {
            *v = rng::uniform(rng, -scale, scale);
        }
        params
    }

    pub fn shape(&self) -> &Arc<PolicyShape> {
        &self.shape
    }

    pub fn n_params(&self) -> usize {
        self.logits.len()
    }

    pub fn param(&self, i: usize) -> f64 {
        self.logits[i]
    }

    pub fn set_param(&mut self, i: usize, v: f64) {
        self.logits[i] = v;
    }

    pub fn params(&self) -> &[f64] {
        &self.logits
    }

    pub fn logits_row(&self, row: usize) -> &[f64] {
        let v = self.shape.vocab.len();
        &self.logits[row * v..(row + 1) * v]
    }

    pub fn set_row(&mut self, row: usize, values: &[f64]) {
        let v = self.shape.vocab.len();
        self.logits[row * v..(row + 1) * v].copy_from_slice(values);
    }

    /// In-place gradient-ascent update `theta += step * grad`.
    pub fn axpy(&mut self, step: f64, grad: &[f64]) {
        debug_assert_eq!(grad.len(), self.logits.len());
        for (p, g) in self.logits.iter_mut().zip(grad.iter()) {
            *p += step * g;
        }
    }

    /// Entropy (nats) of the next-token distribution at `ctx`.
    pub fn token_entropy(&self, ctx: &Context) -> Result<f64, PolicyError> {
        let row = self.shape.row_of(ctx)?;
        Ok(math::entropy_from_logits(self.logits_row(row)))
    }

    /// Per-position log-probabilities of a token sequence for a task.
    pub fn token_logprobs(&self, task: usize, tokens: &[TokenId]) -> Result<Vec<f64>, PolicyError> {
        let rows = self.shape.rows_for(task, tokens)?;
        Ok(rows
            .iter()
            .zip(tokens.iter())
            .map(|(&row, &tok)| math::log_softmax(self.logits_row(row))[tok])
            .collect())
    }

    /// Total log-probability of a token sequence for a task.
    pub fn logprob(&self, task: usize, tokens: &[TokenId]) -> Result<f64, PolicyError> {
        Ok(self.token_logprobs(task, tokens)?.iter().sum())
    }

    /// Exact gradient of `logprob(task, tokens)` with respect to the flat
    /// parameter vector: for each visited context row, one-hot at the taken
    /// token minus the row softmax.
    pub fn grad_logprob(&self, task: usize, tokens: &[TokenId]) -> Result<Vec<f64>, PolicyError> {
        let mut grad = alloc::vec![0.0; self.n_params()];
        let v = self.shape.vocab.len();
        let rows = self.shape.rows_for(task, tokens)?;
        for (&row, &tok) in rows.iter().zip(tokens.iter()) {
            let probs = math::softmax(self.logits_row(row));
            let base = row * v;
            for (a, p) in probs.iter().enumerate() {
                grad[base + a] -= p;
            }
            grad[base + tok] += 1.0;
        }
        Ok(grad)
    }

    /// Samples one token sequence for `task`, stopping at eos or at the
    /// task's length budget, and records each token's log-probability.
    fn sample_tokens(
        &self,
        task_idx: usize,
        rng: &mut rng::Rng,
    ) -> Result<(Vec<TokenId>, Vec<f64>), PolicyError> {
        let task = *self.shape.task(task_idx)?;
        let mut tokens: Vec<TokenId> = Vec::new();
        let mut logprobs: Vec<f64> = Vec::new();
        for t in 0..task.max_len {
            let ctx = self.shape.context_at(task_idx, &tokens, t);
            let row = self.shape.row_of(&ctx)?;
            let logp = math::log_softmax(self.logits_row(row));
            let u = rng::uniform01(rng);
            let mut acc = 0.0;
            let mut chosen = logp.len() - 1;
            for (a, lp) in logp.iter().enumerate() {
                acc += math::exp(*lp);
                if u < acc {
                    chosen = a;
                    break;
                }
            }
            tokens.push(chosen);
            logprobs.push(logp[chosen]);
            if self.shape.vocab.is_eos(chosen) {
                break;
            }
        }
        Ok((tokens, logprobs))
    }
}

/// One sampled answer: its tokens, the per-token log-probabilities under the
/// snapshot that generated it, the verifier's reward, and the rendered text
/// the diversity scorer consumes.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub tokens: Vec<TokenId>,
    pub logprobs: Vec<f64>,
    pub reward: f64,
    pub text: String,
}

impl Rollout {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn is_correct(&self) -> bool {
        self.reward == 1.0
    }
}

/// A group of rollouts for one task, the unit over which advantages,
/// diversity scores, and coupling weights are computed.
#[derive(Debug, Clone, PartialEq)]
pub struct Group {
    pub task: usize,
    pub rollouts: Vec<Rollout>,
}

impl Group {
    pub fn size(&self) -> usize {
        self.rollouts.len()
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.rollouts.iter().map(|r| r.reward).collect()
    }

    pub fn texts(&self) -> Vec<&str> {
        self.rollouts.iter().map(|r| r.text.as_str()).collect()
    }
}

/// Samples a group of `group_size` rollouts for `task_idx` from the frozen
/// snapshot `params_old`, verifying and rendering each one.
pub fn sample_group(
    params_old: &PolicyParams,
    task_idx: usize,
    group_size: usize,
    rng: &mut rng::Rng,
) -> Result<Group, PolicyError> {
    if group_size < 2 {
        return Err(PolicyError::GroupTooSmall { got: group_size });
    }
    let shape = params_old.shape.clone();
    let task = *shape.task(task_idx)?;
    let mut rollouts = Vec::with_capacity(group_size);
    for _ in 0..group_size {
        let (tokens, logprobs) = params_old.sample_tokens(task_idx, rng)?;
        let reward = env::verify(&task, shape.vocab(), &tokens)?;
        let text = env::render_text(&task, shape.vocab(), &tokens)?;
        rollouts.push(Rollout { tokens, logprobs, reward, text });
    }
    Ok(Group { task: task_idx, rollouts })
}
