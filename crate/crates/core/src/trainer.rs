//! One-machine trainer combining the clipped group-relative surrogate, a
//! reference-policy KL penalty, and the coupled local entropy surrogate.
//!
//! Each step freezes the current parameters as the sampling snapshot,
//! draws one group per task, scores diversity, shapes rewards into
//! advantages and coupling weights, and ascends
//!
//! ```text
//! J = mean_groups [ surrogate - beta * KL(pi || pi_ref) + lambda_local * J_local ]
//! ```
//!
//! by plain gradient ascent. Ablations are expressed as coefficient and
//! weight substitutions on the same code path, so disabling both diversity
//! terms reproduces the plain baseline bit for bit.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;

use crate::diversity::{self, DiversityError, DiversityScore, Embedder};
use crate::env::{self, EnvError, TaskSpec, Vocab};
use crate::local_entropy;
use crate::math;
use crate::policy::{sample_group, Group, PolicyError, PolicyParams, PolicyShape, TokenId};
use crate::rng;
use crate::shaping::{self, GroupShaping};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("unknown method '{0}', expected dsdr, grpo, dsdr_no_gd, or dsdr_no_gc")]
    UnknownMethod(String),
    #[error("training needs at least one task")]
    NoTasks,
    #[error("task {task} has {modes} correct answer(s); training tasks need at least 2")]
    TaskNotMultimode { task: usize, modes: usize },
    #[error("environment error: {0}")]
    Env(#[from] EnvError),
    #[error("policy error: {0}")]
    Policy(#[from] PolicyError),
    #[error("diversity error: {0}")]
    Diversity(#[from] DiversityError),
    #[error("non-finite gradient at step {step}, parameter {param_index}: {value}")]
    NonFiniteGradient { step: usize, param_index: usize, value: f64 },
}

/// Which objective variant to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Method {
    /// Full method: diversity bonus plus coupled local entropy.
    #[default]
    Dsdr,
    /// Plain baseline: both diversity coefficients forced to zero.
    Grpo,
    /// Ablation without the global diversity bonus (`lambda_d = 0`); the
    /// coupling weights are still computed from diversity.
    DsdrNoGd,
    /// Ablation without diversity-guided coupling: the local entropy term
    /// is allocated uniformly over the correct rollouts.
    DsdrNoGc,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Dsdr => "dsdr",
            Method::Grpo => "grpo",
            Method::DsdrNoGd => "dsdr_no_gd",
            Method::DsdrNoGc => "dsdr_no_gc",
        }
    }

    pub const ALL: [Method; 4] =
        [Method::Dsdr, Method::Grpo, Method::DsdrNoGd, Method::DsdrNoGc];
}

impl core::str::FromStr for Method {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dsdr" => Ok(Method::Dsdr),
            "grpo" => Ok(Method::Grpo),
            "dsdr_no_gd" => Ok(Method::DsdrNoGd),
            "dsdr_no_gc" => Ok(Method::DsdrNoGc),
            other => Err(TrainError::UnknownMethod(String::from(other))),
        }
    }
}

/// All hyperparameters of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub method: Method,
    pub group_size: usize,
    pub steps: usize,
    pub seed: u64,
    pub learning_rate: f64,
    /// Scale of the correct-only diversity bonus on rewards.
    pub lambda_d: f64,
    /// Clip ceiling for the combined diversity score.
    pub sigma_d: f64,
    /// Scale of the local entropy surrogate in the objective.
    pub lambda_local: f64,
    /// Temperature of the coupling softmax over correct rollouts.
    pub tau: f64,
    /// Reference-policy KL coefficient.
    pub beta: f64,
    pub eps_clip_low: f64,
    pub eps_clip_high: f64,
    /// Additive stabilizer for the advantage denominator.
    pub eps_std: f64,
    pub context_window: usize,
    /// Gradient-ascent passes per sampled batch.
    pub inner_epochs: usize,
    pub embed_dim: usize,
    pub hash_seed: u64,
    /// Freeze the importance ratio when differentiating the local entropy
    /// surrogate.
    pub ratio_stop_grad: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            method: Method::Dsdr,
            group_size: 8,
            steps: 500,
            seed: 0,
            learning_rate: 0.1,
            lambda_d: 0.001,
            sigma_d: 0.5,
            lambda_local: 0.001,
            tau: 5.0,
            beta: 0.0,
            eps_clip_low: 0.2,
            eps_clip_high: 0.28,
            eps_std: 1e-6,
            context_window: 2,
            inner_epochs: 1,
            embed_dim: diversity::DEFAULT_EMBED_DIM,
            hash_seed: 0,
            ratio_stop_grad: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |msg: &str| Err(TrainError::InvalidConfig(String::from(msg)));
        if self.group_size < 2 {
            return fail("group_size must be at least 2");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return fail("learning_rate must be a positive finite number");
        }
        if !(self.lambda_d.is_finite() && self.lambda_d >= 0.0) {
            return fail("lambda_d must be non-negative");
        }
        if !(self.sigma_d.is_finite() && self.sigma_d > 0.0) {
            return fail("sigma_d must be positive");
        }
        if self.lambda_d * self.sigma_d >= 1.0 {
            return fail("lambda_d * sigma_d must stay below 1 so the bonus cannot outweigh correctness");
        }
        if !(self.lambda_local.is_finite() && self.lambda_local >= 0.0) {
            return fail("lambda_local must be non-negative");
        }
        if !(self.tau.is_finite() && self.tau >= 0.0) {
            return fail("tau must be non-negative");
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return fail("beta must be non-negative");
        }
        if !(self.eps_clip_low.is_finite()
            && self.eps_clip_high.is_finite()
            && self.eps_clip_low > 0.0
            && self.eps_clip_high > 0.0
            && self.eps_clip_low < 1.0)
        {
            return fail("clip range must satisfy 0 < eps_clip_low < 1 and eps_clip_high > 0");
        }
        if !(self.eps_std.is_finite() && self.eps_std > 0.0) {
            return fail("eps_std must be positive");
        }
        if self.inner_epochs == 0 {
            return fail("inner_epochs must be at least 1");
        }
        if self.embed_dim == 0 {
            return fail("embed_dim must be at least 1");
        }
        Ok(())
    }

    /// Coefficients after applying the method's ablation: effective
    /// `lambda_d`, effective `lambda_local`, and whether the local term is
    /// allocated by the coupling softmax (vs uniformly over correct).
    fn effective(&self) -> (f64, f64, bool) {
        match self.method {
            Method::Dsdr => (self.lambda_d, self.lambda_local, true),
            Method::Grpo => (0.0, 0.0, true),
            Method::DsdrNoGd => (0.0, self.lambda_local, true),
            Method::DsdrNoGc => (self.lambda_d, self.lambda_local, false),
        }
    }
}

/// One group with everything the objective needs: diversity scores and the
/// shaped rewards, advantages, and allocation weights.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluatedGroup {
    pub group: Group,
    pub scores: Vec<DiversityScore>,
    pub shaping: GroupShaping,
    /// Allocation weights for the local entropy term (coupling softmax, or
    /// uniform over correct rollouts for the no-coupling ablation).
    pub weights: Vec<f64>,
}

/// Scores and shapes one sampled group.
pub fn evaluate_group(
    group: Group,
    embedder: &Embedder,
    sigma_d: f64,
    lambda_d: f64,
    eps_std: f64,
    tau: f64,
    use_coupling: bool,
) -> Result<EvaluatedGroup, TrainError> {
    let texts = group.texts();
    let scores = diversity::score_group(&texts, embedder, sigma_d)?;
    let rewards = group.rewards();
    let d_bars: Vec<f64> = scores.iter().map(|s| s.d_bar).collect();
    let shaping = shaping::shape_group(&rewards, &d_bars, lambda_d, eps_std, tau);
    let weights = if use_coupling {
        shaping.weights.clone()
    } else {
        let n_correct = shaping.correct.len();
        let mut w = alloc::vec![0.0; group.size()];
        for &i in &shaping.correct {
            w[i] = 1.0 / n_correct as f64;
        }
        w
    };
    Ok(EvaluatedGroup { group, scores, shaping, weights })
}

/// Clipped importance-weighted surrogate for one group, averaged over
/// rollouts and steps. Old log-probabilities are the ones recorded at
/// sampling time.
pub fn clipped_surrogate(
    group: &Group,
    advantages: &[f64],
    params_new: &PolicyParams,
    eps_clip_low: f64,
    eps_clip_high: f64,
) -> Result<f64, PolicyError> {
    let mut total = 0.0;
    for (rollout, &adv) in group.rollouts.iter().zip(advantages.iter()) {
        let logp_new = params_new.token_logprobs(group.task, &rollout.tokens)?;
        let t_inv = 1.0 / rollout.len() as f64;
        for (lp_new, lp_old) in logp_new.iter().zip(rollout.logprobs.iter()) {
            let rho = math::exp(lp_new - lp_old);
            let unclipped = rho * adv;
            let clipped = rho.clamp(1.0 - eps_clip_low, 1.0 + eps_clip_high) * adv;
            total += t_inv * unclipped.min(clipped);
        }
    }
    Ok(total / group.size() as f64)
}

/// Exact gradient of [`clipped_surrogate`]. A token contributes whenever
/// the unclipped branch is active (`rho * adv <= clip(rho) * adv`); at the
/// clip boundary both branches have the same value and the unclipped slope
/// is used.
pub fn clipped_surrogate_grad(
    group: &Group,
    advantages: &[f64],
    params_new: &PolicyParams,
    eps_clip_low: f64,
    eps_clip_high: f64,
) -> Result<Vec<f64>, PolicyError> {
    let shape = params_new.shape();
    let v = shape.vocab().len();
    let g_inv = 1.0 / group.size() as f64;
    let mut grad = alloc::vec![0.0; params_new.n_params()];
    for (rollout, &adv) in group.rollouts.iter().zip(advantages.iter()) {
        let logp_new = params_new.token_logprobs(group.task, &rollout.tokens)?;
        let rows = shape.rows_for(group.task, &rollout.tokens)?;
        let t_inv = 1.0 / rollout.len() as f64;
        for (t, &row) in rows.iter().enumerate() {
            let rho = math::exp(logp_new[t] - rollout.logprobs[t]);
            let unclipped = rho * adv;
            let clipped = rho.clamp(1.0 - eps_clip_low, 1.0 + eps_clip_high) * adv;
            if unclipped > clipped {
                continue;
            }
            let coeff = g_inv * t_inv * rho * adv;
            let probs = math::softmax(params_new.logits_row(row));
            let base = row * v;
            for (a, p) in probs.iter().enumerate() {
                grad[base + a] -= coeff * p;
            }
            grad[base + rollout.tokens[t]] += coeff;
        }
    }
    Ok(grad)
}

/// Per-token KL to the reference policy over the group's visited contexts,
/// averaged the same way as the surrogate.
pub fn kl_to_reference(
    group: &Group,
    params_new: &PolicyParams,
    params_ref: &PolicyParams,
) -> Result<f64, PolicyError> {
    let shape = params_new.shape();
    let g_inv = 1.0 / group.size() as f64;
    let mut total = 0.0;
    for rollout in &group.rollouts {
        let rows = shape.rows_for(group.task, &rollout.tokens)?;
        let t_inv = 1.0 / rollout.len() as f64;
        for &row in &rows {
            total += g_inv
                * t_inv
                * math::kl_from_logits(params_new.logits_row(row), params_ref.logits_row(row));
        }
    }
    Ok(total)
}

/// Exact gradient of [`kl_to_reference`] with respect to `params_new`.
pub fn kl_to_reference_grad(
    group: &Group,
    params_new: &PolicyParams,
    params_ref: &PolicyParams,
) -> Result<Vec<f64>, PolicyError> {
    let shape = params_new.shape();
    let v = shape.vocab().len();
    let g_inv = 1.0 / group.size() as f64;
    let mut grad = alloc::vec![0.0; params_new.n_params()];
    for rollout in &group.rollouts {
        let rows = shape.rows_for(group.task, &rollout.tokens)?;
        let t_inv = 1.0 / rollout.len() as f64;
        for &row in &rows {
            let logp = math::log_softmax(params_new.logits_row(row));
            let logq = math::log_softmax(params_ref.logits_row(row));
            let kl: f64 = logp
                .iter()
                .zip(logq.iter())
                .map(|(lp, lq)| math::exp(*lp) * (lp - lq))
                .sum();
            let base = row * v;
            for a in 0..v {
                let p = math::exp(logp[a]);
                grad[base + a] += g_inv * t_inv * p * ((logp[a] - logq[a]) - kl);
            }
        }
    }
    Ok(grad)
}

/// Value of the full step objective at `params_new`, averaged over groups.
pub fn step_objective_value(
    evals: &[EvaluatedGroup],
    params_new: &PolicyParams,
    params_old: &PolicyParams,
    params_ref: &PolicyParams,
    config: &TrainConfig,
) -> Result<f64, TrainError> {
    let (_, lambda_local, _) = config.effective();
    let mut total = 0.0;
    for eval in evals {
        let mut value = clipped_surrogate(
            &eval.group,
            &eval.shaping.advantages,
            params_new,
            config.eps_clip_low,
            config.eps_clip_high,
        )?;
        if config.beta > 0.0 {
            value -= config.beta * kl_to_reference(&eval.group, params_new, params_ref)?;
        }
        if lambda_local > 0.0 {
            value += lambda_local
                * local_entropy::local_objective(
                    &eval.group,
                    params_new,
                    params_old,
                    &eval.weights,
                )?
                .value;
        }
        total += value;
    }
    Ok(total / evals.len() as f64)
}

/// Exact gradient of [`step_objective_value`] with respect to `params_new`.
pub fn step_objective_gradient(
    evals: &[EvaluatedGroup],
    params_new: &PolicyParams,
    params_old: &PolicyParams,
    params_ref: &PolicyParams,
    config: &TrainConfig,
) -> Result<Vec<f64>, TrainError> {
    let (_, lambda_local, _) = config.effective();
    let scale = 1.0 / evals.len() as f64;
    let mut grad = alloc::vec![0.0; params_new.n_params()];
    for eval in evals {
        let surrogate = clipped_surrogate_grad(
            &eval.group,
            &eval.shaping.advantages,
            params_new,
            config.eps_clip_low,
            config.eps_clip_high,
        )?;
        for (g, s) in grad.iter_mut().zip(surrogate.iter()) {
            *g += scale * s;
        }
        if config.beta > 0.0 {
            let kl = kl_to_reference_grad(&eval.group, params_new, params_ref)?;
            for (g, k) in grad.iter_mut().zip(kl.iter()) {
                *g -= scale * config.beta * k;
            }
        }
        if lambda_local > 0.0 {
            let local = local_entropy::local_gradient(
                &eval.group,
                params_new,
                params_old,
                &eval.weights,
                config.ratio_stop_grad,
            )?;
            for (g, l) in grad.iter_mut().zip(local.iter()) {
                *g += scale * lambda_local * l;
            }
        }
    }
    Ok(grad)
}

/// Everything logged about one training step. Serialized field-for-field
/// into the metrics stream.
#[derive(Debug, Clone, PartialEq)]
pub struct StepMetrics {
    pub step: usize,
    pub mean_reward: f64,
    pub mean_r_tilde: f64,
    pub advantage_variance: f64,
    /// Mean next-token entropy of the sampling policy over the tokens it
    /// generated this step.
    pub mean_token_entropy: f64,
    /// Mean next-token entropy of the sampling policy over every context
    /// row of the table, visited or not.
    pub mean_table_entropy: f64,
    pub mean_d_emb: f64,
    pub mean_d_eq: f64,
    /// Fraction of all distinct correct answers discovered so far, across
    /// tasks.
    pub mode_coverage: f64,
    pub frac_zero_advantage_groups: f64,
    pub kl_to_ref: f64,
}

/// Incremental trainer; one [`TrainState::step`] call per update.
#[derive(Debug)]
pub struct TrainState {
    config: TrainConfig,
    shape: Arc<PolicyShape>,
    params: PolicyParams,
    ref_params: PolicyParams,
    embedder: Embedder,
    rng: rng::Rng,
    discovered: Vec<BTreeSet<Vec<TokenId>>>,
    total_modes: usize,
    step: usize,
}

impl TrainState {
    pub fn new(
        config: TrainConfig,
        tasks: Vec<TaskSpec>,
        vocab: Vocab,
    ) -> Result<Self, TrainError> {
        config.validate()?;
        if tasks.is_empty() {
            return Err(TrainError::NoTasks);
        }
        let mut total_modes = 0;
        for (i, task) in tasks.iter().enumerate() {
            let modes = env::count_modes(task, &vocab, env::DEFAULT_ENUM_BUDGET)?;
            if modes < 2 {
                return Err(TrainError::TaskNotMultimode { task: i, modes });
            }
            total_modes += modes;
        }
        let shape = PolicyShape::build(tasks, vocab, config.context_window)?;
        let params = PolicyParams::uniform(shape.clone());
        let ref_params = params.clone();
        let embedder = Embedder::new(config.embed_dim, config.hash_seed);
        let rng = rng::seeded(config.seed);
        let discovered = alloc::vec![BTreeSet::new(); shape.tasks().len()];
        Ok(Self {
            config,
            shape,
            params,
            ref_params,
            embedder,
            rng,
            discovered,
            total_modes,
            step: 0,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn shape(&self) -> &Arc<PolicyShape> {
        &self.shape
    }

    pub fn params(&self) -> &PolicyParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut PolicyParams {
        &mut self.params
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    /// Runs one full update: sample, score, shape, ascend. Returns the
    /// step's metrics.
    pub fn step(&mut self) -> Result<StepMetrics, TrainError> {
        let (lambda_d, _, use_coupling) = self.config.effective();
        let params_old = self.params.clone();
        let mut evals = Vec::with_capacity(self.shape.tasks().len());
        for task_idx in 0..self.shape.tasks().len() {
            let group =
                sample_group(&params_old, task_idx, self.config.group_size, &mut self.rng)?;
            evals.push(evaluate_group(
                group,
                &self.embedder,
                self.config.sigma_d,
                lambda_d,
                self.config.eps_std,
                self.config.tau,
                use_coupling,
            )?);
        }

        for _ in 0..self.config.inner_epochs {
            let grad = step_objective_gradient(
                &evals,
                &self.params,
                &params_old,
                &self.ref_params,
                &self.config,
            )?;
            if let Some((param_index, &value)) =
                grad.iter().enumerate().find(|(_, g)| !g.is_finite())
            {
                return Err(TrainError::NonFiniteGradient {
                    step: self.step,
                    param_index,
                    value,
                });
            }
            self.params.axpy(self.config.learning_rate, &grad);
        }

        for eval in &evals {
            let found = &mut self.discovered[eval.group.task];
            for rollout in &eval.group.rollouts {
                if rollout.is_correct() {
                    found.insert(rollout.tokens.clone());
                }
            }
        }

        let metrics = self.collect_metrics(&evals, &params_old)?;
        self.step += 1;
        Ok(metrics)
    }

    fn collect_metrics(
        &self,
        evals: &[EvaluatedGroup],
        params_old: &PolicyParams,
    ) -> Result<StepMetrics, TrainError> {
        let mut rewards = Vec::new();
        let mut r_tildes = Vec::new();
        let mut advantages = Vec::new();
        let mut d_embs = Vec::new();
        let mut d_eqs = Vec::new();
        let mut visited_entropies = Vec::new();
        let mut zero_adv_groups = 0usize;
        let mut kl = 0.0;
        for eval in evals {
            rewards.extend(eval.group.rewards());
            r_tildes.extend(eval.shaping.r_tilde.iter().copied());
            advantages.extend(eval.shaping.advantages.iter().copied());
            d_embs.extend(eval.scores.iter().map(|s| s.d_emb));
            d_eqs.extend(eval.scores.iter().map(|s| s.d_eq));
            let max_adv =
                eval.shaping.advantages.iter().fold(0.0f64, |m, a| m.max(a.abs()));
            if max_adv < 1e-12 {
                zero_adv_groups += 1;
            }
            for rollout in &eval.group.rollouts {
                let rows = self.shape.rows_for(eval.group.task, &rollout.tokens)?;
                for row in rows {
                    visited_entropies
                        .push(math::entropy_from_logits(params_old.logits_row(row)));
                }
            }
            kl += kl_to_reference(&eval.group, &self.params, &self.ref_params)?;
        }
        let table_entropy = math::mean(
            &(0..self.shape.n_contexts())
                .map(|row| math::entropy_from_logits(params_old.logits_row(row)))
                .collect::<Vec<f64>>(),
        );
        let discovered: usize = self.discovered.iter().map(|d| d.len()).sum();
        Ok(StepMetrics {
            step: self.step,
            mean_reward: math::mean(&rewards),
            mean_r_tilde: math::mean(&r_tildes),
            advantage_variance: math::population_variance(&advantages),
            mean_token_entropy: math::mean(&visited_entropies),
            mean_table_entropy: table_entropy,
            mean_d_emb: math::mean(&d_embs),
            mean_d_eq: math::mean(&d_eqs),
            mode_coverage: discovered as f64 / self.total_modes as f64,
            frac_zero_advantage_groups: zero_adv_groups as f64 / evals.len() as f64,
            kl_to_ref: kl / evals.len() as f64,
        })
    }
}

/// A finished run: final parameters plus the metrics of every step.
pub struct TrainRun {
    pub params: PolicyParams,
    pub metrics: Vec<StepMetrics>,
}

/// Runs `config.steps` updates, invoking `on_step` after each one.
pub fn train<F: FnMut(&StepMetrics)>(
    config: TrainConfig,
    tasks: Vec<TaskSpec>,
    vocab: Vocab,
    mut on_step: F,
) -> Result<TrainRun, TrainError> {
    let steps = config.steps;
    let mut state = TrainState::new(config, tasks, vocab)?;
    let mut metrics = Vec::with_capacity(steps);
    for _ in 0..steps {
        let m = state.step()?;
        on_step(&m);
        metrics.push(m);
    }
    Ok(TrainRun { params: state.params, metrics })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::OpEffect;

    fn demo_task() -> (Vec<TaskSpec>, Vocab) {
        let vocab = Vocab::from_ops(alloc::vec![OpEffect::Add(3), OpEffect::Mul(4)]).unwrap();
        let tasks = alloc::vec![TaskSpec::new(1, 4, 7, 2).unwrap()];
        (tasks, vocab)
    }

    fn short_config(method: Method, steps: usize) -> TrainConfig {
        TrainConfig { method, steps, ..TrainConfig::default() }
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
        }
        assert!(matches!(
            "ppo".parse::<Method>(),
            Err(TrainError::UnknownMethod(_))
        ));
    }

    #[test]
    fn config_validation_rejects_bad_fields() {
        let cases: [(&str, TrainConfig); 7] = [
            ("group", TrainConfig { group_size: 1, ..Default::default() }),
            ("lr", TrainConfig { learning_rate: 0.0, ..Default::default() }),
            ("lambda_d", TrainConfig { lambda_d: -0.1, ..Default::default() }),
            ("bonus", TrainConfig { lambda_d: 3.0, sigma_d: 0.5, ..Default::default() }),
            ("clip", TrainConfig { eps_clip_low: 1.5, ..Default::default() }),
            ("eps_std", TrainConfig { eps_std: 0.0, ..Default::default() }),
            ("inner", TrainConfig { inner_epochs: 0, ..Default::default() }),
        ];
        for (what, cfg) in cases {
            assert!(cfg.validate().is_err(), "{what} should fail validation");
        }
        assert!(TrainConfig::default().validate().is_ok());
    }

    #[test]
    fn single_mode_tasks_are_rejected() {
        let vocab = Vocab::from_ops(alloc::vec![OpEffect::Add(3), OpEffect::Mul(4)]).unwrap();
        // Only [+3 eos] reaches 3 from 0 mod 9 in two tokens.
        let tasks = alloc::vec![TaskSpec::new(0, 3, 9, 2).unwrap()];
        let err = TrainState::new(TrainConfig::default(), tasks, vocab).unwrap_err();
        assert_eq!(err, TrainError::TaskNotMultimode { task: 0, modes: 1 });
    }

    #[test]
    fn training_is_deterministic_per_seed() {
        let (tasks, vocab) = demo_task();
        let cfg = short_config(Method::Dsdr, 25);
        let a = train(cfg.clone(), tasks.clone(), vocab.clone(), |_| {}).unwrap();
        let b = train(cfg, tasks, vocab, |_| {}).unwrap();
        assert_eq!(a.metrics, b.metrics);
        assert_eq!(a.params.params(), b.params.params());
    }

    #[test]
    fn different_seeds_diverge() {
        let (tasks, vocab) = demo_task();
        let a = train(short_config(Method::Dsdr, 10), tasks.clone(), vocab.clone(), |_| {})
            .unwrap();
        let cfg_b = TrainConfig { seed: 1, ..short_config(Method::Dsdr, 10) };
        let b = train(cfg_b, tasks, vocab, |_| {}).unwrap();
        assert_ne!(a.metrics, b.metrics);
    }

    #[test]
    fn reward_improves_on_the_demo_task() {
        let (tasks, vocab) = demo_task();
        for method in [Method::Dsdr, Method::Grpo] {
            let run = train(short_config(method, 150), tasks.clone(), vocab.clone(), |_| {})
                .unwrap();
            let early = math::mean(
                &run.metrics[..10].iter().map(|m| m.mean_reward).collect::<Vec<f64>>(),
            );
            let late = math::mean(
                &run.metrics[140..].iter().map(|m| m.mean_reward).collect::<Vec<f64>>(),
            );
            assert!(
                late > early + 0.1,
                "{}: reward should improve, got {early} -> {late}",
                method.as_str()
            );
        }
    }

    #[test]
    fn both_modes_get_discovered() {
        let (tasks, vocab) = demo_task();
        let run = train(short_config(Method::Dsdr, 50), tasks, vocab, |_| {}).unwrap();
        assert_eq!(run.metrics.last().unwrap().mode_coverage, 1.0);
        // Coverage is cumulative, so it never decreases.
        for w in run.metrics.windows(2) {
            assert!(w[1].mode_coverage >= w[0].mode_coverage);
        }
    }

    #[test]
    fn metrics_fields_stay_finite_and_in_range() {
        let (tasks, vocab) = demo_task();
        let run = train(short_config(Method::Dsdr, 60), tasks, vocab, |_| {}).unwrap();
        for (i, m) in run.metrics.iter().enumerate() {
            assert_eq!(m.step, i);
            assert!((0.0..=1.0).contains(&m.mean_reward));
            assert!(m.mean_r_tilde >= m.mean_reward);
            assert!(m.advantage_variance >= 0.0);
            assert!(m.mean_token_entropy >= 0.0);
            assert!(m.mean_table_entropy >= 0.0);
            assert!((0.0..=1.0).contains(&m.mean_d_emb));
            assert!((0.0..=1.0).contains(&m.mean_d_eq));
            assert!((0.0..=1.0).contains(&m.mode_coverage));
            assert!((0.0..=1.0).contains(&m.frac_zero_advantage_groups));
            assert!(m.kl_to_ref >= -1e-12);
        }
    }

    #[test]
    fn beta_penalty_keeps_kl_smaller() {
        let (tasks, vocab) = demo_task();
        let free = train(short_config(Method::Grpo, 120), tasks.clone(), vocab.clone(), |_| {})
            .unwrap();
        let pinned_cfg = TrainConfig { beta: 0.5, ..short_config(Method::Grpo, 120) };
        let pinned = train(pinned_cfg, tasks, vocab, |_| {}).unwrap();
        let last_free = free.metrics.last().unwrap().kl_to_ref;
        let last_pinned = pinned.metrics.last().unwrap().kl_to_ref;
        assert!(
            last_pinned < last_free,
            "beta = 0.5 should hold KL down: {last_pinned} vs {last_free}"
        );
    }

    #[test]
    fn non_finite_parameters_abort_with_diagnostics() {
        let (tasks, vocab) = demo_task();
        let mut state = TrainState::new(TrainConfig::default(), tasks, vocab).unwrap();
        state.params_mut().set_param(0, f64::NAN);
        match state.step() {
            Err(TrainError::NonFiniteGradient { step: 0, .. }) => {}
            other => panic!("expected NonFiniteGradient, got {other:?}"),
        }
    }

    #[test]
    fn inner_epochs_reuse_the_same_batch() {
        let (tasks, vocab) = demo_task();
        let one = train(short_config(Method::Dsdr, 5), tasks.clone(), vocab.clone(), |_| {})
            .unwrap();
        let three_cfg = TrainConfig { inner_epochs: 3, ..short_config(Method::Dsdr, 5) };
        let three = train(three_cfg, tasks, vocab, |_| {}).unwrap();
        // Same sampling stream, different number of ascent passes.
        assert_ne!(one.params.params(), three.params.params());
    }

    #[test]
    fn surrogate_gradient_matches_finite_differences() {
        let (tasks, vocab) = demo_task();
        let shape = PolicyShape::build(tasks, vocab, 2).unwrap();
        let mut rng = rng::seeded(41);
        let params_old = PolicyParams::random(shape.clone(), 1.0, &mut rng);
        let group = sample_group(&params_old, 0, 8, &mut rng).unwrap();
        let advantages: Vec<f64> =
            (0..8).map(|_| rng::uniform(&mut rng, -2.0, 2.0)).collect();
        let mut params = params_old.clone();
        for i in 0..params.n_params() {
            let v = params.param(i) + rng::uniform(&mut rng, -0.05, 0.05);
            params.set_param(i, v);
        }
        let grad =
            clipped_surrogate_grad(&group, &advantages, &params, 0.2, 0.28).unwrap();
        let h = 1e-6;
        for (i, g) in grad.iter().enumerate() {
            let orig = params.param(i);
            params.set_param(i, orig + h);
            let up = clipped_surrogate(&group, &advantages, &params, 0.2, 0.28).unwrap();
            params.set_param(i, orig - h);
            let down = clipped_surrogate(&group, &advantages, &params, 0.2, 0.28).unwrap();
            params.set_param(i, orig);
            let fd = (up - down) / (2.0 * h);
            assert!(
                (fd - g).abs() < 1e-6,
                "param {i}: finite diff {fd} vs analytic {g}"
            );
        }
    }

    #[test]
    fn kl_gradient_matches_finite_differences() {
        let (tasks, vocab) = demo_task();
        let shape = PolicyShape::build(tasks, vocab, 2).unwrap();
        let mut rng = rng::seeded(43);
        let params_ref = PolicyParams::random(shape.clone(), 1.0, &mut rng);
        let mut params = PolicyParams::random(shape.clone(), 1.0, &mut rng);
        let group = sample_group(&params, 0, 6, &mut rng).unwrap();
        let grad = kl_to_reference_grad(&group, &params, &params_ref).unwrap();
        let h = 1e-6;
        for (i, g) in grad.iter().enumerate() {
            let orig = params.param(i);
            params.set_param(i, orig + h);
            let up = kl_to_reference(&group, &params, &params_ref).unwrap();
            params.set_param(i, orig - h);
            let down = kl_to_reference(&group, &params, &params_ref).unwrap();
            params.set_param(i, orig);
            let fd = (up - down) / (2.0 * h);
            assert!((fd - g).abs() < 1e-7, "param {i}: {fd} vs {g}");
        }
    }

    #[test]
    fn kl_to_identical_reference_is_zero() {
        let (tasks, vocab) = demo_task();
        let shape = PolicyShape::build(tasks, vocab, 2).unwrap();
        let mut rng = rng::seeded(47);
        let params = PolicyParams::random(shape, 1.0, &mut rng);
        let group = sample_group(&params, 0, 4, &mut rng).unwrap();
        let kl = kl_to_reference(&group, &params, &params).unwrap();
        assert!(kl.abs() < 1e-15);
    }
}
