//! Runnable derivations of the analytical claims behind the objective.
//!
//! Each check re-derives one claim with an independent route (closed form,
//! exhaustive enumeration, finite differences, or Monte Carlo) and compares
//! it against the production code path at an explicit tolerance:
//!
//! * `theorem_softmax`: the coupling weights equal the self-normalized
//!   Monte Carlo weights of the exponentially tilted, correctness-gated
//!   objective.
//! * `tilted_gradient`: three routes to the gradient of the tilted
//!   objective `(1/tau) ln E[exp(tau d_bar) 1{correct}]` agree.
//! * `entropy_decomposition`: `H(O) = I(O;Z) + H(O|Z)` for latent-mode
//!   mixtures.
//! * `correctness_preservation`: entropy regularization below the reward
//!   gap over the maximum entropy never moves the argmax off the correct
//!   set.
//! * `pmix`: the closed form for the probability that a group mixes correct
//!   and incorrect rollouts matches simulation.
//! * `nonvanishing`: the diversity bonus keeps advantages alive in
//!   solve-all groups, and vanishes exactly when disabled.
//! * `softmax_optimality`: the coupling softmax maximizes the
//!   entropy-regularized allocation objective over the whole simplex grid.
//!
//! A deliberate-perturbation mode miscomputes the softmax normalizer so
//! that the harness around these checks can prove it would catch a real
//! defect.

use alloc::string::String;
use alloc::vec::Vec;

use crate::env::{self, OpEffect, TaskSpec, Vocab};
use crate::math;
use crate::policy::{PolicyParams, PolicyShape};
use crate::rng::{self, Rng};
use crate::shaping;

/// Outcome of one check.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub name: &'static str,
    pub pass: bool,
    /// Worst deviation observed, in the units of the check's tolerance.
    pub max_deviation: f64,
    pub detail: String,
}

pub const CHECK_NAMES: [&str; 7] = [
    "theorem_softmax",
    "tilted_gradient",
    "entropy_decomposition",
    "correctness_preservation",
    "pmix",
    "nonvanishing",
    "softmax_optimality",
];

/// Closed-form probability that a group of `g` independent rollouts with
/// per-rollout success probability `p` contains both a success and a
/// failure.
pub fn mixed_group_probability(p: f64, g: u32) -> f64 {
    1.0 - math::powi(p, g) - math::powi(1.0 - p, g)
}

/// A latent-mode mixture: modes `z` with probabilities `pz`, outcomes per
/// mode with conditional probabilities `rows[z]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentMixture {
    pub pz: Vec<f64>,
    pub rows: Vec<Vec<f64>>,
}

impl LatentMixture {
    pub fn marginal(&self) -> Vec<f64> {
        let n_out = self.rows[0].len();
        let mut po = alloc::vec![0.0; n_out];
        for (pz, row) in self.pz.iter().zip(self.rows.iter()) {
            for (acc, p) in po.iter_mut().zip(row.iter()) {
                *acc += pz * p;
            }
        }
        po
    }

    pub fn outcome_entropy(&self) -> f64 {
        math::entropy(&self.marginal())
    }

    pub fn conditional_entropy(&self) -> f64 {
        self.pz
            .iter()
            .zip(self.rows.iter())
            .map(|(pz, row)| pz * math::entropy(row))
            .sum()
    }

    pub fn mutual_information(&self) -> f64 {
        let po = self.marginal();
        let mut mi = 0.0;
        for (pz, row) in self.pz.iter().zip(self.rows.iter()) {
            for (p_cond, p_marg) in row.iter().zip(po.iter()) {
                if *p_cond > 0.0 {
                    mi += pz * p_cond * math::ln(p_cond / p_marg);
                }
            }
        }
        mi
    }

    /// Residual of `H(O) - I(O;Z) - H(O|Z)`; zero in exact arithmetic.
    pub fn decomposition_gap(&self) -> f64 {
        self.outcome_entropy() - self.mutual_information() - self.conditional_entropy()
    }
}

/// Visits every composition of `total` into `parts` non-negative integers.
fn for_each_composition<F: FnMut(&[u32])>(parts: usize, total: u32, f: &mut F) {
    fn recur<F: FnMut(&[u32])>(buf: &mut Vec<u32>, remaining: u32, left: usize, f: &mut F) {
        if left == 1 {
            buf.push(remaining);
            f(buf);
            buf.pop();
            return;
        }
        for c in 0..=remaining {
            buf.push(c);
            recur(buf, remaining - c, left - 1, f);
            buf.pop();
        }
    }
    assert!(parts >= 1);
    let mut buf = Vec::with_capacity(parts);
    recur(&mut buf, total, parts, f);
}

/// Deliberately wrong coupling weights: the normalizer sums the tilted
/// scores of every rollout instead of only the correct ones. Used to
/// demonstrate that `theorem_softmax` detects a real defect.
fn perturbed_coupling_weights(rewards: &[f64], d_bars: &[f64], tau: f64) -> Vec<f64> {
    let scaled: Vec<f64> = d_bars.iter().map(|d| tau * d).collect();
    let lse = math::log_sum_exp(&scaled);
    rewards
        .iter()
        .zip(scaled.iter())
        .map(|(r, s)| if *r == 1.0 { math::exp(s - lse) } else { 0.0 })
        .collect()
}

/// Coupling weights versus self-normalized Monte Carlo weights of the
/// tilted, correctness-gated objective, over random groups. Tolerance
/// 1e-12 in the weights.
pub fn check_theorem_softmax(trials: usize, seed: u64, perturbed: bool) -> CheckReport {
    let mut rng = rng::seeded(seed);
    let mut max_dev = 0.0f64;
    let mut first_mismatch: Option<(usize, usize)> = None;
    let mut mixed_groups = 0usize;
    for trial in 0..trials {
        let g = 2 + rng::below(&mut rng, 7);
        let tau = rng::uniform(&mut rng, 0.5, 8.0);
        let rewards: Vec<f64> = if trial % 13 == 0 {
            alloc::vec![0.0; g]
        } else if trial % 17 == 0 {
            alloc::vec![1.0; g]
        } else {
            (0..g).map(|_| f64::from(rng::below(&mut rng, 2) as u8)).collect()
        };
        let d_bars: Vec<f64> = (0..g).map(|_| rng::uniform(&mut rng, 0.0, 0.5)).collect();
        let any_correct = rewards.contains(&1.0);
        let all_correct = rewards.iter().all(|r| *r == 1.0);
        if any_correct && !all_correct {
            mixed_groups += 1;
        }

        // Independent route: per-rollout tilted scores
        // f_i = exp(tau d_bar_i) 1{correct}, self-normalized.
        let f: Vec<f64> = rewards
            .iter()
            .zip(d_bars.iter())
            .map(|(r, d)| if *r == 1.0 { math::exp(tau * d) } else { 0.0 })
            .collect();
        let total: f64 = f.iter().sum();
        let expected: Vec<f64> = if total > 0.0 {
            f.iter().map(|x| x / total).collect()
        } else {
            alloc::vec![0.0; g]
        };

        let got = if perturbed {
            perturbed_coupling_weights(&rewards, &d_bars, tau)
        } else {
            shaping::coupling_weights(&rewards, &d_bars, tau)
        };
        for (i, (e, w)) in expected.iter().zip(got.iter()).enumerate() {
            let dev = (e - w).abs();
            max_dev = max_dev.max(dev);
            if dev > 1e-12 && first_mismatch.is_none() {
                first_mismatch = Some((trial, i));
            }
        }
    }
    let detail = match first_mismatch {
        Some((trial, i)) => alloc::format!(
            "{trials} groups, {mixed_groups} mixed, first mismatch at group {trial} index {i}"
        ),
        None => alloc::format!("{trials} groups, {mixed_groups} mixed, tol 1e-12"),
    };
    CheckReport {
        name: "theorem_softmax",
        pass: first_mismatch.is_none(),
        max_deviation: max_dev,
        detail,
    }
}

struct OutcomeModel {
    shape: alloc::sync::Arc<PolicyShape>,
    outcomes: Vec<Vec<usize>>,
    f: Vec<f64>,
    tau: f64,
}

impl OutcomeModel {
    fn random(rng: &mut Rng) -> Self {
        let vocab = Vocab::from_ops(alloc::vec![
            OpEffect::Add(1),
            OpEffect::Add(2),
            OpEffect::Mul(2),
            OpEffect::Mul(3),
        ])
        .unwrap();
        let modulus = 5 + rng::below(rng, 7) as u64;
        let start = rng::below(rng, modulus as usize) as u64;
        // Enumerate with a placeholder target (outcomes do not depend on
        // it), then aim at a reachable value so at least one outcome is
        // correct.
        let probe = TaskSpec::new(start, 0, modulus, 3).unwrap();
        let outcomes = env::enumerate_outcomes(&probe, &vocab, env::DEFAULT_ENUM_BUDGET).unwrap();
        let terminated: Vec<&Vec<usize>> =
            outcomes.iter().filter(|o| o.last() == Some(&vocab.eos_id())).collect();
        let pick = terminated[rng::below(rng, terminated.len())];
        let mut state = start;
        for &id in pick {
            state = vocab.get(id).unwrap().apply(state, modulus);
        }
        let task = TaskSpec::new(start, state, modulus, 3).unwrap();

        let tau = rng::uniform(rng, 2.0, 8.0);
        let f: Vec<f64> = outcomes
            .iter()
            .map(|o| {
                let reward = env::verify(&task, &vocab, o).unwrap();
                let d_bar = rng::uniform(rng, 0.0, 0.5);
                if reward == 1.0 {
                    math::exp(tau * d_bar)
                } else {
                    0.0
                }
            })
            .collect();
        let shape = PolicyShape::build(alloc::vec![task], vocab, 2).unwrap();
        Self { shape, outcomes, f, tau }
    }

    fn probs(&self, params: &PolicyParams) -> Vec<f64> {
        self.outcomes
            .iter()
            .map(|o| math::exp(params.logprob(0, o).unwrap()))
            .collect()
    }

    fn z(&self, probs: &[f64]) -> f64 {
        probs.iter().zip(self.f.iter()).map(|(p, f)| p * f).sum()
    }

    /// `(1/tau) ln E[f]`, the tilted objective.
    fn value(&self, params: &PolicyParams) -> f64 {
        math::ln(self.z(&self.probs(params))) / self.tau
    }
}

/// Three routes to the tilted objective's gradient: central finite
/// differences of the enumerated value, the expectation form with the
/// tilted advantage `(f/Z - 1)/tau`, and the direct form `(1/(tau Z))
/// E[f grad log pi]`. Componentwise relative tolerance 1e-8.
pub fn check_tilted_gradient(n_policies: usize, seed: u64) -> CheckReport {
    let mut rng = rng::seeded(seed);
    let mut max_dev = 0.0f64;
    let mut max_prob_gap = 0.0f64;
    for _ in 0..n_policies {
        let model = OutcomeModel::random(&mut rng);
        let mut params = PolicyParams::random(model.shape.clone(), 1.0, &mut rng);
        let probs = model.probs(&params);
        max_prob_gap = max_prob_gap.max((probs.iter().sum::<f64>() - 1.0).abs());
        let z = model.z(&probs);

        let n = params.n_params();
        let mut route_expectation = alloc::vec![0.0; n];
        let mut route_direct = alloc::vec![0.0; n];
        for (idx, outcome) in model.outcomes.iter().enumerate() {
            let grad_logp = params.grad_logprob(0, outcome).unwrap();
            let advantage = (model.f[idx] / z - 1.0) / model.tau;
            let direct = probs[idx] * model.f[idx] / (model.tau * z);
            for (i, g) in grad_logp.iter().enumerate() {
                route_expectation[i] += probs[idx] * advantage * g;
                route_direct[i] += direct * g;
            }
        }

        let h = 1e-5;
        for i in 0..n {
            let orig = params.param(i);
            params.set_param(i, orig + h);
            let up = model.value(&params);
            params.set_param(i, orig - h);
            let down = model.value(&params);
            params.set_param(i, orig);
            let fd = (up - down) / (2.0 * h);
            for other in [route_expectation[i], route_direct[i]] {
                let scale = 1.0f64.max(fd.abs()).max(other.abs());
                max_dev = max_dev.max((fd - other).abs() / scale);
            }
            let scale = 1.0f64.max(route_expectation[i].abs()).max(route_direct[i].abs());
            max_dev = max_dev.max((route_expectation[i] - route_direct[i]).abs() / scale);
        }
    }
    let pass = max_dev <= 1e-8 && max_prob_gap <= 1e-10;
    CheckReport {
        name: "tilted_gradient",
        pass,
        max_deviation: max_dev,
        detail: alloc::format!(
            "{n_policies} policies, outcome mass off by {max_prob_gap:.2e}, tol 1e-8"
        ),
    }
}

/// `H(O) = I(O;Z) + H(O|Z)` on random latent-mode mixtures, tolerance
/// 1e-10.
pub fn check_entropy_decomposition(trials: usize, seed: u64) -> CheckReport {
    let mut rng = rng::seeded(seed);
    let mut max_dev = 0.0f64;
    for _ in 0..trials {
        let n_modes = 2 + rng::below(&mut rng, 3);
        let n_outcomes = 2 + rng::below(&mut rng, 5);
        let draw_dist = |rng: &mut Rng, n: usize| -> Vec<f64> {
            let raw: Vec<f64> = (0..n).map(|_| rng::uniform(rng, 0.05, 1.0)).collect();
            let total: f64 = raw.iter().sum();
            raw.into_iter().map(|x| x / total).collect()
        };
        let mixture = LatentMixture {
            pz: draw_dist(&mut rng, n_modes),
            rows: (0..n_modes).map(|_| draw_dist(&mut rng, n_outcomes)).collect(),
        };
        max_dev = max_dev.max(mixture.decomposition_gap().abs());
    }
    CheckReport {
        name: "entropy_decomposition",
        pass: max_dev <= 1e-10,
        max_deviation: max_dev,
        detail: alloc::format!("{trials} random mixtures, tol 1e-10"),
    }
}

/// On a simplex grid over bandit arms with binary rewards, entropy
/// regularization with coefficient below `gap / ln(arms)` never moves the
/// regularized argmax off the full-reward face; larger coefficients are
/// probed for a demonstrable violation.
pub fn check_correctness_preservation(instances: usize, seed: u64) -> CheckReport {
    let mut rng = rng::seeded(seed);
    const N: u32 = 100;
    let mut worst_margin = f64::NEG_INFINITY;
    let mut violations_found = 0usize;
    for _ in 0..instances {
        let arms = 2 + rng::below(&mut rng, 2);
        let n_correct = 1 + rng::below(&mut rng, arms - 1);
        let mut rewards = alloc::vec![0.0; arms];
        rewards[..n_correct].fill(1.0);
        // Shuffle the reward layout.
        for i in (1..arms).rev() {
            let j = rng::below(&mut rng, i + 1);
            rewards.swap(i, j);
        }

        let mass_on_correct = |c: &[u32]| -> u32 {
            c.iter()
                .zip(rewards.iter())
                .filter(|(_, r)| **r == 1.0)
                .map(|(ci, _)| *ci)
                .sum()
        };

        // The reward gap is measured on the grid itself: best achievable
        // accuracy minus the best strictly lower accuracy level.
        let mut top_k = 0u32;
        let mut runner_k: Option<u32> = None;
        for_each_composition(arms, N, &mut |c| {
            let k = mass_on_correct(c);
            if k > top_k {
                runner_k = Some(top_k);
                top_k = k;
            } else if k < top_k {
                runner_k = Some(runner_k.map_or(k, |r| r.max(k)));
            }
        });
        let Some(runner_k) = runner_k else { continue };
        let delta = f64::from(top_k - runner_k) / f64::from(N);
        let h_max = math::ln(arms as f64);
        let lambda = rng::uniform(&mut rng, 0.05, 0.95) * delta / h_max;

        let mut best_opt = f64::NEG_INFINITY;
        let mut best_sub = f64::NEG_INFINITY;
        let mut best_sub_probe = f64::NEG_INFINITY;
        let mut best_opt_probe = f64::NEG_INFINITY;
        let probe_lambda = 200.0 * delta / h_max;
        for_each_composition(arms, N, &mut |c| {
            let w: Vec<f64> = c.iter().map(|ci| f64::from(*ci) / f64::from(N)).collect();
            let accuracy = f64::from(mass_on_correct(c)) / f64::from(N);
            let entropy = math::entropy(&w);
            let value = accuracy + lambda * entropy;
            let probe_value = accuracy + probe_lambda * entropy;
            if mass_on_correct(c) == top_k {
                best_opt = best_opt.max(value);
                best_opt_probe = best_opt_probe.max(probe_value);
            } else {
                best_sub = best_sub.max(value);
                best_sub_probe = best_sub_probe.max(probe_value);
            }
        });
        worst_margin = worst_margin.max(best_sub - best_opt);
        if best_sub_probe > best_opt_probe {
            violations_found += 1;
        }
    }
    CheckReport {
        name: "correctness_preservation",
        pass: worst_margin < 0.0,
        max_deviation: worst_margin,
        detail: alloc::format!(
            "{instances} grids, worst suboptimal margin {worst_margin:.3e}; \
             200x coefficient breaks {violations_found} instance(s)"
        ),
    }
}

/// Closed-form mixed-group probability versus Monte Carlo at three standard
/// errors, over a grid of success probabilities and group sizes.
pub fn check_pmix(samples: usize, seed: u64) -> CheckReport {
    let mut rng = rng::seeded(seed);
    let mut max_dev = 0.0f64;
    let mut detail = String::new();
    for &g in &[2u32, 8, 32] {
        for &p in &[0.1f64, 0.5, 0.9] {
            let closed = mixed_group_probability(p, g);
            let mut mixed = 0usize;
            for _ in 0..samples {
                let mut saw_success = false;
                let mut saw_failure = false;
                for _ in 0..g {
                    if rng::uniform01(&mut rng) < p {
                        saw_success = true;
                    } else {
                        saw_failure = true;
                    }
                    if saw_success && saw_failure {
                        mixed += 1;
                        break;
                    }
                }
            }
            let freq = mixed as f64 / samples as f64;
            let se = math::sqrt(closed * (1.0 - closed) / samples as f64);
            let dev = if se > 0.0 {
                (freq - closed).abs() / se
            } else if freq == closed {
                0.0
            } else {
                f64::INFINITY
            };
            max_dev = max_dev.max(dev);
            if !detail.is_empty() {
                detail.push_str(", ");
            }
            detail.push_str(&alloc::format!("p={p} G={g}: {dev:.2}se"));
        }
    }
    CheckReport { name: "pmix", pass: max_dev <= 3.0, max_deviation: max_dev, detail }
}

/// Solve-all groups: with the diversity bonus on and distinct scores the
/// advantages stay alive; with the bonus off they are exactly zero.
pub fn check_nonvanishing(trials: usize, seed: u64) -> CheckReport {
    let mut rng = rng::seeded(seed);
    let mut min_signal = f64::INFINITY;
    let mut max_control = 0.0f64;
    for _ in 0..trials {
        let g = 2 + rng::below(&mut rng, 7);
        let mut d_bars: Vec<f64> =
            (0..g).map(|_| rng::uniform(&mut rng, 0.0, 0.5)).collect();
        // Distinct scores; collisions have probability zero but nudge
        // deterministically anyway.
        for i in 1..g {
            if d_bars[..i].contains(&d_bars[i]) {
                d_bars[i] += 1e-9 * (i as f64 + 1.0);
            }
        }
        let rewards = alloc::vec![1.0; g];

        let shaped = shaping::shape_group(&rewards, &d_bars, 0.001, 1e-6, 5.0);
        let signal = shaped.advantages.iter().fold(0.0f64, |m, a| m.max(a.abs()));
        min_signal = min_signal.min(signal);
        assert!(math::population_variance(&shaped.advantages) >= 0.0);

        let control = shaping::shape_group(&rewards, &d_bars, 0.0, 1e-6, 5.0);
        let control_max =
            control.advantages.iter().fold(0.0f64, |m, a| m.max(a.abs()));
        max_control = max_control.max(control_max);
    }
    let pass = min_signal > 1e-6 && max_control == 0.0;
    CheckReport {
        name: "nonvanishing",
        pass,
        max_deviation: max_control,
        detail: alloc::format!(
            "{trials} solve-all groups: weakest bonus signal {min_signal:.3e}, \
             disabled-bonus advantages exactly {max_control:.1e}"
        ),
    }
}

/// The coupling softmax maximizes `tau <w, d_bar> + H(w)` over the simplex
/// grid, and the KL-regularized form of that objective differs from it by
/// exactly `ln(arms)` at every grid point.
pub fn check_softmax_optimality(draws: usize, seed: u64) -> CheckReport {
    let mut rng = rng::seeded(seed);
    const N: u32 = 100;
    let tau = 5.0;
    let mut max_excess = f64::NEG_INFINITY;
    let mut max_identity = 0.0f64;
    for draw in 0..draws {
        let arms = 2 + draw % 3;
        let d_bars: Vec<f64> =
            (0..arms).map(|_| rng::uniform(&mut rng, 0.0, 0.5)).collect();
        let rewards = alloc::vec![1.0; arms];
        let w_star = shaping::coupling_weights(&rewards, &d_bars, tau);
        let f_star = tau
            * w_star.iter().zip(d_bars.iter()).map(|(w, d)| w * d).sum::<f64>()
            + math::entropy(&w_star);

        let ln_arms = math::ln(arms as f64);
        for_each_composition(arms, N, &mut |c| {
            let w: Vec<f64> = c.iter().map(|ci| f64::from(*ci) / f64::from(N)).collect();
            let linear: f64 = tau * w.iter().zip(d_bars.iter()).map(|(w, d)| w * d).sum::<f64>();
            let f = linear + math::entropy(&w);
            max_excess = max_excess.max(f - f_star);
            // KL-to-uniform form of the same objective.
            let kl_uniform: f64 = w
                .iter()
                .filter(|x| **x > 0.0)
                .map(|x| x * math::ln(x * arms as f64))
                .sum();
            let g = linear - kl_uniform;
            max_identity = max_identity.max(((f - g) - ln_arms).abs());
        });
    }
    let pass = max_excess <= 1e-9 && max_identity <= 1e-12;
    CheckReport {
        name: "softmax_optimality",
        pass,
        max_deviation: max_excess,
        detail: alloc::format!(
            "{draws} draws on the {N}-step grid: best grid excess {max_excess:.3e}, \
             KL-form identity residual {max_identity:.3e}"
        ),
    }
}

/// Options for [`run_all`].
#[derive(Debug, Clone, Default)]
pub struct CheckOptions {
    pub seed: u64,
    /// Substring filter on check names; `None` runs everything.
    pub filter: Option<String>,
    /// Miscompute the softmax normalizer to prove the harness catches it.
    pub perturb_softmax_normalizer: bool,
}

/// Runs every check (or the filtered subset) with independent random
/// substreams of `options.seed`, at the trial counts the acceptance gate
/// uses.
pub fn run_all(options: &CheckOptions) -> Vec<CheckReport> {
    let wanted = |name: &str| match &options.filter {
        Some(f) => name.contains(f.as_str()),
        None => true,
    };
    let mut reports = Vec::new();
    let sub = |i: u64| -> u64 {
        // Stable per-check seeds derived from the base seed.
        options.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(i)
    };
    if wanted("theorem_softmax") {
        reports.push(check_theorem_softmax(1000, sub(1), options.perturb_softmax_normalizer));
    }
    if wanted("tilted_gradient") {
        reports.push(check_tilted_gradient(50, sub(2)));
    }
    if wanted("entropy_decomposition") {
        reports.push(check_entropy_decomposition(100, sub(3)));
    }
    if wanted("correctness_preservation") {
        reports.push(check_correctness_preservation(100, sub(4)));
    }
    if wanted("pmix") {
        reports.push(check_pmix(1_000_000, sub(5)));
    }
    if wanted("nonvanishing") {
        reports.push(check_nonvanishing(200, sub(6)));
    }
    if wanted("softmax_optimality") {
        reports.push(check_softmax_optimality(20, sub(7)));
    }
    reports
}
