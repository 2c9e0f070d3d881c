//! Length-invariant local entropy surrogate.
//!
//! For a group of rollouts with coupling weights `w`, the surrogate is
//!
//! ```text
//! value = sum_i w_i * (-1/T_i) * sum_t rho_{i,t} * log pi_new(o_{i,t})
//! ```
//!
//! over the correct rollouts, where `rho` is the token-level importance
//! ratio between the current parameters and the sampling snapshot. The
//! `1/T_i` normalization makes the term insensitive to rollout length, and
//! in expectation (on-policy, single context) its gradient is exactly the
//! gradient of the next-token entropy, so ascending it diffuses probability
//! mass without preferring long answers.
//!
//! The gradient treats `w` as a constant of the optimization (it is a
//! function of the frozen sampling snapshot). Two variants are provided:
//! the full product rule through both `rho` and `log pi`, and a
//! stop-gradient variant that differentiates `log pi` only.

use alloc::vec::Vec;

use crate::math;
use crate::policy::{Group, PolicyError, PolicyParams};

/// Token-level importance ratios `pi_new / pi_old`, computed in the log
/// domain.
pub fn token_ratios(
    params_new: &PolicyParams,
    params_old: &PolicyParams,
    task: usize,
    tokens: &[usize],
) -> Result<Vec<f64>, PolicyError> {
    let new = params_new.token_logprobs(task, tokens)?;
    let old = params_old.token_logprobs(task, tokens)?;
    Ok(new.iter().zip(old.iter()).map(|(n, o)| math::exp(n - o)).collect())
}

/// The surrogate's value together with each rollout's unweighted
/// contribution (zero for incorrect rollouts).
#[derive(Debug, Clone, PartialEq)]
pub struct LocalTerm {
    pub value: f64,
    pub per_rollout: Vec<f64>,
}

/// Evaluates the surrogate for one group. `weights` must align with the
/// group's rollouts; incorrect rollouts contribute zero regardless of their
/// weight.
pub fn local_objective(
    group: &Group,
    params_new: &PolicyParams,
    params_old: &PolicyParams,
    weights: &[f64],
) -> Result<LocalTerm, PolicyError> {
    debug_assert_eq!(weights.len(), group.size());
    let mut per_rollout = alloc::vec![0.0; group.size()];
    let mut value = 0.0;
    for (i, rollout) in group.rollouts.iter().enumerate() {
        if !rollout.is_correct() {
            continue;
        }
        let logp_new = params_new.token_logprobs(group.task, &rollout.tokens)?;
        let logp_old = params_old.token_logprobs(group.task, &rollout.tokens)?;
        let t_inv = 1.0 / rollout.len() as f64;
        let mut contribution = 0.0;
        for (n, o) in logp_new.iter().zip(logp_old.iter()) {
            let rho = math::exp(n - o);
            contribution -= t_inv * rho * n;
        }
        per_rollout[i] = contribution;
        value += weights[i] * contribution;
    }
    Ok(LocalTerm { value, per_rollout })
}

/// Exact gradient of [`local_objective`] with respect to `params_new`.
///
/// With `stop_grad_ratio` the importance ratio is treated as a constant and
/// only `log pi_new` is differentiated; otherwise the product rule gives a
/// per-token coefficient of `rho * (log pi_new + 1)`.
pub fn local_gradient(
    group: &Group,
    params_new: &PolicyParams,
    params_old: &PolicyParams,
    weights: &[f64],
    stop_grad_ratio: bool,
) -> Result<Vec<f64>, PolicyError> {
    debug_assert_eq!(weights.len(), group.size());
    let shape = params_new.shape();
    let v = shape.vocab().len();
    let mut grad = alloc::vec![0.0; params_new.n_params()];
    for (i, rollout) in group.rollouts.iter().enumerate() {
        if !rollout.is_correct() || weights[i] == 0.0 {
            continue;
        }
        let logp_new = params_new.token_logprobs(group.task, &rollout.tokens)?;
        let logp_old = params_old.token_logprobs(group.task, &rollout.tokens)?;
        let rows = shape.rows_for(group.task, &rollout.tokens)?;
        let t_inv = 1.0 / rollout.len() as f64;
        for (t, &row) in rows.iter().enumerate() {
            let rho = math::exp(logp_new[t] - logp_old[t]);
            let coeff = if stop_grad_ratio {
                -weights[i] * t_inv * rho
            } else {
                -weights[i] * t_inv * rho * (logp_new[t] + 1.0)
            };
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{OpEffect, TaskSpec, Vocab};
    use crate::policy::{sample_group, Context, PolicyShape, Rollout};
    use crate::rng;
    use crate::shaping;
    use alloc::string::String;
    use alloc::sync::Arc;

    fn four_token_shape() -> Arc<PolicyShape> {
        let vocab = Vocab::from_ops(alloc::vec![
            OpEffect::Add(1),
            OpEffect::Add(2),
            OpEffect::Mul(3)
        ])
        .unwrap();
        let tasks = alloc::vec![TaskSpec::new(0, 0, 5, 3).unwrap()];
        PolicyShape::build(tasks, vocab, 2).unwrap()
    }

    fn rollout(tokens: Vec<usize>, params: &PolicyParams, reward: f64) -> Rollout {
        let logprobs = params.token_logprobs(0, &tokens).unwrap();
        Rollout { tokens, logprobs, reward, text: String::new() }
    }

    #[test]
    fn on_policy_ratios_are_exactly_one() {
        let shape = four_token_shape();
        let mut rng = rng::seeded(3);
        let params = PolicyParams::random(shape, 2.0, &mut rng);
        let ratios = token_ratios(&params, &params, 0, &[0, 1, 3]).unwrap();
        assert_eq!(ratios, alloc::vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn uniform_policy_single_correct_rollout_scores_ln_v() {
        // V = 4, w = 1 on the one correct rollout, on-policy: the surrogate
        // is the mean of -ln(1/4) over the rollout, i.e. ln 4 at any length.
        let shape = four_token_shape();
        let params = PolicyParams::uniform(shape);
        for tokens in [alloc::vec![3], alloc::vec![0, 3], alloc::vec![0, 1, 2]] {
            let group = Group {
                task: 0,
                rollouts: alloc::vec![
                    rollout(tokens, &params, 1.0),
                    rollout(alloc::vec![0, 0, 0], &params, 0.0),
                ],
            };
            let term = local_objective(&group, &params, &params, &[1.0, 0.0]).unwrap();
            assert!((term.value - math::ln(4.0)).abs() < 1e-12);
            assert!((term.per_rollout[0] - math::ln(4.0)).abs() < 1e-12);
            assert_eq!(term.per_rollout[1], 0.0);
        }
    }

    #[test]
    fn incorrect_rollouts_contribute_nothing_even_with_weight() {
        let shape = four_token_shape();
        let mut rng = rng::seeded(9);
        let params = PolicyParams::random(shape, 1.0, &mut rng);
        let group = Group {
            task: 0,
            rollouts: alloc::vec![
                rollout(alloc::vec![0, 0, 0], &params, 0.0),
                rollout(alloc::vec![1, 3], &params, 0.0),
            ],
        };
        let term = local_objective(&group, &params, &params, &[0.7, 0.3]).unwrap();
        assert_eq!(term.value, 0.0);
        let grad = local_gradient(&group, &params, &params, &[0.7, 0.3], false).unwrap();
        assert!(grad.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn gradient_matches_finite_differences_off_policy() {
        let shape = four_token_shape();
        let mut rng = rng::seeded(17);
        let params_old = PolicyParams::random(shape.clone(), 1.0, &mut rng);
        let mut params_new = params_old.clone();
        for i in 0..params_new.n_params() {
            let v = params_new.param(i) + rng::uniform(&mut rng, -0.1, 0.1);
            params_new.set_param(i, v);
        }
        let group = sample_group(&params_old, 0, 8, &mut rng).unwrap();
        let rewards = group.rewards();
        let d_bars: Vec<f64> =
            (0..group.size()).map(|_| rng::uniform(&mut rng, 0.0, 0.5)).collect();
        let weights = shaping::coupling_weights(&rewards, &d_bars, 5.0);
        assert!(weights.iter().any(|w| *w > 0.0), "fixture needs a correct rollout");

        let grad =
            local_gradient(&group, &params_new, &params_old, &weights, false).unwrap();
        let h = 1e-6;
        let mut worst = 0.0f64;
        for (i, g) in grad.iter().enumerate() {
            let orig = params_new.param(i);
            params_new.set_param(i, orig + h);
            let up = local_objective(&group, &params_new, &params_old, &weights)
                .unwrap()
                .value;
            params_new.set_param(i, orig - h);
            let down = local_objective(&group, &params_new, &params_old, &weights)
                .unwrap()
                .value;
            params_new.set_param(i, orig);
            let fd = (up - down) / (2.0 * h);
            worst = worst.max((fd - g).abs());
        }
        assert!(worst < 1e-7, "max finite-difference mismatch {worst}");
    }

    #[test]
    fn stop_grad_variant_matches_frozen_ratio_finite_differences() {
        let shape = four_token_shape();
        let mut rng = rng::seeded(23);
        let params_old = PolicyParams::random(shape.clone(), 1.0, &mut rng);
        let mut params_new = params_old.clone();
        for i in 0..params_new.n_params() {
            let v = params_new.param(i) + rng::uniform(&mut rng, -0.1, 0.1);
            params_new.set_param(i, v);
        }
        let group = sample_group(&params_old, 0, 6, &mut rng).unwrap();
        let weights: Vec<f64> = {
            let rewards = group.rewards();
            let n_correct = rewards.iter().filter(|r| **r == 1.0).count().max(1);
            rewards.iter().map(|r| r / n_correct as f64).collect()
        };
        assert!(weights.iter().any(|w| *w > 0.0), "fixture needs a correct rollout");
        // Oracle: the surrogate with ratios frozen at the current point.
        let frozen: Vec<Vec<f64>> = group
            .rollouts
            .iter()
            .map(|r| token_ratios(&params_new, &params_old, 0, &r.tokens).unwrap())
            .collect();
        let frozen_value = |p: &PolicyParams| -> f64 {
            let mut total = 0.0;
            for (i, r) in group.rollouts.iter().enumerate() {
                if !r.is_correct() {
                    continue;
                }
                let logp = p.token_logprobs(0, &r.tokens).unwrap();
                let c: f64 =
                    logp.iter().zip(frozen[i].iter()).map(|(g, rho)| -rho * g).sum();
                total += weights[i] * c / r.len() as f64;
            }
            total
        };

        let grad = local_gradient(&group, &params_new, &params_old, &weights, true).unwrap();
        let h = 1e-6;
        for (i, g) in grad.iter().enumerate() {
            let orig = params_new.param(i);
            params_new.set_param(i, orig + h);
            let up = frozen_value(&params_new);
            params_new.set_param(i, orig - h);
            let down = frozen_value(&params_new);
            params_new.set_param(i, orig);
            let fd = (up - down) / (2.0 * h);
            assert!((fd - g).abs() < 1e-7, "param {i}: {fd} vs {g}");
        }
    }

    #[test]
    fn expected_on_policy_gradient_is_the_entropy_gradient() {
        // Single-step rollouts, every outcome marked correct, weighted by
        // its own probability: the expected surrogate gradient must equal
        // the gradient of the root row's entropy.
        let shape = four_token_shape();
        let mut rng = rng::seeded(31);
        let params = PolicyParams::random(shape.clone(), 1.5, &mut rng);
        let root = Context { task: 0, window: alloc::vec![] };
        let row = shape.row_of(&root).unwrap();
        let probs = math::softmax(params.logits_row(row));

        let rollouts: Vec<Rollout> =
            (0..4).map(|tok| rollout(alloc::vec![tok], &params, 1.0)).collect();
        let group = Group { task: 0, rollouts };
        let grad = local_gradient(&group, &params, &params, &probs, false).unwrap();

        // Analytic entropy gradient of a softmax row: -p_a (ln p_a + H).
        let entropy = math::entropy_from_logits(params.logits_row(row));
        let v = shape.vocab().len();
        for a in 0..v {
            let want = -probs[a] * (math::ln(probs[a]) + entropy);
            let got = grad[row * v + a];
            assert!((got - want).abs() < 1e-12, "component {a}: {got} vs {want}");
        }
        // Rows other than the root are untouched.
        for (i, g) in grad.iter().enumerate() {
            if i / v != row {
                assert_eq!(*g, 0.0);
            }
        }
    }

    #[test]
    fn ascending_the_expected_gradient_raises_entropy() {
        let shape = four_token_shape();
        let mut rng = rng::seeded(37);
        let mut params = PolicyParams::random(shape.clone(), 1.5, &mut rng);
        let root = Context { task: 0, window: alloc::vec![] };
        let row = shape.row_of(&root).unwrap();
        let before = params.token_entropy(&root).unwrap();

        let probs = math::softmax(params.logits_row(row));
        let rollouts: Vec<Rollout> =
            (0..4).map(|tok| rollout(alloc::vec![tok], &params, 1.0)).collect();
        let group = Group { task: 0, rollouts };
        let grad = local_gradient(&group, &params, &params, &probs, false).unwrap();
        params.axpy(0.05, &grad);
        let after = params.token_entropy(&root).unwrap();
        assert!(
            after > before,
            "entropy should rise along the expected gradient: {before} -> {after}"
        );
    }

    #[test]
    fn at_the_uniform_policy_the_expected_gradient_vanishes() {
        // Entropy is already maximal at uniform, so the expected surrogate
        // gradient has nowhere to ascend.
        let shape = four_token_shape();
        let params = PolicyParams::uniform(shape.clone());
        let probs = alloc::vec![0.25; 4];
        let rollouts: Vec<Rollout> =
            (0..4).map(|tok| rollout(alloc::vec![tok], &params, 1.0)).collect();
        let group = Group { task: 0, rollouts };
        let grad = local_gradient(&group, &params, &params, &probs, false).unwrap();
        for g in &grad {
            assert!(g.abs() < 1e-15);
        }
    }

    #[test]
    fn value_is_invariant_to_duplicating_the_token_pattern() {
        // All rows share one logit vector and the sampled op shares its
        // logit with eos, so every step contributes the same amount; the
        // 1/T normalization then makes a doubled pattern score identically.
        let vocab = Vocab::from_ops(alloc::vec![OpEffect::Add(0), OpEffect::Add(1)]).unwrap();
        let tasks = alloc::vec![TaskSpec::new(1, 1, 7, 4).unwrap()];
        let shape = PolicyShape::build(tasks, vocab, 2).unwrap();

        let mut params_old = PolicyParams::uniform(shape.clone());
        let mut params_new = PolicyParams::uniform(shape.clone());
        for row in 0..shape.n_contexts() {
            params_old.set_row(row, &[0.7, -0.3, 0.7]);
            params_new.set_row(row, &[0.2, 0.5, 0.2]);
        }

        let short = Group {
            task: 0,
            rollouts: alloc::vec![
                rollout(alloc::vec![0, 2], &params_old, 1.0),
                rollout(alloc::vec![1, 1, 1, 1], &params_old, 0.0),
            ],
        };
        let long = Group {
            task: 0,
            rollouts: alloc::vec![
                rollout(alloc::vec![0, 0, 0, 2], &params_old, 1.0),
                rollout(alloc::vec![1, 1, 1, 1], &params_old, 0.0),
            ],
        };
        let w = [1.0, 0.0];
        let a = local_objective(&short, &params_new, &params_old, &w).unwrap().value;
        let b = local_objective(&long, &params_new, &params_old, &w).unwrap().value;
        assert!((a - b).abs() < 1e-12, "short {a} vs doubled {b}");
        assert!(a != 0.0);
    }
}
