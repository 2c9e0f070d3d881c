//! Reward shaping and credit allocation within a group.
//!
//! Three transformations of a group's binary rewards and clipped diversity
//! scores:
//!
//! * augmented rewards: each correct rollout earns `lambda_d * d_bar` on top
//!   of its reward of 1; incorrect rollouts are never compensated, so the
//!   bonus can reorder correct rollouts but cannot promote a wrong answer
//!   past a right one (`lambda_d * sigma_d < 1` is validated upstream).
//! * advantages: the augmented rewards standardized by the group mean and
//!   population standard deviation, with an additive epsilon keeping the
//!   division finite when the group is unanimous.
//! * coupling weights: a softmax of `tau * d_bar` restricted to the correct
//!   rollouts, used to allocate the local entropy term. All-incorrect
//!   groups get all-zero weights.

use alloc::vec::Vec;

use crate::math;

/// Rewards after the correct-only diversity bonus.
pub fn augment_rewards(rewards: &[f64], d_bars: &[f64], lambda_d: f64) -> Vec<f64> {
    debug_assert_eq!(rewards.len(), d_bars.len());
    rewards
        .iter()
        .zip(d_bars.iter())
        .map(|(&r, &d)| if r == 1.0 { 1.0 + lambda_d * d } else { r })
        .collect()
}

/// Group-standardized advantages `(r - mean) / (std + eps_std)` with the
/// population (divide-by-n) standard deviation.
pub fn group_advantages(r_tilde: &[f64], eps_std: f64) -> Vec<f64> {
    assert!(r_tilde.len() >= 2, "advantages need a group of at least 2");
    let mu = math::mean(r_tilde);
    let sigma = math::sqrt(math::population_variance(r_tilde));
    r_tilde.iter().map(|r| (r - mu) / (sigma + eps_std)).collect()
}

/// Softmax of `tau * d_bar` over the correct rollouts; zero elsewhere.
/// Computed in the log domain so large `tau * d_bar` cannot overflow.
pub fn coupling_weights(rewards: &[f64], d_bars: &[f64], tau: f64) -> Vec<f64> {
    debug_assert_eq!(rewards.len(), d_bars.len());
    let correct: Vec<usize> =
        (0..rewards.len()).filter(|&i| rewards[i] == 1.0).collect();
    let mut weights = alloc::vec![0.0; rewards.len()];
    if correct.is_empty() {
        return weights;
    }
    let scaled: Vec<f64> = correct.iter().map(|&i| tau * d_bars[i]).collect();
    let lse = math::log_sum_exp(&scaled);
    for (&i, &s) in correct.iter().zip(scaled.iter()) {
        weights[i] = math::exp(s - lse);
    }
    weights
}

/// Everything shaping derives from one group's rewards and diversity
/// scores.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupShaping {
    /// Indices of the correct rollouts.
    pub correct: Vec<usize>,
    pub r_tilde: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub advantages: Vec<f64>,
    pub weights: Vec<f64>,
}

pub fn shape_group(
    rewards: &[f64],
    d_bars: &[f64],
    lambda_d: f64,
    eps_std: f64,
    tau: f64,
) -> GroupShaping {
    let r_tilde = augment_rewards(rewards, d_bars, lambda_d);
    let mean = math::mean(&r_tilde);
    let std = math::sqrt(math::population_variance(&r_tilde));
    let advantages = group_advantages(&r_tilde, eps_std);
    let weights = coupling_weights(rewards, d_bars, tau);
    let correct = (0..rewards.len()).filter(|&i| rewards[i] == 1.0).collect();
    GroupShaping { correct, r_tilde, mean, std, advantages, weights }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    #[test]
    fn bonus_only_reaches_correct_rollouts() {
        let r = augment_rewards(&[1.0, 0.0, 1.0], &[0.5, 0.9, 0.2], 0.001);
        assert_eq!(r, alloc::vec![1.0005, 0.0, 1.0002]);
    }

    #[test]
    fn zero_lambda_leaves_rewards_untouched() {
        let rewards = [1.0, 0.0, 1.0, 0.0];
        let r = augment_rewards(&rewards, &[0.5, 0.5, 0.1, 0.9], 0.0);
        assert_eq!(r, rewards.to_vec());
    }

    #[test]
    fn advantages_standardize_a_mixed_group() {
        // Rewards (1, 0, 0, 0): mean 1/4, population std sqrt(3)/4.
        let a = group_advantages(&[1.0, 0.0, 0.0, 0.0], 0.0);
        let s = math::sqrt(3.0) / 4.0;
        assert_close(a[0], 0.75 / s, 1e-12);
        assert_close(a[1], -0.25 / s, 1e-12);
        assert_close(a[0], 1.7320508075688772, 1e-12);
        assert_close(a[1], -0.5773502691896257, 1e-12);
    }

    #[test]
    fn unanimous_integer_group_has_exactly_zero_advantages() {
        for reward in [0.0, 1.0] {
            let a = group_advantages(&alloc::vec![reward; 8], 1e-6);
            assert!(a.iter().all(|x| *x == 0.0), "expected exact zeros, got {a:?}");
        }
    }

    #[test]
    fn coupling_weights_match_hand_softmax() {
        // tau = 5, d_bar = (0.25, 0.75), both correct:
        // w = softmax(1.25, 3.75) = (0.0758..., 0.9241...).
        let w = coupling_weights(&[1.0, 1.0], &[0.25, 0.75], 5.0);
        assert_close(w[0], 1.0 / (1.0 + math::exp(2.5)), 1e-12);
        assert_close(w[1], 1.0 / (1.0 + math::exp(-2.5)), 1e-12);
        assert_close(w[0], 0.07585818002124356, 1e-12);
        assert_close(w[1], 0.9241418199787566, 1e-12);
    }

    #[test]
    fn incorrect_rollouts_get_zero_weight() {
        let w = coupling_weights(&[1.0, 0.0, 1.0, 0.0], &[0.3, 0.9, 0.3, 0.1], 5.0);
        assert_eq!(w[1], 0.0);
        assert_eq!(w[3], 0.0);
        assert_close(w[0] + w[2], 1.0, 1e-12);
        assert_close(w[0], 0.5, 1e-12);
    }

    #[test]
    fn all_incorrect_group_gets_all_zero_weights() {
        let w = coupling_weights(&[0.0, 0.0, 0.0], &[0.1, 0.2, 0.3], 5.0);
        assert_eq!(w, alloc::vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn huge_tau_does_not_overflow() {
        let w = coupling_weights(&[1.0, 1.0], &[0.0, 1.0], 1e6);
        assert!(w.iter().all(|x| x.is_finite()));
        assert_close(w[1], 1.0, 1e-12);
    }

    #[test]
    fn shape_group_bundles_consistently() {
        let rewards = [1.0, 0.0, 1.0, 1.0];
        let d_bars = [0.5, 0.4, 0.1, 0.2];
        let s = shape_group(&rewards, &d_bars, 0.001, 1e-6, 5.0);
        assert_eq!(s.correct, alloc::vec![0, 2, 3]);
        assert_eq!(s.r_tilde, augment_rewards(&rewards, &d_bars, 0.001));
        assert_eq!(s.advantages, group_advantages(&s.r_tilde, 1e-6));
        assert_eq!(s.weights, coupling_weights(&rewards, &d_bars, 5.0));
        assert_close(s.mean, math::mean(&s.r_tilde), 0.0);
    }

    proptest! {
        #[test]
        fn weights_form_a_distribution_over_correct(
            bits in proptest::collection::vec(0u8..2, 2..12),
            seed in 0u64..1000,
        ) {
            let mut rng = crate::rng::seeded(seed);
            let rewards: Vec<f64> = bits.iter().map(|b| f64::from(*b)).collect();
            let d_bars: Vec<f64> =
                (0..rewards.len()).map(|_| crate::rng::uniform(&mut rng, 0.0, 0.5)).collect();
            let w = coupling_weights(&rewards, &d_bars, 5.0);
            let total: f64 = w.iter().sum();
            let any_correct = rewards.contains(&1.0);
            if any_correct {
                prop_assert!((total - 1.0).abs() < 1e-12);
            } else {
                prop_assert_eq!(total, 0.0);
            }
            for (i, r) in rewards.iter().enumerate() {
                prop_assert!(w[i] >= 0.0);
                if *r == 0.0 {
                    prop_assert_eq!(w[i], 0.0);
                } else if any_correct {
                    prop_assert!(w[i] > 0.0);
                }
            }
        }

        #[test]
        fn advantages_have_near_zero_mean(
            bits in proptest::collection::vec(0u8..2, 2..12),
            seed in 0u64..1000,
        ) {
            let mut rng = crate::rng::seeded(seed);
            let rewards: Vec<f64> = bits.iter().map(|b| f64::from(*b)).collect();
            let d_bars: Vec<f64> =
                (0..rewards.len()).map(|_| crate::rng::uniform(&mut rng, 0.0, 0.5)).collect();
            let r_tilde = augment_rewards(&rewards, &d_bars, 0.001);
            let a = group_advantages(&r_tilde, 1e-6);
            prop_assert!(math::mean(&a).abs() < 1e-8);
            // Standardized magnitudes never exceed sqrt(n).
            let bound = math::sqrt(a.len() as f64) + 1e-9;
            for x in &a {
                prop_assert!(x.abs() <= bound);
            }
        }

        #[test]
        fn bonus_preserves_correctness_ordering(
            bits in proptest::collection::vec(0u8..2, 2..12),
            seed in 0u64..1000,
        ) {
            let mut rng = crate::rng::seeded(seed);
            let rewards: Vec<f64> = bits.iter().map(|b| f64::from(*b)).collect();
            let d_bars: Vec<f64> =
                (0..rewards.len()).map(|_| crate::rng::uniform(&mut rng, 0.0, 0.5)).collect();
            let r_tilde = augment_rewards(&rewards, &d_bars, 0.001);
            for (i, ri) in rewards.iter().enumerate() {
                for (j, rj) in rewards.iter().enumerate() {
                    if *ri > *rj {
                        prop_assert!(r_tilde[i] > r_tilde[j]);
                    }
                }
            }
        }
    }
}
