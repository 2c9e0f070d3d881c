//! Scalar and categorical-distribution helpers.
//!
//! All transcendentals go through [`libm`] so the crate computes identical
//! bits on every platform, which the reproducibility tests rely on.

use alloc::vec::Vec;

pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

pub fn powi(x: f64, n: u32) -> f64 {
    let mut acc = 1.0;
    for _ in 0..n {
        acc *= x;
    }
    acc
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population variance (divides by `n`, not `n - 1`).
pub fn population_variance(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = xs.iter().map(|x| exp(x - max)).sum();
    max + ln(sum)
}

/// Log-probabilities of the categorical distribution with the given logits.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(logits);
    logits.iter().map(|z| z - lse).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    log_softmax(logits).iter().map(|lp| exp(*lp)).collect()
}

/// Shannon entropy (nats) of the categorical distribution with the given
/// logits, computed in the log domain so collapsed rows do not underflow.
pub fn entropy_from_logits(logits: &[f64]) -> f64 {
    let logp = log_softmax(logits);
    -logp.iter().map(|lp| exp(*lp) * lp).sum::<f64>()
}

/// Shannon entropy (nats) of an explicit probability vector. Zero entries
/// contribute zero.
pub fn entropy(probs: &[f64]) -> f64 {
    -probs
        .iter()
        .filter(|p| **p > 0.0)
        .map(|p| p * ln(*p))
        .sum::<f64>()
}

/// KL divergence (nats) between the categorical distributions with logits
/// `p_logits` and `q_logits`.
pub fn kl_from_logits(p_logits: &[f64], q_logits: &[f64]) -> f64 {
    debug_assert_eq!(p_logits.len(), q_logits.len());
    let logp = log_softmax(p_logits);
    let logq = log_softmax(q_logits);
    logp.iter()
        .zip(logq.iter())
        .map(|(lp, lq)| exp(*lp) * (lp - lq))
        .sum()
}
