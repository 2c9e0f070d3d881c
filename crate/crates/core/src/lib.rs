//! Group-relative policy optimization with diversity-shaped rewards and
//! diversity-coupled entropy regularization, scaled down to a tabular policy
//! on synthetic verifiable tasks so that every quantity in the update rule
//! can be checked exactly.
//!
//! The crate is organized around one training step:
//!
//! 1. [`env`] defines modular-arithmetic path-finding tasks with a binary
//!    verifier and exhaustive enumeration of correct answers.
//! 2. [`policy`] holds a context-windowed softmax policy with exact log-prob
//!    gradients, and samples groups of rollouts from a frozen snapshot.
//! 3. [`diversity`] scores each rollout's distinctiveness inside its group,
//!    combining a hashed-embedding distance with a formula-novelty count.
//! 4. [`shaping`] turns rewards and diversity scores into clipped bonuses,
//!    group-normalized advantages, and softmax coupling weights over the
//!    correct rollouts.
//! 5. [`local_entropy`] evaluates the length-invariant, importance-weighted
//!    entropy surrogate that those coupling weights allocate.
//! 6. [`trainer`] assembles the clipped surrogate, the reference-policy KL,
//!    and the entropy surrogate into one gradient-ascent step and streams
//!    per-step metrics.
//! 7. [`theory`] re-derives the analytical claims behind the method (softmax
//!    weights as self-normalized tilted estimators, entropy decomposition,
//!    correctness preservation, mixed-group probabilities) as runnable checks
//!    with explicit tolerances.
//!
//! Everything is deterministic given a seed: collections iterate in sorted
//! order, sampling uses a counter-based generator, and the math helpers call
//! [`libm`] so results do not depend on platform intrinsics.
#![cfg_attr(not(test), no_std)]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod diversity;
pub mod env;
pub mod local_entropy;
pub mod math;
pub mod policy;
pub mod rng;
pub mod shaping;
pub mod theory;
pub mod trainer;
