//! Prompt-template inversion via reinforcement learning.
//!
//! A text-to-image prompt template is a reusable prompt with a substitutable
//! subject placeholder plus fixed style fields (modifiers, supplement).
//! Marketplaces showcase hidden templates through a handful of exemplar
//! images. This crate recovers such templates from the exemplars alone:
//! a PPO-trained agent iteratively edits a candidate description through
//! four discrete mutation actions, guided by a three-part similarity reward.
//!
//! Everything external (the mutation LLM, the image generator, text/image
//! embedders) sits behind the [`gateway`], which binds each role either to a
//! live OpenAI-compatible endpoint (feature `live`) or to the deterministic
//! offline simulator in [`simworld`]. In sim mode the entire pipeline —
//! dataset generation, training, attack, evaluation — is reproducible
//! bit-for-bit from seeds.
//!
//! Module map:
//! - [`numerics`] — dense MLP forward/backward, Adam, softmax, cosine.
//! - [`policy`] — policy/value networks and action selection.
//! - [`ppo`] — returns, advantages, the clipped surrogate update, training.
//! - [`template`] — fragmented descriptions and renderable templates.
//! - [`environment`] — warm start, the four mutation actions, episode steps.
//! - [`reward`] — the three reward components and their weighted combination.
//! - [`gateway`] — backend roles, usage metering, live client.
//! - [`simworld`] — closed synthetic implementation of every backend role.
//! - [`dataset`] — manifest loading, splits, synthetic dataset generation.
//! - [`evalbench`] — five-metric evaluation, random baseline, reports.

pub mod checkpoint;
pub mod dataset;
pub mod environment;
pub mod error;
pub mod evalbench;
pub mod gateway;
pub mod numerics;
pub mod policy;
pub mod ppo;
pub mod reward;
pub mod rng;
pub mod simworld;
pub mod template;

#[cfg(test)]
mod test_support;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T, E = Error> = std::result::Result<T, E>;
