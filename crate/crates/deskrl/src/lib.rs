//! Desk-scale two-stage reasoning trainer.
//!
//! The pipeline has four stages, all runnable end to end on a toy
//! autoregressive policy and a synthetic arithmetic task:
//!
//! 1. **Curation**: sample N attempts per problem, score them with the
//!    boxed-answer verifier, drop problems the scorer always or never solves,
//!    and stratify the survivors into 15 difficulty tiers (success count)
//!    grouped into Hard (1–5), Medium (6–11), and Easy (12–15) bins.
//! 2. **SFT**: masked cross-entropy on chain-of-thought traces, teaching the
//!    policy the reasoning format before any RL.
//! 3. **GRPO**: group rollouts with binary accuracy rewards, group-relative
//!    advantages, an asymmetric clipped token-level surrogate with no KL term,
//!    overlong filtering, and strictly single-step on-policy updates.
//! 4. **Evaluation**: greedy decoding under a fixed system prompt, verified
//!    answers, accuracy reported overall and per tier/bin.
//!
//! Generation goes through the [`backend::Backend`] trait: one implementation
//! wraps the in-repo toy policy, another speaks JSON-over-HTTP to
//! chat-completion endpoints, so the same curation and evaluation machinery
//! runs against remote inference servers.

pub mod backend;
pub mod config;
pub mod curator;
pub mod error;
pub mod eval;
pub mod grpo;
pub mod policy;
pub mod sft;
pub mod verifier;

pub use error::{Error, Result};
