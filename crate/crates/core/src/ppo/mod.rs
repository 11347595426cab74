//! Rollouts, GAE and the clipped-surrogate policy update (no KL term).

pub mod gae;
pub mod rollout;
pub mod update;

pub use gae::{compute_gae, whiten, AdvantageSet};
pub use rollout::{
    collect_demonstration, collect_demonstrations, collect_trial, collect_trials, score_with_student, Rollout, RolloutSource,
    PROMPT_TOKENS,
};
pub use update::{advantages_for, ppo_loss, ppo_update, token_rewards, PPOConfig, PpoLoss, PpoStats, RATIO_MAX, RATIO_MIN};
