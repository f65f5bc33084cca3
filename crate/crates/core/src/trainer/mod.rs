//! The sequential per-agent mirror descent learner and its baselines.

mod exact;
mod loss;
mod run;

pub use exact::{
    exact_tabular_iteration, one_hot_policies, tabular_policy_of, ExactIterationReport,
};
pub use loss::{
    accumulate_m, happo_clip_agent_loss, hamdpo_agent_loss, update_agent, AgentSamples,
    AgentUpdateReport, LossNodes, Objective, UpdateOptions, LOG_RATIO_LIMIT,
};
pub use run::{
    hamdpo_iteration, independent_pg_iteration, init_state, iteration, IterationMetrics,
    TrainerState,
};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::DEFAULT_HIDDEN;
use crate::rollout::GaeConfig;
use crate::seeding::Rng;

/// Gradient norms above this are scaled down to it.
pub const GRAD_CLIP: f64 = 1e3;

/// Default batch size in timesteps.
pub const MIN_BATCH_STEPS: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Hamdpo,
    HappoClip,
    IndependentPg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    /// `t_k = t_0 (1 - k / K)`
    Linear,
    /// `t_k = t_0`
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainerConfig {
    /// Iteration budget `K`.
    pub iterations: usize,
    /// Policy SGD steps per agent per iteration (`g`).
    pub sgd_steps: usize,
    /// Policy learning rate `eta`.
    pub learning_rate: f64,
    /// Initial mirror descent step size `t_0`.
    pub stepsize: f64,
    pub schedule: Schedule,
    /// Episodes collected per iteration. When absent, enough episodes to
    /// hold at least [`MIN_BATCH_STEPS`] timesteps.
    pub episodes_per_iteration: Option<usize>,
    pub gae: GaeConfig,
    pub algorithm: Algorithm,
    pub clip_epsilon: f64,
    pub seed: u64,
    pub advantage_normalization: bool,
    pub policy_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub critic_learning_rate: f64,
    pub critic_epochs: usize,
    pub critic_minibatch: usize,
    /// Initial log standard deviation of Gaussian policies.
    pub initial_log_std: f64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            iterations: 100,
            sgd_steps: 10,
            learning_rate: 3e-4,
            stepsize: 1.0,
            schedule: Schedule::Linear,
            episodes_per_iteration: None,
            gae: GaeConfig::default(),
            algorithm: Algorithm::Hamdpo,
            clip_epsilon: 0.2,
            seed: 0,
            advantage_normalization: true,
            policy_hidden: DEFAULT_HIDDEN.to_vec(),
            critic_hidden: DEFAULT_HIDDEN.to_vec(),
            critic_learning_rate: 1e-2,
            critic_epochs: 4,
            critic_minibatch: 256,
            initial_log_std: 0.0,
        }
    }
}

impl TrainerConfig {
    /// Checks every field. `iterations = 0` is accepted and means an empty
    /// run.
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.sgd_steps == 0 {
            return fail("trainer.sgd_steps must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("trainer.learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(self.stepsize > 0.0 && self.stepsize.is_finite()) {
            return fail(format!("trainer.stepsize must be positive, got {}", self.stepsize));
        }
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon < 1.0) {
            return fail(format!("trainer.clip_epsilon must be in (0, 1), got {}", self.clip_epsilon));
        }
        if self.episodes_per_iteration == Some(0) {
            return fail("trainer.episodes_per_iteration must be at least 1".into());
        }
        if self.policy_hidden.contains(&0) || self.critic_hidden.contains(&0) {
            return fail("hidden layer widths must be positive".into());
        }
        if !(self.critic_learning_rate >= 0.0 && self.critic_learning_rate.is_finite()) {
            return fail("trainer.critic_learning_rate must be non-negative".into());
        }
        if self.critic_minibatch == 0 {
            return fail("trainer.critic_minibatch must be at least 1".into());
        }
        if !self.initial_log_std.is_finite() {
            return fail("trainer.initial_log_std must be finite".into());
        }
        self.gae.validate()
    }

    pub fn episodes_for(&self, horizon: usize) -> usize {
        self.episodes_per_iteration
            .unwrap_or_else(|| MIN_BATCH_STEPS.div_ceil(horizon.max(1)))
    }
}

/// Mirror descent step size `t_k` for iteration `k < K`.
pub fn stepsize(k: usize, cfg: &TrainerConfig) -> Result<f64> {
    if k >= cfg.iterations {
        return Err(Error::InvalidArgument(format!(
            "iteration {k} outside the budget of {}",
            cfg.iterations
        )));
    }
    Ok(match cfg.schedule {
        Schedule::Linear => cfg.stepsize * (1.0 - k as f64 / cfg.iterations as f64),
        Schedule::Constant => cfg.stepsize,
    })
}

/// Uniformly random ordering of `0..n`.
pub fn draw_permutation(n: usize, rng: &mut Rng) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order
}
