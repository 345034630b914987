//! Rollout collection, advantage estimation, the clipped surrogate with
//! auxiliary supervision, and vision pretraining.

mod encoder;
mod loss;
mod pretrain;
mod rollout;
mod trainer;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use encoder::{encoder_accuracy, train_sound_encoder, EncoderTrainConfig, EncoderTrainReport};
pub use loss::{episode_loss, episode_objective, ppo_losses, LossBreakdown, LossWeights};
pub use pretrain::{pretrain_vision, vision_losses, PretrainConfig, PretrainReport, VisionSample, collect_vision_samples};
pub use rollout::{collect, gae, normalize_advantages, ConceptSource, EpisodeRecord, RolloutBuffer};
pub use trainer::{TrainMetrics, Trainer};

use crate::diff::DiffError;
use crate::envs::EnvError;
use crate::model::{EnvKind, ModelError};

#[derive(Debug, Error)]
pub enum PpoError {
    #[error("invalid ppo config: {0}")]
    Config(String),
    #[error("length mismatch: {0}")]
    Length(String),
    #[error("environment/model mismatch: {0}")]
    Mismatch(String),
    #[error("non-finite loss in update {update}: {detail}")]
    NonFiniteLoss { update: u64, detail: String },
    #[error("vision pretraining is only defined for the turtlebot arena")]
    PretrainKind,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Diff(#[from] DiffError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PpoConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_epsilon: f64,
    pub epochs_per_update: usize,
    pub minibatches: usize,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub grad_norm_clip: f64,
    pub lr: f64,
    pub n_envs: usize,
    pub episodes_per_env: usize,
    /// Multiplier on rewards before advantage estimation; metrics stay unscaled.
    pub reward_scale: f64,
    pub weights: LossWeights,
}

impl PpoConfig {
    pub fn paper(env: EnvKind) -> Self {
        let aux = match env {
            EnvKind::TurtleBot => 0.5,
            EnvKind::Kuka => 0.0,
        };
        Self {
            gamma: 0.99,
            gae_lambda: 0.95,
            clip_epsilon: 0.2,
            epochs_per_update: 4,
            minibatches: 4,
            value_coef: 0.5,
            entropy_coef: 0.01,
            grad_norm_clip: 0.5,
            lr: 8e-6,
            n_envs: 8,
            episodes_per_env: 4,
            reward_scale: 1.0,
            weights: LossWeights {
                pg: 1.0,
                s: 1.0,
                o: aux,
                t: aux,
            },
        }
    }

    /// Faster-moving settings for short single-core runs.
    pub fn desk(env: EnvKind) -> Self {
        Self {
            lr: 3e-4,
            episodes_per_env: 1,
            reward_scale: 0.1,
            ..Self::paper(env)
        }
    }

    pub fn validate(&self) -> Result<(), PpoError> {
        let bad = |m: &str| Err(PpoError::Config(m.to_string()));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gae_lambda must lie in [0, 1]");
        }
        if self.clip_epsilon <= 0.0 {
            return bad("clip_epsilon must be positive");
        }
        if self.n_envs == 0 || self.episodes_per_env == 0 {
            return bad("n_envs and episodes_per_env must be at least 1");
        }
        if self.epochs_per_update == 0 || self.minibatches == 0 {
            return bad("epochs and minibatches must be at least 1");
        }
        if self.minibatches > self.n_envs * self.episodes_per_env {
            return bad("more minibatches than episodes per update");
        }
        if !(self.lr >= 0.0 && self.grad_norm_clip > 0.0 && self.reward_scale > 0.0) {
            return bad("lr, grad_norm_clip and reward_scale must be positive");
        }
        Ok(())
    }

    pub fn episodes_per_update(&self) -> usize {
        self.n_envs * self.episodes_per_env
    }
}
