use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{
    collect, normalize_advantages, ppo_losses, ConceptSource, LossBreakdown, PpoConfig,
    PpoError, RolloutBuffer,
};
use crate::diff::{adam_step, AdamState};
use crate::envs::Environment;
use crate::model::Model;
use crate::seeding;

/// One line of the metrics stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainMetrics {
    pub update_index: u64,
    pub mean_episode_reward: f64,
    pub success_fraction: f64,
    pub l_pg: f64,
    pub l_s: f64,
    pub l_o: f64,
    pub l_t: f64,
    pub total: f64,
    pub wall_ms: u64,
    pub steps: u64,
    pub grad_norm: f64,
}

impl TrainMetrics {
    /// The same record with the timing field cleared, for reproducibility checks.
    pub fn without_timing(&self) -> TrainMetrics {
        TrainMetrics {
            wall_ms: 0,
            ..self.clone()
        }
    }
}

/// PPO training loop state. All randomness is derived from `seed` and the
/// update counter, so a run resumes exactly from a checkpoint.
pub struct Trainer {
    pub model: Model<f32>,
    pub adam: AdamState<f32>,
    pub cfg: PpoConfig,
    pub source: ConceptSource,
    pub seed: u64,
    pub update_index: u64,
    pub steps_done: u64,
    pub parallel: bool,
    envs: Vec<Box<dyn Environment>>,
}

impl Trainer {
    pub fn new(
        model: Model<f32>,
        cfg: PpoConfig,
        source: ConceptSource,
        envs: Vec<Box<dyn Environment>>,
        seed: u64,
        parallel: bool,
    ) -> Result<Self, PpoError> {
        cfg.validate()?;
        if envs.len() != cfg.n_envs {
            return Err(PpoError::Config(format!(
                "{} environments supplied, config asks for {}",
                envs.len(),
                cfg.n_envs
            )));
        }
        let adam = AdamState::new(&model.params, cfg.lr);
        Ok(Self {
            model,
            adam,
            cfg,
            source,
            seed,
            update_index: 0,
            steps_done: 0,
            parallel,
            envs,
        })
    }

    pub fn collect(&mut self) -> Result<RolloutBuffer, PpoError> {
        collect(
            &mut self.envs,
            &self.model,
            &self.cfg,
            self.source,
            self.seed,
            self.update_index,
            self.parallel,
        )
    }

    /// Epochs of episode-aligned minibatch updates over a collected buffer.
    /// Returns the mean loss parts and mean pre-clip gradient norm.
    pub fn optimize(&mut self, buffer: &mut RolloutBuffer) -> Result<(LossBreakdown, f64), PpoError> {
        normalize_advantages(buffer);
        let n = buffer.episodes.len();
        let mb_size = n.div_ceil(self.cfg.minibatches);
        let mut sum = LossBreakdown::default();
        let mut norm_sum = 0.0;
        let mut passes = 0usize;
        for epoch in 0..self.cfg.epochs_per_update {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut seeding::rng(
                self.seed,
                &[0x6d62, self.update_index, epoch as u64],
            ));
            for chunk in order.chunks(mb_size) {
                let eps: Vec<_> = chunk.iter().map(|&i| &buffer.episodes[i]).collect();
                let (mut grads, parts) =
                    ppo_losses(&self.model, &eps, &self.cfg, self.source, self.parallel)
                        .map_err(|e| self.tag(e))?;
                if !parts.all_finite() || !grads.all_finite() {
                    return Err(PpoError::NonFiniteLoss {
                        update: self.update_index,
                        detail: format!("{parts:?}"),
                    });
                }
                norm_sum += grads.clip_global_norm(self.cfg.grad_norm_clip);
                adam_step(&mut self.model.params, &grads, &mut self.adam)?;
                sum.add(&parts);
                passes += 1;
            }
        }
        let k = 1.0 / passes.max(1) as f64;
        Ok((sum.scaled(k), norm_sum * k))
    }

    fn tag(&self, e: PpoError) -> PpoError {
        match e {
            PpoError::NonFiniteLoss { detail, .. } => PpoError::NonFiniteLoss {
                update: self.update_index,
                detail,
            },
            other => other,
        }
    }

    /// One collect + optimize cycle.
    pub fn update(&mut self) -> Result<TrainMetrics, PpoError> {
        let start = Instant::now();
        let mut buffer = self.collect()?;
        let (loss, grad_norm) = self.optimize(&mut buffer)?;
        self.steps_done += buffer.steps() as u64;
        let m = TrainMetrics {
            update_index: self.update_index,
            mean_episode_reward: buffer.mean_episode_reward(),
            success_fraction: buffer.success_fraction(),
            l_pg: loss.l_pg,
            l_s: loss.l_s,
            l_o: loss.l_o,
            l_t: loss.l_t,
            total: loss.total,
            wall_ms: start.elapsed().as_millis() as u64,
            steps: self.steps_done,
            grad_norm,
        };
        self.update_index += 1;
        Ok(m)
    }
}
