use std::sync::Arc;

use rayon::prelude::*;

use super::{PpoConfig, PpoError};
use crate::audio::SoundFeature;
use crate::envs::{Environment, Image, Visibility};
use crate::model::{oracle_concept, ActMode, EpisodeMemory, Model, ObsView};
use crate::seeding;

/// Where the concept slot of the integrator is filled from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConceptSource {
    /// Encoded from the episode's sound.
    Learned,
    /// One-hot pattern of the ground-truth target.
    Oracle,
}

/// One complete episode plus the behaviour policy's per-step outputs.
#[derive(Clone, Debug)]
pub struct EpisodeRecord {
    pub env_index: usize,
    pub seed: u64,
    pub target: usize,
    pub sound: Arc<SoundFeature>,
    pub images: Vec<Image>,
    pub states: Vec<[f64; 2]>,
    /// Pre-clip actions.
    pub actions: Vec<[f32; 2]>,
    pub log_probs: Vec<f32>,
    pub values: Vec<f32>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    pub visibility: Vec<Visibility>,
    pub success: bool,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl EpisodeRecord {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn total_reward(&self) -> f64 {
        self.rewards.iter().sum()
    }
}

#[derive(Clone, Debug, Default)]
pub struct RolloutBuffer {
    pub episodes: Vec<EpisodeRecord>,
    /// How many times the sound encoder ran during collection.
    pub encodings: usize,
}

impl RolloutBuffer {
    pub fn steps(&self) -> usize {
        self.episodes.iter().map(EpisodeRecord::len).sum()
    }

    pub fn mean_episode_reward(&self) -> f64 {
        if self.episodes.is_empty() {
            return 0.0;
        }
        self.episodes.iter().map(|e| e.total_reward()).sum::<f64>() / self.episodes.len() as f64
    }

    pub fn success_fraction(&self) -> f64 {
        if self.episodes.is_empty() {
            return 0.0;
        }
        self.episodes.iter().filter(|e| e.success).count() as f64 / self.episodes.len() as f64
    }
}

/// Generalized advantage estimates and returns over a flat sequence.
pub fn gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap_value: f64,
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>), PpoError> {
    let n = rewards.len();
    if values.len() != n || dones.len() != n {
        return Err(PpoError::Length(format!(
            "{n} rewards, {} values, {} dones",
            values.len(),
            dones.len()
        )));
    }
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    let mut next_value = bootstrap_value;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * live - values[t];
        next_adv = delta + gamma * lambda * live * next_adv;
        adv[t] = next_adv;
        next_value = values[t];
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, ret))
}

/// Rescales all advantages in the buffer to zero mean and unit variance.
pub fn normalize_advantages(buffer: &mut RolloutBuffer) {
    let all: Vec<f64> = buffer
        .episodes
        .iter()
        .flat_map(|e| e.advantages.iter().copied())
        .collect();
    if all.is_empty() {
        return;
    }
    let n = all.len() as f64;
    let mean = all.iter().sum::<f64>() / n;
    let var = all.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    for e in &mut buffer.episodes {
        for a in &mut e.advantages {
            *a = if std > 1e-12 { (*a - mean) / std } else { *a - mean };
        }
    }
}

/// Seed of episode `j` run by environment `i` during update `u`.
pub(crate) fn episode_seed(run_seed: u64, update: u64, env: usize, episode: usize) -> u64 {
    seeding::derive(run_seed, &[0x6570, update, env as u64, episode as u64])
}

fn run_env(
    env: &mut dyn Environment,
    env_index: usize,
    model: &Model<f32>,
    cfg: &PpoConfig,
    source: ConceptSource,
    run_seed: u64,
    update: u64,
) -> Result<(Vec<EpisodeRecord>, usize), PpoError> {
    let units = model.cfg.integrator_units;
    let mut out = Vec::with_capacity(cfg.episodes_per_env);
    let mut encodings = 0;
    for j in 0..cfg.episodes_per_env {
        let seed = episode_seed(run_seed, update, env_index, j);
        let mut rng = seeding::rng(seed, &[0x6163]);
        let mut obs = env.reset(seed, None)?;
        let target = env.target();
        let mut mem = match source {
            ConceptSource::Learned => EpisodeMemory::new(units),
            ConceptSource::Oracle => EpisodeMemory::with_concept(units, oracle_concept(target)),
        };
        let horizon = env.horizon();
        let mut ep = EpisodeRecord {
            env_index,
            seed,
            target,
            sound: Arc::clone(&obs.sound),
            images: Vec::with_capacity(horizon),
            states: Vec::with_capacity(horizon),
            actions: Vec::with_capacity(horizon),
            log_probs: Vec::with_capacity(horizon),
            values: Vec::with_capacity(horizon),
            rewards: Vec::with_capacity(horizon),
            dones: Vec::with_capacity(horizon),
            visibility: Vec::with_capacity(horizon),
            success: false,
            advantages: Vec::new(),
            returns: Vec::new(),
        };
        loop {
            let view = ObsView {
                sound: obs.sound.frames(),
                image: &obs.image.data,
                state: obs.state,
            };
            let out_step = model.act(&view, &mut mem, ActMode::Stochastic, &mut rng)?;
            ep.visibility.push(env.visibility());
            let r = env.step(out_step.action)?;
            ep.images.push(obs.image);
            ep.states.push(obs.state);
            ep.actions.push(out_step.raw_action);
            ep.log_probs.push(out_step.log_prob);
            ep.values.push(out_step.value);
            ep.rewards.push(r.reward);
            ep.dones.push(r.done);
            obs = r.observation;
            if r.done {
                break;
            }
        }
        ep.success = env.success();
        let scaled: Vec<f64> = ep.rewards.iter().map(|r| r * cfg.reward_scale).collect();
        let values: Vec<f64> = ep.values.iter().map(|&v| v as f64).collect();
        let (adv, ret) = gae(&scaled, &values, &ep.dones, 0.0, cfg.gamma, cfg.gae_lambda)?;
        ep.advantages = adv;
        ep.returns = ret;
        encodings += mem.encodings;
        out.push(ep);
    }
    Ok((out, encodings))
}

/// Runs `episodes_per_env` complete episodes in every environment. Results
/// are merged in environment order, so serial and parallel runs agree.
pub fn collect(
    envs: &mut [Box<dyn Environment>],
    model: &Model<f32>,
    cfg: &PpoConfig,
    source: ConceptSource,
    run_seed: u64,
    update: u64,
    parallel: bool,
) -> Result<RolloutBuffer, PpoError> {
    if let Some(e) = envs.iter().find(|e| e.kind() != model.cfg.env_kind) {
        return Err(PpoError::Mismatch(format!(
            "{} environment with a {} model",
            e.kind().name(),
            model.cfg.env_kind.name()
        )));
    }
    let work = |(i, env): (usize, &mut Box<dyn Environment>)| {
        run_env(env.as_mut(), i, model, cfg, source, run_seed, update)
    };
    let parts: Vec<Result<_, PpoError>> = if parallel {
        envs.par_iter_mut().enumerate().map(work).collect()
    } else {
        envs.iter_mut().enumerate().map(work).collect()
    };
    let mut buffer = RolloutBuffer::default();
    for p in parts {
        let (eps, enc) = p?;
        buffer.episodes.extend(eps);
        buffer.encodings += enc;
    }
    Ok(buffer)
}
