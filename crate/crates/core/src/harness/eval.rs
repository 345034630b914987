use serde::{Deserialize, Serialize};

use crate::envs::{random_walk_action, Environment};
use crate::model::{oracle_concept, ActMode, EnvKind, EpisodeMemory, Model, ObsView};
use crate::ppo::ConceptSource;
use crate::seeding;

use super::HarnessError;

pub const EVAL_EPISODES_PER_TARGET: usize = 50;
pub const EVAL_TARGETS: usize = 4;

#[derive(Clone, Copy)]
pub enum EvalPolicy<'a> {
    Model {
        model: &'a Model<f32>,
        source: ConceptSource,
    },
    RandomWalk,
    ScriptedOracle,
}

impl EvalPolicy<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            EvalPolicy::Model { source: ConceptSource::Oracle, .. } => "oracle-concept model",
            EvalPolicy::Model { .. } => "model",
            EvalPolicy::RandomWalk => "random_walk",
            EvalPolicy::ScriptedOracle => "scripted_oracle",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetBucket {
    pub target: usize,
    pub episodes: usize,
    pub successes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub target: usize,
    pub sound_label: usize,
    pub success: bool,
    pub reward: f64,
    pub steps: usize,
    pub first_success_step: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuccessReport {
    pub env: String,
    pub policy: String,
    pub sound_split: String,
    pub episodes: usize,
    pub per_target: Vec<TargetBucket>,
    pub success_rate: f64,
    pub mean_episode_reward: f64,
    /// Mean step index of the first success, over successful episodes.
    pub mean_steps_to_success: Option<f64>,
    #[serde(skip)]
    pub details: Vec<EpisodeSummary>,
}

/// Fixed protocol: 50 episodes per target, layouts reseeded per episode,
/// deterministic actions for learned policies. `env` should draw from the
/// test sound split.
pub fn evaluate(
    policy: EvalPolicy<'_>,
    env: &mut dyn Environment,
    seed: u64,
) -> Result<SuccessReport, HarnessError> {
    let env_kind = env.kind();
    if let EvalPolicy::Model { model, .. } = policy {
        if model.cfg.env_kind != env_kind {
            return Err(HarnessError::Mismatch(format!(
                "checkpoint trained on {}, evaluation requested on {}",
                model.cfg.env_kind.name(),
                env_kind.name()
            )));
        }
    }
    let mut details = Vec::with_capacity(EVAL_TARGETS * EVAL_EPISODES_PER_TARGET);
    for k in 0..EVAL_TARGETS {
        for i in 0..EVAL_EPISODES_PER_TARGET {
            let ep_seed = seeding::derive(seed, &[0x6576, k as u64, i as u64]);
            details.push(run_episode(policy, env, ep_seed, k)?);
        }
    }
    Ok(summarize(env_kind, policy.name(), details))
}

fn run_episode(
    policy: EvalPolicy<'_>,
    env: &mut dyn Environment,
    seed: u64,
    target: usize,
) -> Result<EpisodeSummary, HarnessError> {
    let mut rng = seeding::rng(seed, &[0x7277]);
    let mut obs = env.reset(seed, Some(target))?;
    let sound_label = obs.sound_label;
    let mut mem = match policy {
        EvalPolicy::Model { model, source } => {
            let units = model.cfg.integrator_units;
            Some(match source {
                ConceptSource::Learned => EpisodeMemory::new(units),
                ConceptSource::Oracle => EpisodeMemory::with_concept(units, oracle_concept(target)),
            })
        }
        _ => None,
    };
    let mut reward = 0.0;
    let mut first = None;
    let mut steps = 0;
    loop {
        let action = match policy {
            EvalPolicy::Model { model, .. } => {
                let view = ObsView {
                    sound: obs.sound.frames(),
                    image: &obs.image.data,
                    state: obs.state,
                };
                let mem = mem.as_mut().expect("model memory");
                model.act(&view, mem, ActMode::Deterministic, &mut rng)?.action
            }
            EvalPolicy::RandomWalk => random_walk_action(&mut rng),
            EvalPolicy::ScriptedOracle => env.oracle_action(),
        };
        let r = env.step(action)?;
        reward += r.reward;
        if r.info.success_so_far && first.is_none() {
            first = Some(steps);
        }
        steps += 1;
        obs = r.observation;
        if r.done {
            break;
        }
    }
    let success = env.success();
    if success && first.is_none() {
        first = Some(0);
    }
    Ok(EpisodeSummary {
        target,
        sound_label,
        success,
        reward,
        steps,
        first_success_step: first,
    })
}

fn summarize(env: EnvKind, policy: &str, details: Vec<EpisodeSummary>) -> SuccessReport {
    let per_target = (0..EVAL_TARGETS)
        .map(|k| TargetBucket {
            target: k,
            episodes: details.iter().filter(|d| d.target == k).count(),
            successes: details.iter().filter(|d| d.target == k && d.success).count(),
        })
        .collect::<Vec<_>>();
    let n = details.len();
    let successes: usize = per_target.iter().map(|b| b.successes).sum();
    let firsts: Vec<f64> = details
        .iter()
        .filter_map(|d| d.first_success_step.map(|s| s as f64))
        .collect();
    SuccessReport {
        env: env.name().into(),
        policy: policy.into(),
        sound_split: "test".into(),
        episodes: n,
        per_target,
        success_rate: successes as f64 / n as f64,
        mean_episode_reward: details.iter().map(|d| d.reward).sum::<f64>() / n as f64,
        mean_steps_to_success: if firsts.is_empty() {
            None
        } else {
            Some(firsts.iter().sum::<f64>() / firsts.len() as f64)
        },
        details,
    }
}

/// Seed of the evaluation episode stream for a run.
pub fn eval_seed(run_seed: u64) -> u64 {
    seeding::derive(run_seed, &[0x6576])
}
