//! Kinematic TurtleBot arena and Kuka planar-reaching simulators with
//! procedural renderers, shaped rewards and scripted baselines.

mod export;
mod image;
mod kuka;
mod turtlebot;

use std::sync::Arc;

use rand::Rng;
use thiserror::Error;

pub use export::{trajectory_csv, TrajectoryRow};
pub use image::Image;
pub use kuka::{kuka_reward, KukaConfig, KukaEnv, KukaState};
pub use turtlebot::{
    tb_reward, ArenaConfig, Shape, TbFlags, TbObject, TurtleBotEnv, TurtleBotState,
};

use crate::audio::SoundFeature;
use crate::model::EnvKind;

#[derive(Debug, Error, PartialEq)]
pub enum EnvError {
    #[error("sound bank has no sample for class {0}")]
    EmptySoundBank(usize),
    #[error("action component {0} outside [-1, 1]")]
    ActionOutOfRange(f64),
    #[error("episode already finished")]
    EpisodeFinished,
    #[error("step called before reset")]
    NotReset,
    #[error("target index {0} out of range")]
    BadTarget(usize),
    #[error("invalid environment config: {0}")]
    Config(String),
    #[error("negative distance {0}")]
    NegativeDistance(f64),
}

/// Sound samples grouped by class index.
pub type SoundBank = Vec<Vec<Arc<SoundFeature>>>;

/// Named reward terms; the step reward is their sum.
#[derive(Clone, Debug, PartialEq)]
pub struct RewardBreakdown {
    pub components: Vec<(&'static str, f64)>,
}

impl RewardBreakdown {
    pub fn total(&self) -> f64 {
        self.components.iter().map(|(_, v)| v).sum()
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.components
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, v)| *v)
    }
}

#[derive(Clone, Debug)]
pub struct Observation {
    pub sound: Arc<SoundFeature>,
    /// Class of the sound (equal to the target index).
    pub sound_label: usize,
    pub image: Image,
    /// Robot state vector `M_t`.
    pub state: [f64; 2],
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepInfo {
    pub distance: f64,
    /// Bearing of the target from the camera axis (TurtleBot only).
    pub bearing: Option<f64>,
    pub success_so_far: bool,
}

#[derive(Clone, Debug)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: f64,
    pub breakdown: RewardBreakdown,
    pub done: bool,
    pub info: StepInfo,
}

/// Per-image supervision labels derived from ground truth.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Visibility {
    pub objects: [bool; 4],
    pub target: bool,
}

/// Common interface of both simulators.
pub trait Environment: Send {
    fn kind(&self) -> EnvKind;
    fn horizon(&self) -> usize;
    /// Starts an episode; `command` fixes the target, otherwise it is sampled.
    fn reset(&mut self, seed: u64, command: Option<usize>) -> Result<Observation, EnvError>;
    fn step(&mut self, action: [f64; 2]) -> Result<StepResult, EnvError>;
    fn target(&self) -> usize;
    fn t(&self) -> usize;
    fn success(&self) -> bool;
    /// Labels for the most recent observation.
    fn visibility(&self) -> Visibility;
    fn oracle_action(&self) -> [f64; 2];
    /// Current pose/state as a trajectory record (reward fields zero).
    fn trace(&self) -> TrajectoryRow;
}

pub fn random_walk_action<R: Rng>(rng: &mut R) -> [f64; 2] {
    [rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)]
}

pub(crate) fn check_action(a: [f64; 2]) -> Result<(), EnvError> {
    for v in a {
        if !(-1.0..=1.0).contains(&v) {
            return Err(EnvError::ActionOutOfRange(v));
        }
    }
    Ok(())
}

pub(crate) fn pick_sound<R: Rng>(
    bank: &SoundBank,
    class: usize,
    rng: &mut R,
) -> Result<Arc<SoundFeature>, EnvError> {
    let pool = bank
        .get(class)
        .filter(|p| !p.is_empty())
        .ok_or(EnvError::EmptySoundBank(class))?;
    Ok(Arc::clone(&pool[rng.random_range(0..pool.len())]))
}

/// Wraps an angle to (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    let mut x = (a + PI).rem_euclid(2.0 * PI) - PI;
    if x <= -PI {
        x += 2.0 * PI;
    }
    x
}

/// Builds an environment of the given kind with default settings.
pub fn make_env(
    kind: EnvKind,
    bank: Arc<SoundBank>,
    image_size: usize,
) -> Result<Box<dyn Environment>, EnvError> {
    Ok(match kind {
        EnvKind::TurtleBot => {
            let cfg = ArenaConfig {
                image_size,
                ..ArenaConfig::default()
            };
            Box::new(TurtleBotEnv::new(cfg, bank)?)
        }
        EnvKind::Kuka => {
            let cfg = KukaConfig {
                image_size,
                ..KukaConfig::default()
            };
            Box::new(KukaEnv::new(cfg, bank)?)
        }
    })
}
