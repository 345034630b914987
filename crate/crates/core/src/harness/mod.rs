//! Run configuration, checkpoints, training and evaluation drivers, the
//! ablation grid, and data/trajectory export.

mod ablate;
mod checkpoint;
mod config;
mod eval;
mod export;
mod train;

use std::path::Path;
use std::sync::Arc;

use thiserror::Error;

pub use ablate::{ablation_rows, run_ablation, AblationResult, AblationRow};
pub use checkpoint::{Checkpoint, FORMAT_VERSION};
pub use config::{Ablation, Profile, RunConfig, SoundSource};
pub use eval::{
    eval_seed, evaluate, EpisodeSummary, EvalPolicy, SuccessReport, TargetBucket, EVAL_EPISODES_PER_TARGET,
    EVAL_TARGETS,
};
pub use export::{export_trajectory, synth_data, TrajectoryExport};
pub use train::{pretrain_for, train, TrainOptions, TrainOutcome};

use crate::audio::{load_dataset, AudioError, Note, SoundDataset, SplitCounts};
use crate::envs::{ArenaConfig, EnvError, Environment, KukaConfig, KukaEnv, SoundBank, TurtleBotEnv};
use crate::model::{EnvKind, ModelError};
use crate::ppo::PpoError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid run config: {0}")]
    Config(String),
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error("mismatch: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Ppo(#[from] PpoError),
}

/// Train and test sound splits for a run.
pub fn load_sounds(cfg: &RunConfig) -> Result<(SoundDataset, SoundDataset), HarnessError> {
    let counts = SplitCounts {
        train: cfg.train_per_class,
        test: cfg.test_per_class,
    };
    Ok(match &cfg.sound {
        SoundSource::Synthetic => {
            SoundDataset::synthetic(&Note::ALL, counts, cfg.seed, cfg.synth_duration_s)?
        }
        SoundSource::WavDir { dir, labels } => {
            if labels.len() != EVAL_TARGETS {
                return Err(HarnessError::Config(format!(
                    "wordset needs {EVAL_TARGETS} labels, got {}",
                    labels.len()
                )));
            }
            load_dataset(dir, labels, counts, cfg.seed)?
        }
    })
}

pub fn sound_bank(ds: &SoundDataset) -> Arc<SoundBank> {
    Arc::new(ds.by_label())
}

/// Environment instance matching the run's network input size and
/// colour-randomization switch.
pub fn build_env(cfg: &RunConfig, bank: Arc<SoundBank>) -> Result<Box<dyn Environment>, HarnessError> {
    let size = cfg.net.image.1;
    Ok(match cfg.env {
        EnvKind::TurtleBot => Box::new(TurtleBotEnv::new(arena_config(cfg), bank)?),
        EnvKind::Kuka => Box::new(KukaEnv::new(
            KukaConfig {
                image_size: size,
                ..KukaConfig::default()
            },
            bank,
        )?),
    })
}

pub fn arena_config(cfg: &RunConfig) -> ArenaConfig {
    ArenaConfig {
        image_size: cfg.net.image.1,
        color_randomization: cfg.color_randomization,
        ..ArenaConfig::default()
    }
}

pub(crate) fn write_json<T: serde::Serialize>(path: &Path, v: &T) -> Result<(), HarnessError> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    std::fs::write(path, s)?;
    Ok(())
}
