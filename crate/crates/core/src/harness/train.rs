use std::fs::OpenOptions;
use std::io::Write;
use std::path::PathBuf;

use super::{arena_config, build_env, load_sounds, sound_bank, Checkpoint, HarnessError, RunConfig};
use crate::model::{EnvKind, Model};
use crate::ppo::{
    collect_vision_samples, pretrain_vision, ConceptSource, PretrainConfig, PretrainReport,
    TrainMetrics, Trainer,
};
use crate::seeding;

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// Output directory for `config.resolved`, `metrics.jsonl` and checkpoints.
    pub out_dir: Option<PathBuf>,
    /// Run episodes on the rayon pool.
    pub parallel: bool,
    /// Stop after this many updates in this call, regardless of the step budget.
    pub max_updates: Option<u64>,
}

pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub metrics: Vec<TrainMetrics>,
    pub pretrain: Option<PretrainReport>,
}

/// Vision pretraining on frames from the run's arena, with its own seed stream.
pub fn pretrain_for(cfg: &RunConfig, model: &mut Model<f32>) -> Result<PretrainReport, HarnessError> {
    if cfg.env != EnvKind::TurtleBot {
        return Err(HarnessError::Config("vision pretraining needs the turtlebot arena".into()));
    }
    let seed = seeding::derive(cfg.seed, &[0x7076]);
    let samples = collect_vision_samples(&arena_config(cfg), cfg.pretrain_cfg.n_images, seed)?;
    let pcfg = PretrainConfig {
        seed,
        ..cfg.pretrain_cfg.clone()
    };
    Ok(pretrain_vision(model, &samples, &pcfg)?)
}

/// Trains from scratch (pretraining first when enabled) or resumes from
/// `resume`. Training stops once the step budget is spent.
pub fn train(
    cfg: &RunConfig,
    resume: Option<Checkpoint>,
    opts: &TrainOptions,
    mut on_update: impl FnMut(&TrainMetrics),
) -> Result<TrainOutcome, HarnessError> {
    cfg.validate()?;
    let (train_ds, _) = load_sounds(cfg)?;
    let bank = sound_bank(&train_ds);
    let ppo = cfg.effective_ppo();
    let envs = (0..ppo.n_envs)
        .map(|_| build_env(cfg, bank.clone()))
        .collect::<Result<Vec<_>, _>>()?;
    let source = if cfg.ablation.oracle_concept {
        ConceptSource::Oracle
    } else {
        ConceptSource::Learned
    };

    let mut pretrain = None;
    let (model, state) = match resume {
        Some(ck) => {
            if ck.config != *cfg {
                return Err(HarnessError::Mismatch(
                    "checkpoint config differs from the requested run".into(),
                ));
            }
            (ck.model, Some((ck.adam, ck.update_index, ck.steps_done)))
        }
        None => {
            let mut model = Model::<f32>::new(cfg.effective_net(), cfg.seed)?;
            if cfg.pretrain {
                pretrain = Some(pretrain_for(cfg, &mut model)?);
            }
            (model, None)
        }
    };
    let mut trainer = Trainer::new(model, ppo, source, envs, cfg.seed, opts.parallel)?;
    if let Some((adam, update_index, steps_done)) = state {
        trainer.adam = adam;
        trainer.update_index = update_index;
        trainer.steps_done = steps_done;
    }

    let mut metrics_file = match &opts.out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            std::fs::write(dir.join("config.resolved"), cfg.resolved())?;
            if let Some(p) = &pretrain {
                super::write_json(&dir.join("pretrain.json"), p)?;
            }
            Some(
                OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(dir.join("metrics.jsonl"))?,
            )
        }
        None => None,
    };

    let snapshot = |t: &Trainer| Checkpoint {
        config: cfg.clone(),
        model: t.model.clone(),
        adam: t.adam.clone(),
        update_index: t.update_index,
        steps_done: t.steps_done,
    };
    let mut metrics = Vec::new();
    let mut done_here = 0u64;
    while trainer.steps_done < cfg.total_timesteps && opts.max_updates.is_none_or(|m| done_here < m) {
        let m = trainer.update()?;
        done_here += 1;
        if let Some(f) = metrics_file.as_mut() {
            writeln!(f, "{}", serde_json::to_string(&m)?)?;
        }
        on_update(&m);
        metrics.push(m);
        if let Some(dir) = &opts.out_dir {
            if trainer.update_index % cfg.checkpoint_every == 0 {
                snapshot(&trainer).save(&dir.join(format!("checkpoint-{:06}.bin", trainer.update_index)))?;
            }
        }
    }
    let checkpoint = snapshot(&trainer);
    if let Some(dir) = &opts.out_dir {
        checkpoint.save(&dir.join("checkpoint-final.bin"))?;
    }
    Ok(TrainOutcome {
        checkpoint,
        metrics,
        pretrain,
    })
}
