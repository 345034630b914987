use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::PpoError;
use crate::audio::SoundFeature;
use crate::diff::{adam_step, AdamState, Gradients, Tape};
use crate::envs::{
    random_walk_action, ArenaConfig, Environment, Image, TurtleBotEnv, Visibility,
};
use crate::model::{oracle_concept, EnvKind, Model};
use crate::seeding;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub n_images: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            n_images: 2000,
            epochs: 4,
            batch_size: 32,
            lr: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct VisionSample {
    pub image: Image,
    pub visibility: Visibility,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    pub l_o_before: f64,
    pub l_t_before: f64,
    pub l_o_after: f64,
    pub l_t_after: f64,
    /// Distinct object-visibility patterns among the training images (of 16).
    pub label_patterns: usize,
    pub optimizer_steps: usize,
}

fn silent_bank() -> Arc<Vec<Vec<Arc<SoundFeature>>>> {
    let f = Arc::new(SoundFeature::from_rows(&[], 1, 1));
    Arc::new(vec![vec![f]; 4])
}

/// Renders frames from episodes driven toward random objects or by random
/// walks, labelled with ground-truth visibility.
pub fn collect_vision_samples(arena: &ArenaConfig, n: usize, seed: u64) -> Result<Vec<VisionSample>, PpoError> {
    let mut env = TurtleBotEnv::new(arena.clone(), silent_bank())?;
    let mut out = Vec::with_capacity(n);
    let mut episode = 0u64;
    while out.len() < n {
        let ep_seed = seeding::derive(seed, &[0x7669, episode]);
        let mut rng = seeding::rng(ep_seed, &[1]);
        let scripted = episode % 2 == 0;
        let command = Some(rng.random_range(0..4));
        env.reset(ep_seed, command)?;
        let stride = 4;
        for t in 0..env.horizon() {
            let a = if scripted && rng.random::<f64>() < 0.8 {
                env.oracle_action()
            } else {
                random_walk_action(&mut rng)
            };
            let r = env.step(a)?;
            if t % stride == stride - 1 && out.len() < n {
                out.push(VisionSample {
                    image: r.observation.image,
                    visibility: env.visibility(),
                });
            }
        }
        episode += 1;
    }
    Ok(out)
}

/// Mean object and target losses; sample `i` is paired with concept `i mod 4`.
pub fn vision_losses(model: &Model<f32>, samples: &[VisionSample]) -> Result<(f64, f64), PpoError> {
    let mut lo = 0.0;
    let mut lt = 0.0;
    for (i, s) in samples.iter().enumerate() {
        let mut tape = Tape::new(&model.params);
        let (o, t) = sample_losses(&mut tape, model, s, i % 4)?;
        lo += tape.value(o).item() as f64;
        lt += tape.value(t).item() as f64;
    }
    let n = samples.len().max(1) as f64;
    Ok((lo / n, lt / n))
}

fn sample_losses(
    tape: &mut Tape<'_, f32>,
    model: &Model<f32>,
    s: &VisionSample,
    k: usize,
) -> Result<(crate::diff::Var, crate::diff::Var), PpoError> {
    let img = tape.input(model.image_tensor(&s.image.data)?);
    let flat = model.trunk(tape, img)?;
    let concept = tape.constant_vec(oracle_concept(k));
    let (_, obj, target) = model.l_branch(tape, flat, concept)?;
    let l_o = tape.sigmoid_bce(obj, &s.visibility.objects)?;
    let l_t = tape.sigmoid_bce(target, &[s.visibility.objects[k]])?;
    Ok((l_o, l_t))
}

/// Supervised training of the image trunk and concept-fusion branch on
/// visibility labels, with one-hot patterns in the concept slot.
pub fn pretrain_vision(
    model: &mut Model<f32>,
    samples: &[VisionSample],
    cfg: &PretrainConfig,
) -> Result<PretrainReport, PpoError> {
    if model.cfg.env_kind != EnvKind::TurtleBot {
        return Err(PpoError::PretrainKind);
    }
    let (l_o_before, l_t_before) = vision_losses(model, samples)?;
    let mut patterns = std::collections::BTreeSet::new();
    for s in samples {
        patterns.insert(s.visibility.objects);
    }
    let mut adam = AdamState::new(&model.params, cfg.lr);
    let mut rng = seeding::rng(cfg.seed, &[0x7074]);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut steps = 0;
    let batch = cfg.batch_size.max(1);
    for _ in 0..cfg.epochs {
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
        for chunk in order.chunks(batch) {
            let mut grads = Gradients::zeros_like(&model.params);
            let k_scale = 1.0 / chunk.len() as f32;
            for &i in chunk {
                let k = rng.random_range(0..4);
                let mut tape = Tape::new(&model.params);
                let (o, t) = sample_losses(&mut tape, model, &samples[i], k)?;
                let sum = tape.add(o, t)?;
                let l = tape.scale(sum, k_scale);
                tape.backward_into(l, &mut grads)?;
            }
            adam_step(&mut model.params, &grads, &mut adam)?;
            steps += 1;
        }
    }
    let (l_o_after, l_t_after) = vision_losses(model, samples)?;
    Ok(PretrainReport {
        l_o_before,
        l_t_before,
        l_o_after,
        l_t_after,
        label_patterns: patterns.len(),
        optimizer_steps: steps,
    })
}
