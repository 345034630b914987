use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::PpoError;
use crate::audio::SoundDataset;
use crate::diff::{adam_step, AdamState, Gradients, Tape};
use crate::model::Model;
use crate::seeding;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for EncoderTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 3,
            batch_size: 32,
            lr: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderTrainReport {
    pub initial_accuracy: f64,
    /// Mean training cross-entropy per epoch.
    pub train_loss: Vec<f64>,
    /// Held-out accuracy after each epoch.
    pub test_accuracy: Vec<f64>,
    pub optimizer_steps: usize,
}

/// Fraction of items whose largest sound logit is the true label.
pub fn encoder_accuracy(model: &Model<f32>, ds: &SoundDataset) -> Result<f64, PpoError> {
    let mut hits = 0usize;
    for (f, label) in &ds.items {
        let out = model.encode_sound(f.frames())?;
        let best = out
            .sound_logits
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i);
        hits += usize::from(best == Some(*label));
    }
    Ok(hits as f64 / ds.len().max(1) as f64)
}

/// Supervised training of the sound encoder with the sound-class loss alone.
pub fn train_sound_encoder(
    model: &mut Model<f32>,
    train: &SoundDataset,
    test: &SoundDataset,
    cfg: &EncoderTrainConfig,
) -> Result<EncoderTrainReport, PpoError> {
    if train.is_empty() {
        return Err(PpoError::Config("empty training set".into()));
    }
    let initial_accuracy = encoder_accuracy(model, test)?;
    let mut adam = AdamState::new(&model.params, cfg.lr);
    let mut rng = seeding::rng(cfg.seed, &[0x656e]);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let batch = cfg.batch_size.max(1);
    let mut report = EncoderTrainReport {
        initial_accuracy,
        train_loss: Vec::new(),
        test_accuracy: Vec::new(),
        optimizer_steps: 0,
    };
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(batch) {
            let mut grads = Gradients::zeros_like(&model.params);
            let k = 1.0 / chunk.len() as f32;
            for &i in chunk {
                let (f, label) = &train.items[i];
                let mut tape = Tape::new(&model.params);
                let s = tape.input(model.sound_input(f.frames())?);
                let enc = model.encode(&mut tape, s)?;
                let ce = tape.cross_entropy(enc.sound_logits, *label)?;
                let v = tape.value(ce).item() as f64;
                if !v.is_finite() {
                    return Err(PpoError::NonFiniteLoss {
                        update: report.optimizer_steps as u64,
                        detail: "sound-class cross-entropy".into(),
                    });
                }
                loss_sum += v;
                let l = tape.scale(ce, k);
                tape.backward_into(l, &mut grads)?;
            }
            adam_step(&mut model.params, &grads, &mut adam)?;
            report.optimizer_steps += 1;
        }
        report.train_loss.push(loss_sum / train.len() as f64);
        report.test_accuracy.push(encoder_accuracy(model, test)?);
    }
    Ok(report)
}
