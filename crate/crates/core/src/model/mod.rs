//! Sound encoder, visual-motor integrator and policy/value heads.

mod config;
mod net;

use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

pub use config::{
    ConvStage, EnvKind, NetConfig, ACTION_DIM, CONCEPT_DIM, N_CLASSES, STATE_DIM,
};
pub use net::{EncoderVars, IntegratorVars, Model, PolicyVars, LOG_STD_MAX, LOG_STD_MIN};

use crate::diff::{DiffError, Real, Tape, Tensor};

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("invalid network config: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error("no cached concept at step {0}")]
    MissingConcept(usize),
    #[error(transparent)]
    Diff(#[from] DiffError),
}

/// Concrete encoder result.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderOutput<F> {
    pub concept: Vec<F>,
    pub sound_logits: Vec<F>,
    /// `heads x N`, row-major.
    pub attn_weights: Vec<Vec<F>>,
    pub context: Vec<Vec<F>>,
}

/// Recurrent memory of the integrator; zero at episode start.
#[derive(Clone, Debug, PartialEq)]
pub struct IntegratorState<F> {
    pub h: Vec<F>,
    pub c: Vec<F>,
}

impl<F: Real> IntegratorState<F> {
    pub fn zeros(units: usize) -> Self {
        Self {
            h: vec![F::zero(); units],
            c: vec![F::zero(); units],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyOutput<F> {
    pub mean: Vec<F>,
    pub log_std: Vec<F>,
    pub value: F,
    pub obj_logits: Vec<F>,
    pub target_logit: F,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActMode {
    Stochastic,
    Deterministic,
}

/// Borrowed per-step inputs.
#[derive(Clone, Copy, Debug)]
pub struct ObsView<'a> {
    /// Row-major MFCC matrix; only read when a concept must be encoded.
    pub sound: &'a [f32],
    /// Channel-major image bytes.
    pub image: &'a [u8],
    pub state: [f64; 2],
}

/// Per-episode agent memory: the cached concept and the integrator state.
#[derive(Clone, Debug)]
pub struct EpisodeMemory<F> {
    pub concept: Option<Vec<F>>,
    pub state: IntegratorState<F>,
    pub t: usize,
    /// Number of times the encoder ran for this episode.
    pub encodings: usize,
}

impl<F: Real> EpisodeMemory<F> {
    pub fn new(units: usize) -> Self {
        Self {
            concept: None,
            state: IntegratorState::zeros(units),
            t: 0,
            encodings: 0,
        }
    }

    /// Memory whose concept slot is fixed in advance (oracle variant).
    pub fn with_concept(units: usize, concept: Vec<F>) -> Self {
        Self {
            concept: Some(concept),
            ..Self::new(units)
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActOutput<F> {
    /// Clipped action sent to the environment.
    pub action: [f64; 2],
    /// Pre-clip sample (equal to the mean in deterministic mode).
    pub raw_action: [F; 2],
    pub log_prob: F,
    pub value: F,
    pub policy: PolicyOutput<F>,
}

/// One of four fixed orthogonal 64-dim patterns standing in for the concept:
/// ones on the `k`-th block of 16 components, zeros elsewhere.
pub fn oracle_concept<F: Real>(k: usize) -> Vec<F> {
    assert!(k < N_CLASSES, "oracle concept index {k}");
    let block = CONCEPT_DIM / N_CLASSES;
    (0..CONCEPT_DIM)
        .map(|i| if i / block == k { F::one() } else { F::zero() })
        .collect()
}

/// Diagonal Gaussian log-density.
pub fn gaussian_log_prob<F: Real>(x: &[F], mean: &[F], log_std: &[F]) -> F {
    let half_ln_2pi = F::lit(0.5 * (2.0 * std::f64::consts::PI).ln());
    x.iter()
        .zip(mean)
        .zip(log_std)
        .map(|((&x, &m), &ls)| {
            let z = (x - m) * (-ls).exp();
            F::lit(-0.5) * z * z - ls - half_ln_2pi
        })
        .sum()
}

impl<F: Real> Model<F> {
    pub fn image_tensor(&self, bytes: &[u8]) -> Result<Tensor<F>, ModelError> {
        let (c, h, w) = self.cfg.image;
        if bytes.len() != c * h * w {
            return Err(ModelError::Shape(format!(
                "image has {} bytes, expected {c}x{h}x{w}",
                bytes.len()
            )));
        }
        let k = F::lit(1.0 / 255.0);
        Ok(Tensor::new(
            &[c, h, w],
            bytes.iter().map(|&b| F::lit(b as f64) * k).collect(),
        )?)
    }

    pub fn state_tensor(&self, m: [f64; 2]) -> Tensor<F> {
        let (a, b) = self.cfg.state_scale;
        Tensor::vector(vec![F::lit(m[0] * a), F::lit(m[1] * b)])
    }

    pub fn encode_sound(&self, frames: &[f32]) -> Result<EncoderOutput<F>, ModelError> {
        let mut tape = Tape::new(&self.params);
        let s = tape.input(self.sound_input(frames)?);
        let e = self.encode(&mut tape, s)?;
        let read = |tape: &Tape<'_, F>, v| tape.value(v).data().to_vec();
        Ok(EncoderOutput {
            concept: read(&tape, e.concept),
            sound_logits: read(&tape, e.sound_logits),
            attn_weights: e.attn_weights.iter().map(|&a| read(&tape, a)).collect(),
            context: e.context.iter().map(|&c| read(&tape, c)).collect(),
        })
    }

    /// Integrator and heads for one step without recording gradients.
    pub fn forward_step(
        &self,
        image: &[u8],
        m: [f64; 2],
        concept: &[F],
        state: &IntegratorState<F>,
    ) -> Result<(PolicyOutput<F>, IntegratorState<F>), ModelError> {
        let mut tape = Tape::new(&self.params);
        let img = tape.input(self.image_tensor(image)?);
        let st = tape.input(self.state_tensor(m));
        let cv = tape.constant_vec(concept.to_vec());
        let h = tape.constant_vec(state.h.clone());
        let c = tape.constant_vec(state.c.clone());
        let iv = self.integrate(&mut tape, img, st, cv, h, c)?;
        let pv = self.policy_value(&mut tape, iv.features)?;
        let read = |v| tape.value(v).data().to_vec();
        let out = PolicyOutput {
            mean: read(pv.mean),
            log_std: read(pv.log_std),
            value: tape.value(pv.value).data()[0],
            obj_logits: read(iv.obj_logits),
            target_logit: tape.value(iv.target_logit).data()[0],
        };
        if !out.value.is_finite() || out.mean.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite("policy output"));
        }
        Ok((
            out,
            IntegratorState {
                h: read(iv.h),
                c: read(iv.c),
            },
        ))
    }

    /// Chooses an action. The concept is encoded from `obs.sound` only when
    /// the memory holds none and `t == 0`; later steps reuse the cache.
    pub fn act<R: Rng>(
        &self,
        obs: &ObsView<'_>,
        mem: &mut EpisodeMemory<F>,
        mode: ActMode,
        rng: &mut R,
    ) -> Result<ActOutput<F>, ModelError> {
        if mem.concept.is_none() {
            if mem.t > 0 {
                return Err(ModelError::MissingConcept(mem.t));
            }
            mem.concept = Some(self.encode_sound(obs.sound)?.concept);
            mem.encodings += 1;
        }
        let concept = mem.concept.as_deref().expect("set above");
        let (policy, next) = self.forward_step(obs.image, obs.state, concept, &mem.state)?;
        mem.state = next;
        mem.t += 1;
        let raw: [F; 2] = match mode {
            ActMode::Deterministic => [policy.mean[0], policy.mean[1]],
            ActMode::Stochastic => {
                let mut a = [F::zero(); 2];
                for (i, slot) in a.iter_mut().enumerate() {
                    let z: f64 = rng.sample(StandardNormal);
                    *slot = policy.mean[i] + policy.log_std[i].exp() * F::lit(z);
                }
                a
            }
        };
        let log_prob = gaussian_log_prob(&raw, &policy.mean, &policy.log_std);
        let action = [
            raw[0].as_f64().clamp(-1.0, 1.0),
            raw[1].as_f64().clamp(-1.0, 1.0),
        ];
        Ok(ActOutput {
            action,
            raw_action: raw,
            log_prob,
            value: policy.value,
            policy,
        })
    }
}
