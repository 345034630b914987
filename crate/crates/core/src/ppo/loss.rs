use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ConceptSource, EpisodeRecord, PpoConfig, PpoError};
use crate::diff::{Gradients, Real, Tape, Tensor, Var};
use crate::model::{oracle_concept, Model};

/// Weights of the policy, sound, object and target terms in the total loss.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub pg: f64,
    pub s: f64,
    pub o: f64,
    pub t: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    /// Clipped surrogate + value loss + entropy bonus.
    pub l_pg: f64,
    pub l_s: f64,
    pub l_o: f64,
    pub l_t: f64,
    pub total: f64,
    /// Mean clipped surrogate (positive when the objective improves).
    pub surrogate: f64,
    pub value_loss: f64,
    pub entropy: f64,
}

impl LossBreakdown {
    pub fn add(&mut self, o: &LossBreakdown) {
        self.l_pg += o.l_pg;
        self.l_s += o.l_s;
        self.l_o += o.l_o;
        self.l_t += o.l_t;
        self.total += o.total;
        self.surrogate += o.surrogate;
        self.value_loss += o.value_loss;
        self.entropy += o.entropy;
    }

    pub fn scaled(&self, k: f64) -> LossBreakdown {
        LossBreakdown {
            l_pg: self.l_pg * k,
            l_s: self.l_s * k,
            l_o: self.l_o * k,
            l_t: self.l_t * k,
            total: self.total * k,
            surrogate: self.surrogate * k,
            value_loss: self.value_loss * k,
            entropy: self.entropy * k,
        }
    }

    pub fn all_finite(&self) -> bool {
        [
            self.l_pg,
            self.l_s,
            self.l_o,
            self.l_t,
            self.total,
            self.surrogate,
            self.value_loss,
            self.entropy,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

/// Records one episode's share of the minibatch objective on `tape`.
/// Step terms are divided by `n_steps` and the per-episode sound term by
/// `n_episodes`, so summing over a minibatch's episodes gives its means.
#[allow(clippy::too_many_arguments)]
pub fn episode_objective<F: Real>(
    tape: &mut Tape<'_, F>,
    model: &Model<F>,
    ep: &EpisodeRecord,
    cfg: &PpoConfig,
    source: ConceptSource,
    n_steps: usize,
    n_episodes: usize,
) -> Result<(Var, LossBreakdown), PpoError> {
    let w = cfg.weights;
    let (concept, l_s) = match source {
        ConceptSource::Learned => {
            let s = tape.input(model.sound_input(ep.sound.frames())?);
            let enc = model.encode(tape, s)?;
            let ce = tape.cross_entropy(enc.sound_logits, ep.target)?;
            (enc.concept, Some(ce))
        }
        ConceptSource::Oracle => (tape.constant_vec(oracle_concept(ep.target)), None),
    };
    let units = model.cfg.integrator_units;
    let mut h = tape.input(Tensor::zeros(&[units]));
    let mut c = tape.input(Tensor::zeros(&[units]));
    let eps = F::lit(cfg.clip_epsilon);
    let half_ln_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
    let mut pg_terms = Vec::with_capacity(ep.len());
    let mut o_terms = Vec::with_capacity(ep.len());
    let mut t_terms = Vec::with_capacity(ep.len());
    let mut parts = LossBreakdown::default();
    for t in 0..ep.len() {
        let img = tape.input(model.image_tensor(&ep.images[t].data)?);
        let st = tape.input(model.state_tensor(ep.states[t]));
        let iv = model.integrate(tape, img, st, concept, h, c)?;
        h = iv.h;
        c = iv.c;
        let pv = model.policy_value(tape, iv.features)?;

        let a = tape.constant_vec(ep.actions[t].iter().map(|&v| F::lit(v as f64)).collect());
        let diff = tape.sub(a, pv.mean)?;
        let neg_ls = tape.scale(pv.log_std, -F::one());
        let inv_std = tape.exp(neg_ls);
        let z = tape.mul(diff, inv_std)?;
        let z2 = tape.square(z);
        let quad = tape.scale(z2, F::lit(-0.5));
        let per_dim = tape.sub(quad, pv.log_std)?;
        let summed = tape.sum(per_dim);
        let logp = tape.add_scalar(summed, F::lit(-2.0 * half_ln_2pi));
        let log_ratio = tape.add_scalar(logp, F::lit(-(ep.log_probs[t] as f64)));
        let ratio = tape.exp(log_ratio);
        let adv = F::lit(ep.advantages[t]);
        let unclipped = tape.scale(ratio, adv);
        let clipped_ratio = tape.clamp(ratio, F::one() - eps, F::one() + eps);
        let clipped = tape.scale(clipped_ratio, adv);
        let surr = tape.min(unclipped, clipped)?;

        let v_err = tape.add_scalar(pv.value, F::lit(-ep.returns[t]));
        let v_loss = tape.square(v_err);
        let ls_sum = tape.sum(pv.log_std);
        let entropy = tape.add_scalar(ls_sum, F::lit(2.0 * (0.5 + half_ln_2pi)));

        let a1 = tape.scale(surr, -F::one());
        let a2 = tape.scale(v_loss, F::lit(cfg.value_coef));
        let a3 = tape.scale(entropy, F::lit(-cfg.entropy_coef));
        let step = tape.sum_all(&[a1, a2, a3])?;
        pg_terms.push(step);

        let vis = &ep.visibility[t];
        o_terms.push(tape.sigmoid_bce(iv.obj_logits, &vis.objects)?);
        t_terms.push(tape.sigmoid_bce(iv.target_logit, &[vis.target])?);

        parts.surrogate += tape.value(surr).item().as_f64();
        parts.value_loss += tape.value(v_loss).item().as_f64();
        parts.entropy += tape.value(entropy).item().as_f64();
    }
    let inv_steps = 1.0 / n_steps as f64;
    let inv_eps = 1.0 / n_episodes as f64;
    let pg_sum = tape.sum_all(&pg_terms)?;
    let o_sum = tape.sum_all(&o_terms)?;
    let t_sum = tape.sum_all(&t_terms)?;
    let l_pg = tape.scale(pg_sum, F::lit(inv_steps));
    let l_o = tape.scale(o_sum, F::lit(inv_steps));
    let l_t = tape.scale(t_sum, F::lit(inv_steps));
    let mut total_terms = vec![
        tape.scale(l_pg, F::lit(w.pg)),
        tape.scale(l_o, F::lit(w.o)),
        tape.scale(l_t, F::lit(w.t)),
    ];
    parts.l_pg = tape.value(l_pg).item().as_f64();
    parts.l_o = tape.value(l_o).item().as_f64();
    parts.l_t = tape.value(l_t).item().as_f64();
    if let Some(ce) = l_s {
        let l_s = tape.scale(ce, F::lit(inv_eps));
        parts.l_s = tape.value(l_s).item().as_f64();
        total_terms.push(tape.scale(l_s, F::lit(w.s)));
    }
    let total = tape.sum_all(&total_terms)?;
    parts.total = tape.value(total).item().as_f64();
    parts.surrogate *= inv_steps;
    parts.value_loss *= inv_steps;
    parts.entropy *= inv_steps;
    Ok((total, parts))
}

/// Gradient and loss parts of one episode's share of the objective.
pub fn episode_loss<F: Real>(
    model: &Model<F>,
    ep: &EpisodeRecord,
    cfg: &PpoConfig,
    source: ConceptSource,
    n_steps: usize,
    n_episodes: usize,
) -> Result<(Gradients<F>, LossBreakdown), PpoError> {
    let mut tape = Tape::new(&model.params);
    let (total, parts) = episode_objective(&mut tape, model, ep, cfg, source, n_steps, n_episodes)?;
    if !parts.all_finite() {
        return Err(PpoError::NonFiniteLoss {
            update: 0,
            detail: format!("{parts:?}"),
        });
    }
    Ok((tape.backward(total)?, parts))
}

/// Minibatch objective over whole episodes. Per-episode gradients are
/// summed in episode order regardless of `parallel`.
pub fn ppo_losses<F: Real>(
    model: &Model<F>,
    episodes: &[&EpisodeRecord],
    cfg: &PpoConfig,
    source: ConceptSource,
    parallel: bool,
) -> Result<(Gradients<F>, LossBreakdown), PpoError> {
    let n_steps: usize = episodes.iter().map(|e| e.len()).sum();
    let n_eps = episodes.len();
    if n_steps == 0 {
        return Err(PpoError::Length("empty minibatch".into()));
    }
    let work = |ep: &&EpisodeRecord| episode_loss(model, ep, cfg, source, n_steps, n_eps);
    let parts: Vec<_> = if parallel {
        episodes.par_iter().map(work).collect()
    } else {
        episodes.iter().map(work).collect()
    };
    let mut grads = Gradients::zeros_like(&model.params);
    let mut total = LossBreakdown::default();
    for p in parts {
        let (g, l) = p?;
        grads.add(&g);
        total.add(&l);
    }
    Ok((grads, total))
}
