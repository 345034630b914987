use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::config::{NetConfig, ACTION_DIM, CONCEPT_DIM, N_CLASSES, STATE_DIM};
use super::ModelError;
use crate::diff::{
    bilstm, lstm_cell, Activation, LstmWeights, ParamId, ParamStore, Real, Tape, Tensor, Var,
};
use crate::seeding;

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;

#[derive(Clone, Copy, Debug)]
struct DenseIds {
    w: ParamId,
    b: ParamId,
}

#[derive(Clone, Copy, Debug)]
struct LstmIds {
    w_ih: ParamId,
    w_hh: ParamId,
    b: ParamId,
}

#[derive(Clone, Debug)]
struct HeadIds {
    f: DenseIds,
    v: ParamId,
}

#[derive(Clone, Debug)]
struct Layout {
    fwd: LstmIds,
    bwd: LstmIds,
    heads: Vec<HeadIds>,
    g: DenseIds,
    sound_head: DenseIds,
    convs: Vec<DenseIds>,
    u_dense: DenseIds,
    state_embed: DenseIds,
    lstm: LstmIds,
    l_vision: DenseIds,
    l_concept: DenseIds,
    obj_head: DenseIds,
    target_head: DenseIds,
    mean: DenseIds,
    log_std: ParamId,
    value: DenseIds,
}

/// Network parameters plus the layout that maps roles to parameter ids.
#[derive(Clone, Debug)]
pub struct Model<F: Real> {
    pub cfg: NetConfig,
    pub params: ParamStore<F>,
    ids: Layout,
}

/// Tape handles produced by the sound encoder.
pub struct EncoderVars {
    pub concept: Var,
    pub pre_concept: Var,
    pub sound_logits: Var,
    /// One `[N]` weight vector per head; empty when attention is off.
    pub attn_weights: Vec<Var>,
    /// One `[2 d_S]` context per head (or `h_N` when attention is off).
    pub context: Vec<Var>,
}

pub struct IntegratorVars {
    pub features: Var,
    pub h: Var,
    pub c: Var,
    pub obj_logits: Var,
    pub target_logit: Var,
}

pub struct PolicyVars {
    pub mean: Var,
    /// Clamped log standard deviation.
    pub log_std: Var,
    pub value: Var,
}

struct Init<'a> {
    store: ParamStore<f64>,
    rng: &'a mut ChaCha8Rng,
}

impl Init<'_> {
    fn uniform(&mut self, name: &str, shape: &[usize], bound: f64) -> Result<ParamId, ModelError> {
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| self.rng.random_range(-bound..=bound))
            .collect();
        Ok(self.store.register(name, Tensor::new(shape, data)?)?)
    }

    fn constant(&mut self, name: &str, shape: &[usize], v: f64) -> Result<ParamId, ModelError> {
        Ok(self.store.register(name, Tensor::filled(shape, v))?)
    }

    /// Fan-in scaled uniform weights; `gain` shrinks output heads.
    fn dense(&mut self, name: &str, out: usize, inp: usize, gain: f64) -> Result<DenseIds, ModelError> {
        let bound = gain / (inp as f64).sqrt();
        Ok(DenseIds {
            w: self.uniform(&format!("{name}.w"), &[out, inp], bound)?,
            b: self.constant(&format!("{name}.b"), &[out], 0.0)?,
        })
    }

    fn conv(&mut self, name: &str, out: usize, inp: usize) -> Result<DenseIds, ModelError> {
        let bound = 1.0 / ((inp * 9) as f64).sqrt();
        Ok(DenseIds {
            w: self.uniform(&format!("{name}.w"), &[out, inp, 3, 3], bound)?,
            b: self.constant(&format!("{name}.b"), &[out], 0.0)?,
        })
    }

    fn lstm(&mut self, name: &str, inp: usize, hid: usize) -> Result<LstmIds, ModelError> {
        let bound = 1.0 / (hid as f64).sqrt();
        let w_ih = self.uniform(&format!("{name}.w_ih"), &[4 * hid, inp], bound)?;
        let w_hh = self.uniform(&format!("{name}.w_hh"), &[4 * hid, hid], bound)?;
        let mut bias = vec![0.0; 4 * hid];
        bias[hid..2 * hid].iter_mut().for_each(|v| *v = 1.0);
        let b = self
            .store
            .register(&format!("{name}.b"), Tensor::vector(bias))?;
        Ok(LstmIds { w_ih, w_hh, b })
    }
}

impl<F: Real> Model<F> {
    /// Builds and initializes every parameter. Initial values are drawn in
    /// double precision so f32 and f64 models from the same seed agree.
    pub fn new(cfg: NetConfig, seed: u64) -> Result<Self, ModelError> {
        cfg.validate()?;
        let mut rng = seeding::rng(seed, &[0x6d6f_6465_6c]);
        let mut init = Init {
            store: ParamStore::new(),
            rng: &mut rng,
        };
        let d = cfg.d_s;
        let fwd = init.lstm("encoder.bilstm_fwd", cfg.sound_coeffs, d)?;
        let bwd = init.lstm("encoder.bilstm_bwd", cfg.sound_coeffs, d)?;
        let mut heads = Vec::new();
        let context_width = if cfg.attention {
            for k in 0..cfg.attention_heads {
                let f = init.dense(&format!("encoder.attn{k}.score"), cfg.attention_hidden, 4 * d, 1.0)?;
                let v = init.uniform(
                    &format!("encoder.attn{k}.v"),
                    &[cfg.attention_hidden],
                    1.0 / (cfg.attention_hidden as f64).sqrt(),
                )?;
                heads.push(HeadIds { f, v });
            }
            cfg.attention_heads * 2 * d
        } else {
            2 * d
        };
        let g = init.dense("encoder.g", CONCEPT_DIM, context_width, 1.0)?;
        let sound_head = init.dense("encoder.sound_head", N_CLASSES, CONCEPT_DIM, 1.0)?;

        let shapes = cfg.trunk_shapes();
        let mut convs = Vec::new();
        for (i, s) in cfg.cnn.iter().enumerate() {
            convs.push(init.conv(&format!("integrator.conv{i}"), s.channels, shapes[i].0)?);
        }
        let trunk = cfg.trunk_width();
        let u_dense = init.dense("integrator.u_dense", cfg.fuse_width, trunk, 1.0)?;
        let state_embed = init.dense("integrator.state_embed", cfg.state_embed, STATE_DIM, 1.0)?;
        let lstm = init.lstm(
            "integrator.lstm",
            cfg.fuse_width + cfg.state_embed,
            cfg.integrator_units,
        )?;
        let l_vision = init.dense("integrator.l_vision", cfg.fuse_width, trunk, 1.0)?;
        let l_concept = init.dense("integrator.l_concept", cfg.fuse_width, CONCEPT_DIM, 1.0)?;
        let obj_head = init.dense("integrator.obj_head", N_CLASSES, cfg.fuse_width, 1.0)?;
        let target_head = init.dense("integrator.target_head", 1, cfg.fuse_width, 1.0)?;
        let fw = cfg.feature_width();
        let mean = init.dense("policy.mean", ACTION_DIM, fw, 0.01)?;
        let log_std = init.constant("policy.log_std", &[ACTION_DIM], 0.0)?;
        let value = init.dense("policy.value", 1, fw, 1.0)?;
        let params = init.store.cast();
        Ok(Self {
            cfg,
            params,
            ids: Layout {
                fwd,
                bwd,
                heads,
                g,
                sound_head,
                convs,
                u_dense,
                state_embed,
                lstm,
                l_vision,
                l_concept,
                obj_head,
                target_head,
                mean,
                log_std,
                value,
            },
        })
    }

    /// Same architecture and layout over a different parameter store (e.g. cast precision).
    pub fn with_params<G: Real>(&self, params: ParamStore<G>) -> Model<G> {
        Model {
            cfg: self.cfg.clone(),
            params,
            ids: self.ids.clone(),
        }
    }

    pub fn cast<G: Real>(&self) -> Model<G> {
        self.with_params(self.params.cast())
    }

    /// Names of parameters owned by the vision/integrator path.
    pub fn is_vision_param(name: &str) -> bool {
        name.starts_with("integrator.")
    }

    fn lstm_vars(tape: &mut Tape<'_, F>, ids: LstmIds) -> LstmWeights {
        LstmWeights {
            w_ih: tape.param(ids.w_ih),
            w_hh: tape.param(ids.w_hh),
            b: tape.param(ids.b),
        }
    }

    fn dense(
        tape: &mut Tape<'_, F>,
        x: Var,
        ids: DenseIds,
        act: Activation,
    ) -> Result<Var, ModelError> {
        let w = tape.param(ids.w);
        let b = tape.param(ids.b);
        Ok(tape.dense(x, w, Some(b), act)?)
    }

    /// Sound input tensor `[N, m]` with the encoder's input scaling applied.
    pub fn sound_input(&self, frames: &[f32]) -> Result<Tensor<F>, ModelError> {
        let (n, m) = (self.cfg.sound_frames, self.cfg.sound_coeffs);
        if frames.len() != n * m {
            return Err(ModelError::Shape(format!(
                "sound feature has {} values, expected {n}x{m}",
                frames.len()
            )));
        }
        if frames.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite("sound feature"));
        }
        let k = self.cfg.sound_scale;
        Ok(Tensor::new(
            &[n, m],
            frames.iter().map(|&v| F::lit(v as f64 * k)).collect(),
        )?)
    }

    /// BiLSTM, multi-head attention and the concept projection.
    pub fn encode(&self, tape: &mut Tape<'_, F>, s: Var) -> Result<EncoderVars, ModelError> {
        if tape.shape(s) != [self.cfg.sound_frames, self.cfg.sound_coeffs] {
            return Err(ModelError::Shape(format!(
                "sound input {:?}, expected [{}, {}]",
                tape.shape(s),
                self.cfg.sound_frames,
                self.cfg.sound_coeffs
            )));
        }
        if !tape.value(s).all_finite() {
            return Err(ModelError::NonFinite("sound feature"));
        }
        let fwd = Self::lstm_vars(tape, self.ids.fwd);
        let bwd = Self::lstm_vars(tape, self.ids.bwd);
        let out = bilstm(tape, s, &fwd, &bwd)?;
        let h_n = tape.concat(&[out.forward_final, out.backward_final])?;
        let mut attn_weights = Vec::new();
        let mut context = Vec::new();
        if self.cfg.attention {
            let h_a = tape.concat_row_broadcast(out.outputs, h_n)?;
            for head in &self.ids.heads {
                let f = Self::dense(tape, h_a, head.f, Activation::Tanh)?;
                let v = tape.param(head.v);
                let e = tape.matvec(f, v)?;
                let alpha = tape.softmax(e)?;
                context.push(tape.weighted_rows(out.outputs, alpha)?);
                attn_weights.push(alpha);
            }
        } else {
            context.push(h_n);
        }
        let joined = tape.concat(&context)?;
        let pre_concept = Self::dense(tape, joined, self.ids.g, Activation::Identity)?;
        let concept = tape.tanh(pre_concept);
        let sound_logits = Self::dense(tape, pre_concept, self.ids.sound_head, Activation::Identity)?;
        Ok(EncoderVars {
            concept,
            pre_concept,
            sound_logits,
            attn_weights,
            context,
        })
    }

    /// One integrator step: image trunk, branch U (state merge + LSTM) and
    /// branch L (concept fusion + visibility heads).
    pub fn integrate(
        &self,
        tape: &mut Tape<'_, F>,
        image: Var,
        state: Var,
        concept: Var,
        h: Var,
        c: Var,
    ) -> Result<IntegratorVars, ModelError> {
        let (ci, hi, wi) = self.cfg.image;
        if tape.shape(image) != [ci, hi, wi] {
            return Err(ModelError::Shape(format!(
                "image {:?}, expected [{ci}, {hi}, {wi}]",
                tape.shape(image)
            )));
        }
        if tape.value(state).len() != STATE_DIM || tape.value(concept).len() != CONCEPT_DIM {
            return Err(ModelError::Shape("robot state or concept width".into()));
        }
        let units = self.cfg.integrator_units;
        if tape.value(h).len() != units || tape.value(c).len() != units {
            return Err(ModelError::Shape(format!(
                "integrator state width {} / {}, expected {units}",
                tape.value(h).len(),
                tape.value(c).len()
            )));
        }
        let flat = self.trunk(tape, image)?;
        let u = Self::dense(tape, flat, self.ids.u_dense, Activation::Relu)?;
        let m = Self::dense(tape, state, self.ids.state_embed, Activation::Relu)?;
        let um = tape.concat(&[u, m])?;
        let lstm = Self::lstm_vars(tape, self.ids.lstm);
        let (h2, c2) = lstm_cell(tape, &lstm, um, h, c)?;
        let (fused, obj_logits, target_logit) = self.l_branch(tape, flat, concept)?;
        let features = tape.concat(&[h2, fused])?;
        Ok(IntegratorVars {
            features,
            h: h2,
            c: c2,
            obj_logits,
            target_logit,
        })
    }

    /// Convolution stages followed by flattening.
    pub fn trunk(&self, tape: &mut Tape<'_, F>, image: Var) -> Result<Var, ModelError> {
        let mut x = image;
        for (stage, ids) in self.cfg.cnn.iter().zip(&self.ids.convs) {
            let w = tape.param(ids.w);
            let b = tape.param(ids.b);
            x = tape.conv2d(x, w, Some(b), stage.stride, 1, Activation::Relu)?;
        }
        Ok(tape.reshape(x, &[self.cfg.trunk_width()])?)
    }

    /// Concept fusion and the visibility heads: `(fused, obj_logits, target_logit)`.
    pub fn l_branch(
        &self,
        tape: &mut Tape<'_, F>,
        flat: Var,
        concept: Var,
    ) -> Result<(Var, Var, Var), ModelError> {
        let lv = Self::dense(tape, flat, self.ids.l_vision, Activation::Identity)?;
        let lc = Self::dense(tape, concept, self.ids.l_concept, Activation::Identity)?;
        let sum = tape.add(lv, lc)?;
        let fused = tape.relu(sum);
        let obj_logits = Self::dense(tape, fused, self.ids.obj_head, Activation::Identity)?;
        let target_logit = Self::dense(tape, fused, self.ids.target_head, Activation::Identity)?;
        Ok((fused, obj_logits, target_logit))
    }

    pub fn policy_value(&self, tape: &mut Tape<'_, F>, features: Var) -> Result<PolicyVars, ModelError> {
        if tape.value(features).len() != self.cfg.feature_width() {
            return Err(ModelError::Shape(format!(
                "features width {}, expected {}",
                tape.value(features).len(),
                self.cfg.feature_width()
            )));
        }
        let mean = Self::dense(tape, features, self.ids.mean, Activation::Identity)?;
        let raw = tape.param(self.ids.log_std);
        let log_std = tape.clamp(raw, F::lit(LOG_STD_MIN), F::lit(LOG_STD_MAX));
        let value = Self::dense(tape, features, self.ids.value, Activation::Identity)?;
        Ok(PolicyVars {
            mean,
            log_std,
            value,
        })
    }
}
