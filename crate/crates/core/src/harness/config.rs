use std::fmt::Write;
use std::path::PathBuf;

use super::HarnessError;
use crate::model::{ConvStage, EnvKind, NetConfig};
use crate::ppo::{PpoConfig, PretrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Profile {
    Paper,
    Desk,
}

impl Profile {
    fn name(self) -> &'static str {
        match self {
            Profile::Paper => "paper",
            Profile::Desk => "desk",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum SoundSource {
    /// In-memory synthetic notes C4, D4, E4, F4.
    Synthetic,
    /// `<dir>/<label>/*.wav` with labels bound to targets in order.
    WavDir { dir: PathBuf, labels: Vec<String> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Ablation {
    pub attention: bool,
    pub use_l_s: bool,
    pub use_l_o: bool,
    pub use_l_t: bool,
    pub oracle_concept: bool,
}

/// Every setting of a run. Rendered with [`RunConfig::resolved`] and parsed
/// back with [`RunConfig::parse`].
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub env: EnvKind,
    pub profile: Profile,
    pub seed: u64,
    pub total_timesteps: u64,
    pub checkpoint_every: u64,
    pub net: NetConfig,
    pub ppo: PpoConfig,
    pub ablation: Ablation,
    pub sound: SoundSource,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub synth_duration_s: f64,
    pub color_randomization: bool,
    pub pretrain: bool,
    pub pretrain_cfg: PretrainConfig,
}

fn budget(env: EnvKind, profile: Profile) -> u64 {
    match (env, profile) {
        (EnvKind::TurtleBot, Profile::Paper) => 1_500_000,
        (EnvKind::Kuka, Profile::Paper) => 5_000_000,
        (_, Profile::Desk) => 200_000,
    }
}

impl RunConfig {
    pub fn new(env: EnvKind, profile: Profile) -> Self {
        let (net, ppo, train, test) = match profile {
            Profile::Paper => (NetConfig::paper(env), PpoConfig::paper(env), 1000, 50),
            Profile::Desk => (NetConfig::desk(env), PpoConfig::desk(env), 200, 50),
        };
        Self {
            env,
            profile,
            seed: 0,
            total_timesteps: budget(env, profile),
            checkpoint_every: 25,
            net,
            ppo,
            ablation: Ablation {
                attention: true,
                use_l_s: true,
                use_l_o: true,
                use_l_t: true,
                oracle_concept: false,
            },
            sound: SoundSource::Synthetic,
            train_per_class: train,
            test_per_class: test,
            synth_duration_s: 1.0,
            color_randomization: true,
            pretrain: env == EnvKind::TurtleBot,
            pretrain_cfg: PretrainConfig::default(),
        }
    }

    /// Parses `key = value` lines. `env` and `profile` pick the defaults
    /// that the remaining keys override, wherever they appear in the file.
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let mut pairs = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                HarnessError::Config(format!("line {}: expected key = value", n + 1))
            })?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        let find = |key: &str| pairs.iter().rev().find(|(k, _)| k == key).map(|(_, v)| v.as_str());
        let env = match find("env") {
            Some(v) => EnvKind::parse(v).ok_or_else(|| bad_value("env", v))?,
            None => EnvKind::TurtleBot,
        };
        let profile = match find("profile") {
            None | Some("desk") => Profile::Desk,
            Some("paper") => Profile::Paper,
            Some(v) => return Err(bad_value("profile", v)),
        };
        let mut cfg = RunConfig::new(env, profile);
        for (k, v) in &pairs {
            if k != "env" && k != "profile" {
                cfg.set(k, v)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies one override.
    pub fn set(&mut self, key: &str, v: &str) -> Result<(), HarnessError> {
        let n = &mut self.net;
        let p = &mut self.ppo;
        match key {
            "seed" => self.seed = num(key, v)?,
            "total_timesteps" => self.total_timesteps = num(key, v)?,
            "checkpoint_every" => self.checkpoint_every = num(key, v)?,
            "sound_source" => match v {
                "synthetic" => self.sound = SoundSource::Synthetic,
                "wav" => {
                    if !matches!(self.sound, SoundSource::WavDir { .. }) {
                        self.sound = SoundSource::WavDir {
                            dir: PathBuf::new(),
                            labels: Vec::new(),
                        }
                    }
                }
                _ => return Err(bad_value(key, v)),
            },
            "sound_dir" | "wordset" => {
                let (mut dir, mut labels) = match &self.sound {
                    SoundSource::WavDir { dir, labels } => (dir.clone(), labels.clone()),
                    SoundSource::Synthetic => (PathBuf::new(), Vec::new()),
                };
                if key == "sound_dir" {
                    dir = PathBuf::from(v);
                } else {
                    labels = v.split(',').map(|s| s.trim().to_string()).collect();
                }
                self.sound = SoundSource::WavDir { dir, labels };
            }
            "train_per_class" => self.train_per_class = num(key, v)?,
            "test_per_class" => self.test_per_class = num(key, v)?,
            "synth_duration_s" => self.synth_duration_s = num(key, v)?,
            "color_randomization" => self.color_randomization = flag(key, v)?,
            "attention" => self.ablation.attention = flag(key, v)?,
            "use_l_s" => self.ablation.use_l_s = flag(key, v)?,
            "use_l_o" => self.ablation.use_l_o = flag(key, v)?,
            "use_l_t" => self.ablation.use_l_t = flag(key, v)?,
            "oracle_concept" => self.ablation.oracle_concept = flag(key, v)?,
            "pretrain" => self.pretrain = flag(key, v)?,
            "pretrain.n_images" => self.pretrain_cfg.n_images = num(key, v)?,
            "pretrain.epochs" => self.pretrain_cfg.epochs = num(key, v)?,
            "pretrain.batch_size" => self.pretrain_cfg.batch_size = num(key, v)?,
            "pretrain.lr" => self.pretrain_cfg.lr = num(key, v)?,
            "net.d_s" => n.d_s = num(key, v)?,
            "net.attention_heads" => n.attention_heads = num(key, v)?,
            "net.attention_hidden" => n.attention_hidden = num(key, v)?,
            "net.sound_scale" => n.sound_scale = num(key, v)?,
            "net.cnn" => n.cnn = parse_cnn(v)?,
            "net.image_size" => {
                let s: usize = num(key, v)?;
                n.image = (n.image.0, s, s);
            }
            "net.state_embed" => n.state_embed = num(key, v)?,
            "net.fuse_width" => n.fuse_width = num(key, v)?,
            "net.integrator_units" => n.integrator_units = num(key, v)?,
            "ppo.gamma" => p.gamma = num(key, v)?,
            "ppo.gae_lambda" => p.gae_lambda = num(key, v)?,
            "ppo.clip_epsilon" => p.clip_epsilon = num(key, v)?,
            "ppo.epochs" => p.epochs_per_update = num(key, v)?,
            "ppo.minibatches" => p.minibatches = num(key, v)?,
            "ppo.value_coef" => p.value_coef = num(key, v)?,
            "ppo.entropy_coef" => p.entropy_coef = num(key, v)?,
            "ppo.grad_norm_clip" => p.grad_norm_clip = num(key, v)?,
            "ppo.lr" => p.lr = num(key, v)?,
            "ppo.n_envs" => p.n_envs = num(key, v)?,
            "ppo.episodes_per_env" => p.episodes_per_env = num(key, v)?,
            "ppo.reward_scale" => p.reward_scale = num(key, v)?,
            "ppo.w_pg" => p.weights.pg = num(key, v)?,
            "ppo.w_s" => p.weights.s = num(key, v)?,
            "ppo.w_o" => p.weights.o = num(key, v)?,
            "ppo.w_t" => p.weights.t = num(key, v)?,
            _ => return Err(HarnessError::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        self.net.validate()?;
        self.ppo.validate()?;
        if self.net.env_kind != self.env {
            return Err(HarnessError::Config("network built for another environment".into()));
        }
        if let SoundSource::WavDir { dir, labels } = &self.sound {
            if dir.as_os_str().is_empty() || labels.len() != 4 {
                return Err(HarnessError::Config(
                    "wav sound source needs sound_dir and a wordset of 4 labels".into(),
                ));
            }
        }
        if self.train_per_class == 0 || self.test_per_class == 0 {
            return Err(HarnessError::Config("per-class sample counts must be positive".into()));
        }
        if self.checkpoint_every == 0 {
            return Err(HarnessError::Config("checkpoint_every must be positive".into()));
        }
        Ok(())
    }

    /// Network config with the attention switch applied.
    pub fn effective_net(&self) -> NetConfig {
        NetConfig {
            attention: self.ablation.attention,
            ..self.net.clone()
        }
    }

    /// PPO config with ablation switches folded into the loss weights.
    /// Object/target terms never apply to the Kuka task.
    pub fn effective_ppo(&self) -> PpoConfig {
        let mut p = self.ppo.clone();
        let a = &self.ablation;
        if !a.use_l_s || a.oracle_concept {
            p.weights.s = 0.0;
        }
        if !a.use_l_o || self.env == EnvKind::Kuka {
            p.weights.o = 0.0;
        }
        if !a.use_l_t || self.env == EnvKind::Kuka {
            p.weights.t = 0.0;
        }
        p
    }

    /// All keys with their current values, one per line.
    pub fn resolved(&self) -> String {
        let mut s = String::new();
        let n = &self.net;
        let p = &self.ppo;
        let a = &self.ablation;
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("env", self.env.name().into());
        kv("profile", self.profile.name().into());
        kv("seed", self.seed.to_string());
        kv("total_timesteps", self.total_timesteps.to_string());
        kv("checkpoint_every", self.checkpoint_every.to_string());
        match &self.sound {
            SoundSource::Synthetic => kv("sound_source", "synthetic".into()),
            SoundSource::WavDir { dir, labels } => {
                kv("sound_source", "wav".into());
                kv("sound_dir", dir.display().to_string());
                kv("wordset", labels.join(","));
            }
        }
        kv("train_per_class", self.train_per_class.to_string());
        kv("test_per_class", self.test_per_class.to_string());
        kv("synth_duration_s", fmt_f(self.synth_duration_s));
        kv("color_randomization", self.color_randomization.to_string());
        kv("attention", a.attention.to_string());
        kv("use_l_s", a.use_l_s.to_string());
        kv("use_l_o", a.use_l_o.to_string());
        kv("use_l_t", a.use_l_t.to_string());
        kv("oracle_concept", a.oracle_concept.to_string());
        kv("pretrain", self.pretrain.to_string());
        kv("pretrain.n_images", self.pretrain_cfg.n_images.to_string());
        kv("pretrain.epochs", self.pretrain_cfg.epochs.to_string());
        kv("pretrain.batch_size", self.pretrain_cfg.batch_size.to_string());
        kv("pretrain.lr", fmt_f(self.pretrain_cfg.lr));
        kv("net.d_s", n.d_s.to_string());
        kv("net.attention_heads", n.attention_heads.to_string());
        kv("net.attention_hidden", n.attention_hidden.to_string());
        kv("net.sound_scale", fmt_f(n.sound_scale));
        kv(
            "net.cnn",
            n.cnn
                .iter()
                .map(|c| format!("{}:{}", c.channels, c.stride))
                .collect::<Vec<_>>()
                .join(","),
        );
        kv("net.image_size", n.image.1.to_string());
        kv("net.state_embed", n.state_embed.to_string());
        kv("net.fuse_width", n.fuse_width.to_string());
        kv("net.integrator_units", n.integrator_units.to_string());
        kv("ppo.gamma", fmt_f(p.gamma));
        kv("ppo.gae_lambda", fmt_f(p.gae_lambda));
        kv("ppo.clip_epsilon", fmt_f(p.clip_epsilon));
        kv("ppo.epochs", p.epochs_per_update.to_string());
        kv("ppo.minibatches", p.minibatches.to_string());
        kv("ppo.value_coef", fmt_f(p.value_coef));
        kv("ppo.entropy_coef", fmt_f(p.entropy_coef));
        kv("ppo.grad_norm_clip", fmt_f(p.grad_norm_clip));
        kv("ppo.lr", fmt_f(p.lr));
        kv("ppo.n_envs", p.n_envs.to_string());
        kv("ppo.episodes_per_env", p.episodes_per_env.to_string());
        kv("ppo.reward_scale", fmt_f(p.reward_scale));
        kv("ppo.w_pg", fmt_f(p.weights.pg));
        kv("ppo.w_s", fmt_f(p.weights.s));
        kv("ppo.w_o", fmt_f(p.weights.o));
        kv("ppo.w_t", fmt_f(p.weights.t));
        s
    }
}

/// Shortest representation that parses back to the same value.
fn fmt_f(v: f64) -> String {
    format!("{v:?}")
}

fn bad_value(key: &str, v: &str) -> HarnessError {
    HarnessError::Config(format!("bad value `{v}` for `{key}`"))
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, HarnessError> {
    v.parse().map_err(|_| bad_value(key, v))
}

fn flag(key: &str, v: &str) -> Result<bool, HarnessError> {
    match v {
        "true" | "on" | "1" => Ok(true),
        "false" | "off" | "0" => Ok(false),
        _ => Err(bad_value(key, v)),
    }
}

fn parse_cnn(v: &str) -> Result<Vec<ConvStage>, HarnessError> {
    v.split(',')
        .map(|part| {
            let (c, s) = part.trim().split_once(':').unwrap_or((part.trim(), "2"));
            Ok(ConvStage {
                channels: num("net.cnn", c)?,
                stride: num("net.cnn", s)?,
            })
        })
        .collect()
}
