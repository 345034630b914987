use serde::{Deserialize, Serialize};

use super::ModelError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvKind {
    TurtleBot,
    Kuka,
}

impl EnvKind {
    pub fn name(self) -> &'static str {
        match self {
            EnvKind::TurtleBot => "turtlebot",
            EnvKind::Kuka => "kuka",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "turtlebot" => Some(EnvKind::TurtleBot),
            "kuka" => Some(EnvKind::Kuka),
            _ => None,
        }
    }
}

/// One convolution stage of the image trunk (3x3 kernels, padding 1).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvStage {
    pub channels: usize,
    pub stride: usize,
}

pub const CONCEPT_DIM: usize = 64;
pub const ACTION_DIM: usize = 2;
pub const N_CLASSES: usize = 4;
pub const STATE_DIM: usize = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub env_kind: EnvKind,
    /// BiLSTM units per direction.
    pub d_s: usize,
    pub attention: bool,
    pub attention_heads: usize,
    /// Width of the hidden score layer inside each attention head.
    pub attention_hidden: usize,
    pub sound_frames: usize,
    pub sound_coeffs: usize,
    /// Multiplier applied to raw MFCC values before the encoder.
    pub sound_scale: f64,
    pub cnn: Vec<ConvStage>,
    /// Image tensor as (channels, height, width).
    pub image: (usize, usize, usize),
    /// Per-component multipliers applied to the robot state vector.
    pub state_scale: (f64, f64),
    pub state_embed: usize,
    pub fuse_width: usize,
    pub integrator_units: usize,
}

impl NetConfig {
    /// Full-size network.
    pub fn paper(env: EnvKind) -> Self {
        let (cnn, image) = match env {
            EnvKind::TurtleBot => (stages(&[16, 32, 64, 64]), (3, 96, 96)),
            EnvKind::Kuka => (stages(&[16, 32, 32]), (1, 80, 80)),
        };
        Self {
            env_kind: env,
            d_s: 128,
            attention: true,
            attention_heads: 4,
            attention_hidden: 64,
            sound_frames: 100,
            sound_coeffs: 40,
            sound_scale: 0.05,
            cnn,
            image,
            state_scale: state_scale(env),
            state_embed: 32,
            fuse_width: 128,
            integrator_units: 128,
        }
    }

    /// Reduced network for single-core training runs.
    pub fn desk(env: EnvKind) -> Self {
        let (cnn, image) = match env {
            EnvKind::TurtleBot => (stages(&[8, 16, 16, 16]), (3, 48, 48)),
            EnvKind::Kuka => (stages(&[8, 16, 16]), (1, 80, 80)),
        };
        Self {
            d_s: 32,
            attention_hidden: 32,
            cnn,
            image,
            state_embed: 16,
            fuse_width: 64,
            integrator_units: 64,
            ..Self::paper(env)
        }
    }

    /// Smallest configuration that still exercises every component.
    pub fn tiny(env: EnvKind) -> Self {
        let channels = match env {
            EnvKind::TurtleBot => 3,
            EnvKind::Kuka => 1,
        };
        Self {
            env_kind: env,
            d_s: 4,
            attention: true,
            attention_heads: 2,
            attention_hidden: 3,
            sound_frames: 6,
            sound_coeffs: 5,
            sound_scale: 1.0,
            cnn: stages(&[2, 3]),
            image: (channels, 8, 8),
            state_scale: state_scale(env),
            state_embed: 3,
            fuse_width: 5,
            integrator_units: 4,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::Config(m.to_string()));
        if self.attention_heads == 0 {
            return bad("attention_heads must be at least 1");
        }
        if self.d_s == 0 || self.attention_hidden == 0 || self.integrator_units == 0 {
            return bad("layer widths must be positive");
        }
        if self.sound_frames == 0 || self.sound_coeffs == 0 {
            return bad("sound feature shape must be positive");
        }
        if self.fuse_width == 0 || self.state_embed == 0 {
            return bad("fusion widths must be positive");
        }
        if self.cnn.is_empty() || self.cnn.iter().any(|s| s.channels == 0 || s.stride == 0) {
            return bad("cnn needs at least one stage with positive channels and stride");
        }
        let want_c = match self.env_kind {
            EnvKind::TurtleBot => 3,
            EnvKind::Kuka => 1,
        };
        if self.image.0 != want_c || self.image.1 < 3 || self.image.2 < 3 {
            return bad("image channels do not match the environment");
        }
        if !(self.sound_scale.is_finite() && self.sound_scale > 0.0) {
            return bad("sound_scale must be positive");
        }
        Ok(())
    }

    /// Spatial shape after every stage: (channels, height, width).
    pub fn trunk_shapes(&self) -> Vec<(usize, usize, usize)> {
        let (mut c, mut h, mut w) = self.image;
        let mut out = vec![(c, h, w)];
        for s in &self.cnn {
            h = (h + 2 - 3) / s.stride + 1;
            w = (w + 2 - 3) / s.stride + 1;
            c = s.channels;
            out.push((c, h, w));
        }
        out
    }

    pub fn trunk_width(&self) -> usize {
        let (c, h, w) = *self.trunk_shapes().last().expect("non-empty");
        c * h * w
    }

    pub fn feature_width(&self) -> usize {
        self.integrator_units + self.fuse_width
    }
}

fn state_scale(env: EnvKind) -> (f64, f64) {
    match env {
        // desired speed (m/s) and desired heading offset (rad)
        EnvKind::TurtleBot => (3.0, 0.5),
        // tip position in metres around the workspace centre
        EnvKind::Kuka => (4.0, 4.0),
    }
}

fn stages(channels: &[usize]) -> Vec<ConvStage> {
    channels
        .iter()
        .map(|&c| ConvStage {
            channels: c,
            stride: 2,
        })
        .collect()
}
