use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{
    check_action, pick_sound, EnvError, Environment, Image, Observation, RewardBreakdown,
    SoundBank, StepInfo, StepResult, TrajectoryRow, Visibility,
};
use crate::audio::SoundFeature;
use crate::model::EnvKind;
use crate::seeding;

const TIP_STEP: f64 = 0.01;
const BLOCK_VALUE: u8 = 255;
const TIP_VALUE: u8 = 180;

#[derive(Clone, Debug, PartialEq)]
pub struct KukaConfig {
    /// Tip rectangle `[x_min, x_max] x [y_min, y_max]`, metres.
    pub bounds: [f64; 4],
    /// Block extent along x (the line direction).
    pub block_width: f64,
    /// Block extent along y.
    pub block_length: f64,
    pub block_spacing: f64,
    /// Half-ranges of the random block-line offset in x and y.
    pub line_jitter: (f64, f64),
    pub horizon: usize,
    pub image_size: usize,
    pub success_distance: f64,
}

impl Default for KukaConfig {
    fn default() -> Self {
        Self {
            bounds: [-0.25, 0.25, -0.25, 0.25],
            block_width: 0.04,
            block_length: 0.10,
            block_spacing: 0.10,
            line_jitter: (0.05, 0.10),
            horizon: 200,
            image_size: 80,
            success_distance: 0.04,
        }
    }
}

impl KukaConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        let [x0, x1, y0, y1] = self.bounds;
        let reach_x = 1.5 * self.block_spacing + self.block_width / 2.0 + self.line_jitter.0;
        let reach_y = self.block_length / 2.0 + self.line_jitter.1;
        let cx = (x0 + x1) / 2.0;
        let cy = (y0 + y1) / 2.0;
        if x1 <= x0 || y1 <= y0 || cx - reach_x < x0 || cx + reach_x > x1 || cy - reach_y < y0 || cy + reach_y > y1 {
            return Err(EnvError::Config("blocks must fit inside the tip bounds".into()));
        }
        if self.horizon == 0 || self.image_size < 8 {
            return Err(EnvError::Config("horizon and image size must be positive".into()));
        }
        Ok(())
    }
}

/// Distance-shaped reaching reward plus the in-footprint bonus.
pub fn kuka_reward(d: f64, tip_in_target: bool) -> Result<RewardBreakdown, EnvError> {
    if !(d >= 0.0 && d.is_finite()) {
        return Err(EnvError::NegativeDistance(d));
    }
    let r_dis = -0.5 * d - 0.1 * ((d * d + 5e-5).ln() + 3.5);
    let r_goal = if tip_in_target { 1.0 } else { 0.0 };
    Ok(RewardBreakdown {
        components: vec![("r_dis", r_dis), ("r_goal", r_goal)],
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct KukaState {
    pub tip: [f64; 2],
    /// Block centres, ordered left (smallest x) to right.
    pub blocks: [[f64; 2]; 4],
    pub target: usize,
    pub t: usize,
    pub success: bool,
}

impl KukaState {
    pub fn distance(&self) -> f64 {
        let b = self.blocks[self.target];
        (self.tip[0] - b[0]).hypot(self.tip[1] - b[1])
    }

    pub fn tip_in_target(&self, cfg: &KukaConfig) -> bool {
        let b = self.blocks[self.target];
        (self.tip[0] - b[0]).abs() <= cfg.block_width / 2.0
            && (self.tip[1] - b[1]).abs() <= cfg.block_length / 2.0
    }
}

pub struct KukaEnv {
    pub cfg: KukaConfig,
    bank: Arc<SoundBank>,
    state: Option<KukaState>,
    sound: Option<(Arc<SoundFeature>, usize)>,
}

impl KukaEnv {
    pub fn new(cfg: KukaConfig, bank: Arc<SoundBank>) -> Result<Self, EnvError> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            bank,
            state: None,
            sound: None,
        })
    }

    pub fn state(&self) -> Option<&KukaState> {
        self.state.as_ref()
    }

    pub fn initial_state(&self, seed: u64, command: Option<usize>) -> Result<(KukaState, ChaCha8Rng), EnvError> {
        if let Some(c) = command {
            if c >= 4 {
                return Err(EnvError::BadTarget(c));
            }
        }
        let c = &self.cfg;
        let mut rng = seeding::rng(seed, &[0x6b75]);
        let [x0, x1, y0, y1] = c.bounds;
        let ox = (x0 + x1) / 2.0 + rng.random_range(-c.line_jitter.0..=c.line_jitter.0);
        let oy = (y0 + y1) / 2.0 + rng.random_range(-c.line_jitter.1..=c.line_jitter.1);
        let blocks = std::array::from_fn(|k| [ox + (k as f64 - 1.5) * c.block_spacing, oy]);
        let tip = [rng.random_range(x0..=x1), rng.random_range(y0..=y1)];
        let target = match command {
            Some(k) => k,
            None => rng.random_range(0..4),
        };
        let mut s = KukaState {
            tip,
            blocks,
            target,
            t: 0,
            success: false,
        };
        s.success = s.distance() < c.success_distance;
        Ok((s, rng))
    }

    fn observe(&self) -> Observation {
        let s = self.state.as_ref().expect("reset");
        let (sound, label) = self.sound.clone().expect("reset");
        Observation {
            sound,
            sound_label: label,
            image: render(s, &self.cfg),
            state: s.tip,
        }
    }

    pub fn render(&self, s: &KukaState) -> Image {
        render(s, &self.cfg)
    }

    pub fn integrate(&self, s: &mut KukaState, a: [f64; 2]) {
        let [x0, x1, y0, y1] = self.cfg.bounds;
        s.tip[0] = (s.tip[0] + TIP_STEP * a[0]).clamp(x0, x1);
        s.tip[1] = (s.tip[1] + TIP_STEP * a[1]).clamp(y0, y1);
        s.t += 1;
    }
}

impl Environment for KukaEnv {
    fn kind(&self) -> EnvKind {
        EnvKind::Kuka
    }

    fn horizon(&self) -> usize {
        self.cfg.horizon
    }

    fn reset(&mut self, seed: u64, command: Option<usize>) -> Result<Observation, EnvError> {
        let (s, mut rng) = self.initial_state(seed, command)?;
        let sound = pick_sound(&self.bank, s.target, &mut rng)?;
        self.sound = Some((sound, s.target));
        self.state = Some(s);
        Ok(self.observe())
    }

    fn step(&mut self, a: [f64; 2]) -> Result<StepResult, EnvError> {
        check_action(a)?;
        let mut s = self.state.clone().ok_or(EnvError::NotReset)?;
        if s.t >= self.cfg.horizon {
            return Err(EnvError::EpisodeFinished);
        }
        self.integrate(&mut s, a);
        let d = s.distance();
        let breakdown = kuka_reward(d, s.tip_in_target(&self.cfg))?;
        s.success |= d < self.cfg.success_distance;
        let done = s.t >= self.cfg.horizon;
        let info = StepInfo {
            distance: d,
            bearing: None,
            success_so_far: s.success,
        };
        self.state = Some(s);
        Ok(StepResult {
            observation: self.observe(),
            reward: breakdown.total(),
            breakdown,
            done,
            info,
        })
    }

    fn target(&self) -> usize {
        self.state.as_ref().map_or(0, |s| s.target)
    }

    fn t(&self) -> usize {
        self.state.as_ref().map_or(0, |s| s.t)
    }

    fn success(&self) -> bool {
        self.state.as_ref().is_some_and(|s| s.success)
    }

    /// Every block is always in view.
    fn visibility(&self) -> Visibility {
        Visibility {
            objects: [true; 4],
            target: true,
        }
    }

    /// Greedy move of the tip toward the target centre.
    fn oracle_action(&self) -> [f64; 2] {
        let Some(s) = self.state.as_ref() else {
            return [0.0, 0.0];
        };
        let b = s.blocks[s.target];
        [
            ((b[0] - s.tip[0]) / TIP_STEP).clamp(-1.0, 1.0),
            ((b[1] - s.tip[1]) / TIP_STEP).clamp(-1.0, 1.0),
        ]
    }

    fn trace(&self) -> TrajectoryRow {
        let s = self.state.as_ref().expect("reset");
        TrajectoryRow {
            t: s.t,
            x: s.tip[0],
            y: s.tip[1],
            distance: s.distance(),
            ..TrajectoryRow::default()
        }
    }
}

/// Orthographic top view: image column grows with x, row grows with -y.
fn render(s: &KukaState, cfg: &KukaConfig) -> Image {
    let n = cfg.image_size;
    let mut img = Image::new(1, n, n);
    let [x0, x1, y0, y1] = cfg.bounds;
    let sx = n as f64 / (x1 - x0);
    let sy = n as f64 / (y1 - y0);
    let to_world = |px: usize, py: usize| {
        (
            x0 + (px as f64 + 0.5) / sx,
            y1 - (py as f64 + 0.5) / sy,
        )
    };
    for py in 0..n {
        for px in 0..n {
            let (wx, wy) = to_world(px, py);
            let on_block = s.blocks.iter().any(|b| {
                (wx - b[0]).abs() <= cfg.block_width / 2.0
                    && (wy - b[1]).abs() <= cfg.block_length / 2.0
            });
            if on_block {
                img.set(0, py, px, BLOCK_VALUE);
            }
        }
    }
    let cx = (((s.tip[0] - x0) * sx) as usize).min(n - 1);
    let cy = (((y1 - s.tip[1]) * sy) as usize).min(n - 1);
    for (dx, dy) in [(0i64, 0i64), (-1, 0), (1, 0), (0, -1), (0, 1)] {
        let (x, y) = (cx as i64 + dx, cy as i64 + dy);
        if (0..n as i64).contains(&x) && (0..n as i64).contains(&y) {
            img.set(0, y as usize, x as usize, TIP_VALUE);
        }
    }
    img
}
