use std::f64::consts::PI;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{
    check_action, pick_sound, wrap_angle, EnvError, Environment, Image, Observation,
    RewardBreakdown, SoundBank, StepInfo, StepResult, TrajectoryRow, Visibility,
};
use crate::audio::SoundFeature;
use crate::model::EnvKind;
use crate::seeding;

const DT: f64 = 0.1;
const HEADING_GAIN: f64 = 1.5;
const SPEED_STEP: f64 = 0.05;
const ANGLE_STEP: f64 = 0.15;
const CAMERA_HEIGHT: f64 = 0.15;
const NEAR_PLANE: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Shape {
    Cube,
    Sphere,
    Cone,
    Cylinder,
}

impl Shape {
    pub const ALL: [Shape; 4] = [Shape::Cube, Shape::Sphere, Shape::Cone, Shape::Cylinder];

    pub fn name(self) -> &'static str {
        match self {
            Shape::Cube => "cube",
            Shape::Sphere => "sphere",
            Shape::Cone => "cone",
            Shape::Cylinder => "cylinder",
        }
    }

    fn height(self) -> f64 {
        match self {
            Shape::Cube | Shape::Sphere => 0.16,
            Shape::Cone | Shape::Cylinder => 0.22,
        }
    }

    fn half_width(self) -> f64 {
        match self {
            Shape::Cylinder => 0.06,
            _ => 0.08,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArenaConfig {
    /// Half the side length of the square arena, metres.
    pub half_size: f64,
    pub color_randomization: bool,
    pub goal_distance: (f64, f64),
    pub goal_angle: (f64, f64),
    pub target_near: f64,
    pub other_near: f64,
    pub wall_near: f64,
    pub horizon: usize,
    pub image_size: usize,
    pub fov_deg: f64,
    pub robot_radius: f64,
    pub object_radius: f64,
    /// Bound on the desired translational speed, m/s.
    pub max_speed: f64,
    pub success_distance: f64,
}

impl Default for ArenaConfig {
    fn default() -> Self {
        Self {
            half_size: 1.0,
            color_randomization: true,
            goal_distance: (0.30, 0.40),
            goal_angle: (0.0, 0.15),
            target_near: 0.25,
            other_near: 0.20,
            wall_near: 0.12,
            horizon: 80,
            image_size: 96,
            fov_deg: 60.0,
            robot_radius: 0.1,
            object_radius: 0.08,
            max_speed: 0.3,
            success_distance: 0.34,
        }
    }
}

impl ArenaConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |m: &str| Err(EnvError::Config(m.to_string()));
        if self.goal_distance.0 >= self.goal_distance.1 {
            return bad("goal distance window is empty");
        }
        if self.goal_angle.0 >= self.goal_angle.1 {
            return bad("goal angle window is empty");
        }
        if self.horizon == 0 || self.image_size < 8 {
            return bad("horizon and image size must be positive");
        }
        if self.half_size < 0.9 + self.object_radius {
            return bad("arena too small for the object ring");
        }
        Ok(())
    }
}

/// Proximity conditions feeding the collision penalty.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TbFlags {
    pub target_near: bool,
    pub other_near: bool,
    pub wall_near: bool,
}

/// Shaped TurtleBot reward from the previous and current distance/bearing.
pub fn tb_reward(
    prev_d: f64,
    prev_beta: f64,
    d: f64,
    beta: f64,
    flags: TbFlags,
    cfg: &ArenaConfig,
) -> Result<RewardBreakdown, EnvError> {
    for v in [prev_d, d] {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(EnvError::NegativeDistance(v));
        }
    }
    let r_c = if flags.other_near || flags.wall_near {
        -0.3
    } else if flags.target_near {
        -0.1
    } else {
        0.0
    };
    let r_dis = 50.0 * (prev_d.abs() - d.abs());
    let r_a = 20.0 * (prev_beta.abs() - beta.abs());
    let in_d = cfg.goal_distance.0 <= d && d <= cfg.goal_distance.1;
    let in_b = cfg.goal_angle.0 <= beta.abs() && beta.abs() <= cfg.goal_angle.1;
    let r_goal = match (in_d, in_b) {
        (true, true) => 2.0,
        (true, false) | (false, true) => 0.5,
        (false, false) => 0.0,
    };
    Ok(RewardBreakdown {
        components: vec![("r_c", r_c), ("r_dis", r_dis), ("r_a", r_a), ("r_goal", r_goal)],
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct TbObject {
    pub shape: Shape,
    pub color: [u8; 3],
    pub x: f64,
    pub y: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TurtleBotState {
    pub x: f64,
    pub y: f64,
    /// Unwrapped heading, radians.
    pub heading: f64,
    pub initial_heading: f64,
    pub v_d: f64,
    /// Desired angle relative to the initial heading.
    pub phi_d: f64,
    /// Object `i` has shape `Shape::ALL[i]`.
    pub objects: [TbObject; 4],
    pub target: usize,
    pub t: usize,
    pub prev_d: f64,
    pub prev_beta: f64,
    pub success: bool,
    pub wall_color: [u8; 3],
    pub floor_color: [u8; 3],
}

impl TurtleBotState {
    pub fn distance_to(&self, i: usize) -> f64 {
        let o = &self.objects[i];
        (o.x - self.x).hypot(o.y - self.y)
    }

    /// Signed angle from the camera axis to object `i`.
    pub fn bearing_to(&self, i: usize) -> f64 {
        let o = &self.objects[i];
        wrap_angle((o.y - self.y).atan2(o.x - self.x) - self.heading)
    }

    pub fn flags(&self, cfg: &ArenaConfig) -> TbFlags {
        let wall = cfg.half_size - self.x.abs().max(self.y.abs());
        TbFlags {
            target_near: self.distance_to(self.target) < cfg.target_near,
            other_near: (0..4)
                .filter(|&i| i != self.target)
                .any(|i| self.distance_to(i) < cfg.other_near),
            wall_near: wall < cfg.wall_near,
        }
    }
}

pub struct TurtleBotEnv {
    pub cfg: ArenaConfig,
    bank: Arc<SoundBank>,
    state: Option<TurtleBotState>,
    sound: Option<(Arc<SoundFeature>, usize)>,
    visibility: Visibility,
}

fn random_color(rng: &mut ChaCha8Rng, lo: u8, hi: u8) -> [u8; 3] {
    [
        rng.random_range(lo..=hi),
        rng.random_range(lo..=hi),
        rng.random_range(lo..=hi),
    ]
}

const PALETTE: [[u8; 3]; 4] = [[220, 40, 40], [40, 180, 60], [50, 80, 220], [230, 200, 40]];

impl TurtleBotEnv {
    pub fn new(cfg: ArenaConfig, bank: Arc<SoundBank>) -> Result<Self, EnvError> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            bank,
            state: None,
            sound: None,
            visibility: Visibility::default(),
        })
    }

    pub fn state(&self) -> Option<&TurtleBotState> {
        self.state.as_ref()
    }

    /// Initial layout drawn from `seed`.
    pub fn initial_state(&self, seed: u64, command: Option<usize>) -> Result<(TurtleBotState, ChaCha8Rng), EnvError> {
        if let Some(c) = command {
            if c >= 4 {
                return Err(EnvError::BadTarget(c));
            }
        }
        let mut rng = seeding::rng(seed, &[0x7462]);
        let r = 0.1 * rng.random::<f64>().sqrt();
        let a = rng.random_range(-PI..PI);
        let (x, y) = (r * a.cos(), r * a.sin());
        let heading = rng.random_range(-PI..PI);
        let min_sep = PI / 4.0;
        let angles = loop {
            let cand: [f64; 4] = std::array::from_fn(|_| rng.random_range(-PI..PI));
            let ok = (0..4).all(|i| {
                (i + 1..4).all(|j| wrap_angle(cand[i] - cand[j]).abs() >= min_sep)
            });
            if ok {
                break cand;
            }
        };
        let randomize = self.cfg.color_randomization;
        let objects: [TbObject; 4] = std::array::from_fn(|i| {
            let rad = rng.random_range(0.6..=0.8);
            let color = if randomize {
                random_color(&mut rng, 30, 255)
            } else {
                PALETTE[i]
            };
            TbObject {
                shape: Shape::ALL[i],
                color,
                x: x + rad * angles[i].cos(),
                y: y + rad * angles[i].sin(),
            }
        });
        let (wall_color, floor_color) = if randomize {
            (random_color(&mut rng, 120, 230), random_color(&mut rng, 20, 110))
        } else {
            ([180, 180, 180], [70, 70, 70])
        };
        let target = match command {
            Some(c) => c,
            None => rng.random_range(0..4),
        };
        let mut s = TurtleBotState {
            x,
            y,
            heading,
            initial_heading: heading,
            v_d: 0.0,
            phi_d: 0.0,
            objects,
            target,
            t: 0,
            prev_d: 0.0,
            prev_beta: 0.0,
            success: false,
            wall_color,
            floor_color,
        };
        s.prev_d = s.distance_to(target);
        s.prev_beta = s.bearing_to(target);
        s.success = s.prev_d <= self.cfg.success_distance;
        Ok((s, rng))
    }

    /// Pinhole view from the robot plus per-object visibility.
    pub fn render(&self, s: &TurtleBotState) -> (Image, [bool; 4]) {
        render(s, &self.cfg)
    }

    fn observe(&mut self) -> Observation {
        let s = self.state.as_ref().expect("reset");
        let (image, visible) = render(s, &self.cfg);
        self.visibility = Visibility {
            objects: visible,
            target: visible[s.target],
        };
        let (sound, label) = self.sound.clone().expect("reset");
        Observation {
            sound,
            sound_label: label,
            image,
            state: [s.v_d, s.phi_d],
        }
    }

    /// Advances a state by one action; pure kinematics, no reward.
    pub fn integrate(&self, s: &mut TurtleBotState, a: [f64; 2]) {
        let c = &self.cfg;
        s.v_d = (s.v_d + SPEED_STEP * a[0]).clamp(-c.max_speed, c.max_speed);
        s.phi_d += ANGLE_STEP * a[1];
        let desired = s.initial_heading + s.phi_d;
        s.heading += DT * HEADING_GAIN * (desired - s.heading);
        let lim = c.half_size - c.robot_radius;
        let nx = (s.x + s.v_d * s.heading.cos() * DT).clamp(-lim, lim);
        let ny = (s.y + s.v_d * s.heading.sin() * DT).clamp(-lim, lim);
        let blocked = s
            .objects
            .iter()
            .any(|o| (o.x - nx).hypot(o.y - ny) < c.robot_radius + c.object_radius);
        if !blocked {
            s.x = nx;
            s.y = ny;
        }
        s.t += 1;
    }
}

impl Environment for TurtleBotEnv {
    fn kind(&self) -> EnvKind {
        EnvKind::TurtleBot
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
        let d = s.distance_to(s.target);
        let beta = s.bearing_to(s.target);
        let breakdown = tb_reward(s.prev_d, s.prev_beta, d, beta, s.flags(&self.cfg), &self.cfg)?;
        s.prev_d = d;
        s.prev_beta = beta;
        s.success |= d <= self.cfg.success_distance;
        let done = s.t >= self.cfg.horizon;
        let info = StepInfo {
            distance: d,
            bearing: Some(beta),
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

    fn visibility(&self) -> Visibility {
        self.visibility
    }

    /// Turns toward the target, then drives in and stops inside the goal window.
    fn oracle_action(&self) -> [f64; 2] {
        let Some(s) = self.state.as_ref() else {
            return [0.0, 0.0];
        };
        let o = &s.objects[s.target];
        let world = (o.y - s.y).atan2(o.x - s.x);
        let current = s.initial_heading + s.phi_d;
        let turn = wrap_angle(world - current);
        let da = (turn / ANGLE_STEP).clamp(-1.0, 1.0);
        let d = s.distance_to(s.target);
        let beta = s.bearing_to(s.target);
        let v_target = if beta.abs() > 0.4 {
            0.0
        } else {
            (1.0 * (d - 0.32)).clamp(0.0, 0.25)
        };
        let dv = ((v_target - s.v_d) / SPEED_STEP).clamp(-1.0, 1.0);
        [dv, da]
    }

    fn trace(&self) -> TrajectoryRow {
        let s = self.state.as_ref().expect("reset");
        TrajectoryRow {
            t: s.t,
            x: s.x,
            y: s.y,
            heading: Some(s.heading),
            v_d: Some(s.v_d),
            phi_d: Some(s.phi_d),
            distance: s.distance_to(s.target),
            bearing: Some(s.bearing_to(s.target)),
            reward: 0.0,
            breakdown: Vec::new(),
        }
    }
}

fn render(s: &TurtleBotState, cfg: &ArenaConfig) -> (Image, [bool; 4]) {
    let n = cfg.image_size;
    let mut img = Image::new(3, n, n);
    let mut ids = vec![u8::MAX; n * n];
    let half = n as f64 / 2.0;
    for y in 0..n {
        let color = if (y as f64 + 0.5) < half {
            s.wall_color
        } else {
            s.floor_color
        };
        for x in 0..n {
            img.set_rgb(y, x, color);
        }
    }
    let f = half / (cfg.fov_deg.to_radians() / 2.0).tan();
    let (ch, sh) = (s.heading.cos(), s.heading.sin());
    let mut order: Vec<(usize, f64, f64)> = s
        .objects
        .iter()
        .enumerate()
        .map(|(i, o)| {
            let (rx, ry) = (o.x - s.x, o.y - s.y);
            let fwd = rx * ch + ry * sh;
            let right = rx * sh - ry * ch;
            (i, fwd, right)
        })
        .filter(|&(_, fwd, _)| fwd > NEAR_PLANE)
        .collect();
    // far to near so nearer silhouettes overwrite
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    for (i, z, right) in order {
        let o = &s.objects[i];
        let uc = half + f * right / z;
        let row = |height: f64| half + f * (CAMERA_HEIGHT - height) / z;
        let hw = f * o.shape.half_width() / z;
        let (top, bottom) = (row(o.shape.height()), row(0.0));
        let inside = |px: f64, py: f64| -> bool {
            match o.shape {
                Shape::Cube | Shape::Cylinder => {
                    (px - uc).abs() <= hw && py >= top && py <= bottom
                }
                Shape::Sphere => {
                    let cy = row(o.shape.height() / 2.0);
                    let r = f * o.shape.height() / 2.0 / z;
                    (px - uc).powi(2) + (py - cy).powi(2) <= r * r
                }
                Shape::Cone => {
                    if py < top || py > bottom {
                        return false;
                    }
                    let frac = (py - top) / (bottom - top).max(1e-9);
                    (px - uc).abs() <= hw * frac
                }
            }
        };
        let x0 = (uc - hw - 1.0).floor().max(0.0) as usize;
        let x1 = ((uc + hw + 1.0).ceil().max(0.0) as usize).min(n);
        let y0 = (top - 1.0).floor().max(0.0) as usize;
        let y1 = ((bottom + 1.0).ceil().max(0.0) as usize).min(n);
        for py in y0..y1 {
            for px in x0..x1 {
                if inside(px as f64 + 0.5, py as f64 + 0.5) {
                    img.set_rgb(py, px, o.color);
                    ids[py * n + px] = i as u8;
                }
            }
        }
    }
    let mut visible = [false; 4];
    for &id in &ids {
        if (id as usize) < 4 {
            visible[id as usize] = true;
        }
    }
    (img, visible)
}
