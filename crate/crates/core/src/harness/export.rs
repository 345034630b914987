use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use super::{arena_config, HarnessError, RunConfig};
use crate::audio::{encode_wav, synth_note, InstrumentProfile, Note};
use crate::envs::{
    trajectory_csv, Environment, KukaConfig, KukaEnv, SoundBank, TrajectoryRow, TurtleBotEnv,
};
use crate::model::{oracle_concept, ActMode, EnvKind, EpisodeMemory, Model, ObsView};
use crate::ppo::ConceptSource;
use crate::seeding;

/// Writes `<out>/<note>/<note>_<i>.wav` for each requested note. Output is a
/// pure function of the arguments.
pub fn synth_data(
    out: &Path,
    notes: &[String],
    per_note: usize,
    seed: u64,
    duration_s: f64,
) -> Result<Vec<PathBuf>, HarnessError> {
    let parsed: Vec<Note> = notes.iter().map(|n| n.parse()).collect::<Result<_, _>>()?;
    let presets = InstrumentProfile::presets();
    let mut written = Vec::new();
    for (k, note) in parsed.iter().enumerate() {
        let dir = out.join(note.name());
        std::fs::create_dir_all(&dir)?;
        for i in 0..per_note {
            let w = synth_note(
                *note,
                &presets[i % presets.len()],
                duration_s,
                seeding::derive(seed, &[k as u64, i as u64]),
            )?;
            let path = dir.join(format!("{}_{i:04}.wav", note.name()));
            std::fs::write(&path, encode_wav(&w))?;
            written.push(path);
        }
    }
    Ok(written)
}

pub struct TrajectoryExport {
    pub rows: Vec<TrajectoryRow>,
    /// The scripted oracle on the same layout.
    pub oracle_rows: Vec<TrajectoryRow>,
    pub success: bool,
    pub csv: String,
    pub svg: String,
}

/// Rolls out one episode with `model` (deterministic actions) or, without a
/// model, the scripted oracle, and renders a CSV trace plus a top-down SVG
/// map with the oracle path overlaid. Files are written when `out` is given.
pub fn export_trajectory(
    cfg: &RunConfig,
    model: Option<(&Model<f32>, ConceptSource)>,
    bank: Arc<SoundBank>,
    episode_seed: u64,
    target: usize,
    out: Option<&Path>,
) -> Result<TrajectoryExport, HarnessError> {
    let (rows, oracle_rows, success, svg) = match cfg.env {
        EnvKind::TurtleBot => {
            let mut env = TurtleBotEnv::new(arena_config(cfg), bank)?;
            let oracle_rows = rollout(&mut env, None, episode_seed, target)?.0;
            let (rows, success) = rollout(&mut env, model, episode_seed, target)?;
            let svg = turtlebot_svg(&env, &rows, &oracle_rows);
            (rows, oracle_rows, success, svg)
        }
        EnvKind::Kuka => {
            let kcfg = KukaConfig {
                image_size: cfg.net.image.1,
                ..KukaConfig::default()
            };
            let mut env = KukaEnv::new(kcfg, bank)?;
            let oracle_rows = rollout(&mut env, None, episode_seed, target)?.0;
            let (rows, success) = rollout(&mut env, model, episode_seed, target)?;
            let svg = kuka_svg(&env, &rows, &oracle_rows);
            (rows, oracle_rows, success, svg)
        }
    };
    let csv = trajectory_csv(&rows, cfg.env == EnvKind::TurtleBot);
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("trajectory.csv"), &csv)?;
        std::fs::write(
            dir.join("oracle.csv"),
            trajectory_csv(&oracle_rows, cfg.env == EnvKind::TurtleBot),
        )?;
        std::fs::write(dir.join("trajectory.svg"), &svg)?;
    }
    Ok(TrajectoryExport {
        rows,
        oracle_rows,
        success,
        csv,
        svg,
    })
}

fn rollout(
    env: &mut dyn Environment,
    model: Option<(&Model<f32>, ConceptSource)>,
    seed: u64,
    target: usize,
) -> Result<(Vec<TrajectoryRow>, bool), HarnessError> {
    let mut obs = env.reset(seed, Some(target))?;
    let mut rng = seeding::rng(seed, &[0x7277]);
    let mut mem = model.map(|(m, src)| match src {
        ConceptSource::Learned => EpisodeMemory::new(m.cfg.integrator_units),
        ConceptSource::Oracle => {
            EpisodeMemory::with_concept(m.cfg.integrator_units, oracle_concept(target))
        }
    });
    let mut rows = Vec::new();
    loop {
        let action = match (model, mem.as_mut()) {
            (Some((m, _)), Some(mem)) => {
                let view = ObsView {
                    sound: obs.sound.frames(),
                    image: &obs.image.data,
                    state: obs.state,
                };
                m.act(&view, mem, ActMode::Deterministic, &mut rng)?.action
            }
            _ => env.oracle_action(),
        };
        let r = env.step(action)?;
        let mut row = env.trace();
        row.reward = r.reward;
        row.breakdown = r.breakdown.components.clone();
        rows.push(row);
        obs = r.observation;
        if r.done {
            break;
        }
    }
    Ok((rows, env.success()))
}

const SVG_PX: f64 = 400.0;

struct Frame {
    x0: f64,
    y0: f64,
    scale: f64,
}

impl Frame {
    fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Self {
        let scale = SVG_PX / (x_max - x_min).max(y_max - y_min);
        Self {
            x0: x_min,
            y0: y_max,
            scale,
        }
    }

    fn px(&self, x: f64, y: f64) -> (f64, f64) {
        ((x - self.x0) * self.scale, (self.y0 - y) * self.scale)
    }
}

fn polyline(s: &mut String, f: &Frame, rows: &[TrajectoryRow], color: &str, dash: bool) {
    let pts: Vec<String> = rows
        .iter()
        .map(|r| {
            let (x, y) = f.px(r.x, r.y);
            format!("{x:.1},{y:.1}")
        })
        .collect();
    let dash = if dash { " stroke-dasharray=\"4 3\"" } else { "" };
    let _ = writeln!(
        s,
        "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"{dash}/>",
        pts.join(" ")
    );
}

fn svg_open() -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SVG_PX}\" height=\"{SVG_PX}\" viewBox=\"0 0 {SVG_PX} {SVG_PX}\">\n\
         <rect width=\"{SVG_PX}\" height=\"{SVG_PX}\" fill=\"#f4f4f4\" stroke=\"#333\"/>\n"
    )
}

fn turtlebot_svg(env: &TurtleBotEnv, rows: &[TrajectoryRow], oracle: &[TrajectoryRow]) -> String {
    let h = env.cfg.half_size;
    let f = Frame::new(-h, h, -h, h);
    let mut s = svg_open();
    if let Some(st) = env.state() {
        for (i, o) in st.objects.iter().enumerate() {
            let (cx, cy) = f.px(o.x, o.y);
            let stroke = if i == st.target { " stroke=\"#000\" stroke-width=\"3\"" } else { "" };
            let _ = writeln!(
                s,
                "<circle cx=\"{cx:.1}\" cy=\"{cy:.1}\" r=\"{:.1}\" fill=\"rgb({},{},{})\"{stroke}/>\n\
                 <text x=\"{cx:.1}\" y=\"{:.1}\" font-size=\"11\" text-anchor=\"middle\">{}</text>",
                env.cfg.object_radius * f.scale,
                o.color[0],
                o.color[1],
                o.color[2],
                cy - env.cfg.object_radius * f.scale - 3.0,
                o.shape.name()
            );
        }
    }
    polyline(&mut s, &f, oracle, "#888", true);
    polyline(&mut s, &f, rows, "#d22", false);
    for r in rows.iter().step_by(10) {
        let (x, y) = f.px(r.x, r.y);
        let hd = r.heading.unwrap_or(0.0);
        let (x2, y2) = (x + 12.0 * hd.cos(), y - 12.0 * hd.sin());
        let _ = writeln!(
            s,
            "<line x1=\"{x:.1}\" y1=\"{y:.1}\" x2=\"{x2:.1}\" y2=\"{y2:.1}\" stroke=\"#d22\" stroke-width=\"1\"/>"
        );
    }
    s.push_str("</svg>\n");
    s
}

fn kuka_svg(env: &KukaEnv, rows: &[TrajectoryRow], oracle: &[TrajectoryRow]) -> String {
    let [x_min, x_max, y_min, y_max] = env.cfg.bounds;
    let f = Frame::new(x_min, x_max, y_min, y_max);
    let mut s = svg_open();
    if let Some(st) = env.state() {
        for (i, b) in st.blocks.iter().enumerate() {
            let (x, y) = f.px(b[0] - env.cfg.block_width / 2.0, b[1] + env.cfg.block_length / 2.0);
            let fill = if i == st.target { "#444" } else { "#aaa" };
            let _ = writeln!(
                s,
                "<rect x=\"{x:.1}\" y=\"{y:.1}\" width=\"{:.1}\" height=\"{:.1}\" fill=\"{fill}\"/>",
                env.cfg.block_width * f.scale,
                env.cfg.block_length * f.scale
            );
        }
    }
    polyline(&mut s, &f, oracle, "#888", true);
    polyline(&mut s, &f, rows, "#d22", false);
    s.push_str("</svg>\n");
    s
}
