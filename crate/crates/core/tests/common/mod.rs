//! Central finite-difference oracle shared by the integration suites. It only
//! evaluates forward values, never the tape's backward pass.
#![allow(dead_code)]

pub mod fixtures;
pub mod harness;
pub mod primitives;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sonicnav::diff::{Gradients, ParamStore, Tensor};

pub const FD_STEP: f64 = 1e-4;
pub const REL_TOL: f64 = 1e-4;
/// Magnitude below which both gradients count as zero.
pub const ABS_FLOOR: f64 = 1e-7;

pub fn rel_err(a: f64, n: f64) -> f64 {
    let scale = a.abs().max(n.abs());
    if scale < ABS_FLOOR {
        0.0
    } else {
        (a - n).abs() / scale
    }
}

#[derive(Debug)]
pub struct FdReport {
    pub checked: usize,
    pub worst: f64,
    pub worst_at: String,
}

/// Compares `analytic` against central differences of `f` on up to
/// `per_param` randomly chosen entries of every parameter.
pub fn fd_check(
    store: &ParamStore<f64>,
    analytic: &Gradients<f64>,
    f: impl Fn(&ParamStore<f64>) -> f64,
    per_param: usize,
    seed: u64,
) -> FdReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut work = store.clone();
    let mut report = FdReport {
        checked: 0,
        worst: 0.0,
        worst_at: String::new(),
    };
    let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
    for id in ids {
        let n = store.value(id).len();
        let picks: Vec<usize> = if n <= per_param {
            (0..n).collect()
        } else {
            (0..per_param).map(|_| rng.random_range(0..n)).collect()
        };
        for k in picks {
            let orig = store.value(id).data()[k];
            work.get_mut(id).value.data_mut()[k] = orig + FD_STEP;
            let up = f(&work);
            work.get_mut(id).value.data_mut()[k] = orig - FD_STEP;
            let down = f(&work);
            work.get_mut(id).value.data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let a = analytic.get(id).data()[k];
            let e = rel_err(a, numeric);
            report.checked += 1;
            if e > report.worst {
                report.worst = e;
                report.worst_at = format!(
                    "{}[{}]: analytic {a:.9e} numeric {numeric:.9e}",
                    store.get(id).name,
                    k
                );
            }
        }
    }
    report
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A hand-built episode sized for `cfg`, with random observations,
/// behaviour outputs and targets. Stored log-probs are offset from the
/// current policy so importance ratios differ from one.
pub fn synthetic_episode(
    model: &sonicnav::model::Model<f64>,
    len: usize,
    target: usize,
    seed: u64,
) -> sonicnav::ppo::EpisodeRecord {
    use sonicnav::audio::SoundFeature;
    use sonicnav::envs::{Image, Visibility};
    use std::sync::Arc;
    let cfg = &model.cfg;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<Vec<f64>> = (0..cfg.sound_frames)
        .map(|_| (0..cfg.sound_coeffs).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let sound = Arc::new(SoundFeature::from_rows(&rows, cfg.sound_frames, cfg.sound_coeffs));
    let (c, h, w) = cfg.image;
    let images: Vec<Image> = (0..len)
        .map(|_| {
            let mut img = Image::new(c, h, w);
            for v in img.data.iter_mut() {
                *v = rng.random();
            }
            img
        })
        .collect();
    let states: Vec<[f64; 2]> = (0..len)
        .map(|_| [rng.random_range(0.0..1.0), rng.random_range(-0.5..0.5)])
        .collect();
    let actions: Vec<[f32; 2]> = (0..len)
        .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
        .collect();
    let log_probs: Vec<f32> = (0..len).map(|_| rng.random_range(-2.5..-1.5)).collect();
    let values: Vec<f32> = (0..len).map(|_| rng.random_range(-0.5..0.5)).collect();
    let rewards: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut dones = vec![false; len];
    dones[len - 1] = true;
    let visibility: Vec<Visibility> = (0..len)
        .map(|_| {
            let objects = [rng.random(), rng.random(), rng.random(), rng.random()];
            Visibility {
                objects,
                target: objects[target],
            }
        })
        .collect();
    let advantages: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
    let returns: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
    sonicnav::ppo::EpisodeRecord {
        env_index: 0,
        seed,
        target,
        sound,
        images,
        states,
        actions,
        log_probs,
        values,
        rewards,
        dones,
        visibility,
        success: false,
        advantages,
        returns,
    }
}

/// Adds uniform noise to every parameter. Zero-initialised biases put ReLU
/// inputs fed only by zeros exactly on the kink, where central differences
/// see half the slope; checks run at a jittered point instead.
pub fn jittered(store: &ParamStore<f64>, scale: f64, seed: u64) -> ParamStore<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6a69);
    let mut out = store.clone();
    let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
    for id in ids {
        for v in out.get_mut(id).value.data_mut() {
            *v += rng.random_range(-scale..scale);
        }
    }
    out
}

/// Finite-difference check of the full training objective (policy, value,
/// entropy, sound, object and target terms) on the tiny network.
pub fn composite_gradcheck(source: sonicnav::ppo::ConceptSource, seed: u64) -> FdReport {
    use sonicnav::diff::Tape;
    use sonicnav::model::{EnvKind, Model, NetConfig};
    use sonicnav::ppo::{episode_objective, LossWeights, PpoConfig};
    let base = Model::<f64>::new(NetConfig::tiny(EnvKind::TurtleBot), seed).unwrap();
    let model = base.with_params(jittered(&base.params, 0.05, seed));
    let eps = vec![
        synthetic_episode(&model, 3, 1, seed ^ 1),
        synthetic_episode(&model, 2, 3, seed ^ 2),
    ];
    let mut cfg = PpoConfig::paper(EnvKind::TurtleBot);
    cfg.weights = LossWeights {
        pg: 1.0,
        s: 1.0,
        o: 0.5,
        t: 0.5,
    };
    let n_steps: usize = eps.iter().map(|e| e.len()).sum();
    let objective = |m: &Model<f64>| -> (f64, Gradients<f64>) {
        let mut tape = Tape::new(&m.params);
        let mut total = None;
        for ep in &eps {
            let (v, _) = episode_objective(&mut tape, m, ep, &cfg, source, n_steps, eps.len()).unwrap();
            total = Some(match total {
                None => v,
                Some(t) => tape.add(t, v).unwrap(),
            });
        }
        let total = total.unwrap();
        (tape.value(total).item(), tape.backward(total).unwrap())
    };
    let (_, analytic) = objective(&model);
    fd_check(
        &model.params,
        &analytic,
        |store| objective(&model.with_params(store.clone())).0,
        6,
        seed,
    )
}
