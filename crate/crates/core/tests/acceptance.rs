//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on failure.
//! Several criteria train real policies, so a full run takes tens of minutes.
//! Pass criterion numbers as arguments to run a subset.

mod common;

use std::collections::HashSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sonicnav::audio::{compute_mfcc, decode_wav, MfccConfig, Note, SoundDataset, SoundFeature, SplitCounts};
use sonicnav::envs::{
    kuka_reward, random_walk_action, tb_reward, ArenaConfig, Environment, KukaConfig, KukaEnv,
    KukaState, SoundBank, TbFlags, TurtleBotEnv, TurtleBotState,
};
use sonicnav::harness::{
    ablation_rows, build_env, eval_seed, evaluate, export_trajectory, load_sounds, sound_bank,
    train, Checkpoint, EvalPolicy, Profile, RunConfig, TrainOptions, EVAL_EPISODES_PER_TARGET,
};
use sonicnav::model::{EnvKind, Model, NetConfig};
use sonicnav::ppo::{train_sound_encoder, ConceptSource, EncoderTrainConfig, TrainMetrics};

use common::harness::{small, Recording};
use common::{composite_gradcheck, primitives, REL_TOL};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn gradients() -> Outcome {
    let t0 = Instant::now();
    let mut reports = primitives::all();
    reports.push(composite_gradcheck(ConceptSource::Learned, 11));
    reports.push(composite_gradcheck(ConceptSource::Oracle, 11));
    let elapsed = t0.elapsed();
    let worst = reports.iter().max_by(|a, b| a.worst.total_cmp(&b.worst)).unwrap();
    let checked: usize = reports.iter().map(|r| r.checked).sum();
    check(
        worst.worst < REL_TOL && elapsed < Duration::from_secs(120),
        format!(
            "{checked} entries, worst rel err {:.2e} at {}, {:.1}s",
            worst.worst,
            worst.worst_at,
            elapsed.as_secs_f64()
        ),
    )
}

fn toy_bank() -> Arc<SoundBank> {
    Arc::new(
        (0..4)
            .map(|k| vec![Arc::new(SoundFeature::from_rows(&[vec![k as f64; 40]], 100, 40))])
            .collect(),
    )
}

fn wrap(a: f64) -> f64 {
    a.sin().atan2(a.cos())
}

/// Shaped TurtleBot reward written out from the state pair alone.
fn tb_direct(before: &TurtleBotState, after: &TurtleBotState) -> (f64, f64, f64) {
    let geo = |s: &TurtleBotState, i: usize| {
        let o = &s.objects[i];
        let (dx, dy) = (o.x - s.x, o.y - s.y);
        ((dx * dx + dy * dy).sqrt(), wrap(dy.atan2(dx) - s.heading))
    };
    let (d0, b0) = geo(before, before.target);
    let (d1, b1) = geo(after, after.target);
    let in_d = (0.30..=0.40).contains(&d1);
    let in_b = b1.abs() <= 0.15;
    let r_goal = match (in_d, in_b) {
        (true, true) => 2.0,
        (false, false) => 0.0,
        _ => 0.5,
    };
    let other = (0..4).any(|i| i != after.target && geo(after, i).0 < 0.20);
    let wall = 1.0 - after.x.abs().max(after.y.abs()) < 0.12;
    let r_c = if other || wall {
        -0.3
    } else if d1 < 0.25 {
        -0.1
    } else {
        0.0
    };
    (50.0 * (d0 - d1) + 20.0 * (b0.abs() - b1.abs()) + r_goal + r_c, r_goal, r_c)
}

fn kuka_direct(s: &KukaState) -> f64 {
    let b = s.blocks[s.target];
    let (dx, dy) = (s.tip[0] - b[0], s.tip[1] - b[1]);
    let d = (dx * dx + dy * dy).sqrt();
    let inside = dx.abs() <= 0.02 && dy.abs() <= 0.05;
    -0.5 * d - 0.1 * ((d * d + 5e-5).ln() + 3.5) + if inside { 1.0 } else { 0.0 }
}

fn rewards() -> Outcome {
    const STEPS: usize = 10_000;
    let mut rng = ChaCha8Rng::seed_from_u64(0x7277);
    let mut worst = 0.0f64;
    // Hits of r_goal = 2, 0.5, 0 and r_c = -0.1, -0.3.
    let mut seen = [0usize; 5];

    let mut tb = TurtleBotEnv::new(ArenaConfig { image_size: 16, ..ArenaConfig::default() }, toy_bank())
        .map_err(|e| e.to_string())?;
    let (mut n, mut ep) = (0, 0u64);
    while n < STEPS {
        tb.reset(ep, None).map_err(|e| e.to_string())?;
        // Alternate random walks with scripted approaches so every goal case occurs.
        let scripted = ep % 2 == 1;
        loop {
            let before = tb.state().unwrap().clone();
            let a = if scripted { tb.oracle_action() } else { random_walk_action(&mut rng) };
            let r = tb.step(a).map_err(|e| e.to_string())?;
            let (direct, r_goal, r_c) = tb_direct(&before, tb.state().unwrap());
            worst = worst.max((direct - r.reward).abs());
            for (slot, hit) in [r_goal == 2.0, r_goal == 0.5, r_goal == 0.0, r_c == -0.1, r_c == -0.3]
                .into_iter()
                .enumerate()
            {
                seen[slot] += hit as usize;
            }
            n += 1;
            if r.done || n == STEPS {
                break;
            }
        }
        ep += 1;
    }

    let mut kuka = KukaEnv::new(KukaConfig { image_size: 16, ..KukaConfig::default() }, toy_bank())
        .map_err(|e| e.to_string())?;
    let (mut n, mut ep) = (0, 0u64);
    let mut kuka_goal = 0;
    while n < STEPS {
        kuka.reset(ep, None).map_err(|e| e.to_string())?;
        let scripted = ep % 2 == 1;
        loop {
            let a = if scripted { kuka.oracle_action() } else { random_walk_action(&mut rng) };
            let r = kuka.step(a).map_err(|e| e.to_string())?;
            worst = worst.max((kuka_direct(kuka.state().unwrap()) - r.reward).abs());
            kuka_goal += (r.breakdown.get("r_goal") == Some(1.0)) as usize;
            n += 1;
            if r.done || n == STEPS {
                break;
            }
        }
        ep += 1;
    }

    let cfg = ArenaConfig::default();
    let spot_tb = tb_reward(1.0, 0.5, 0.9, 0.5, TbFlags::default(), &cfg)
        .map_err(|e| e.to_string())?
        .get("r_dis")
        .unwrap();
    let spot_kuka = kuka_reward(0.0, false).map_err(|e| e.to_string())?.get("r_dis").unwrap();
    let spots_ok = (spot_tb - 5.0).abs() < 1e-12 && (spot_kuka - 0.640_35).abs() < 1e-5;
    check(
        worst <= 1e-9 && seen.iter().all(|&c| c > 0) && kuka_goal > 0 && spots_ok,
        format!(
            "{} transitions, max |diff| {worst:.1e}, r_goal 2/0.5/0 hits {:?}, r_c -0.1/-0.3 hits {:?}, \
             kuka bonus hits {kuka_goal}, r_dis spots {spot_tb:.6} / {spot_kuka:.5}",
            2 * STEPS,
            &seen[..3],
            &seen[3..]
        ),
    )
}

fn mfcc() -> Outcome {
    let mut worst = 0.0f64;
    for (name, frames) in [("chirp_1s", 98), ("chord_0p6s", 58), ("decay_1p3s", 128)] {
        let (dev, rows, valid) = common::fixtures::fixture_deviation(name);
        if rows != frames || valid != frames.min(100) {
            return Err(format!("{name}: {rows} reference rows, {valid} valid frames"));
        }
        worst = worst.max(dev);
    }
    let bytes = std::fs::read(common::fixtures::fixture_dir().join("chirp_1s.wav")).map_err(|e| e.to_string())?;
    let w = decode_wav(&bytes).map_err(|e| e.to_string())?;
    let f = compute_mfcc(&w, &MfccConfig::default()).map_err(|e| e.to_string())?;
    let padded = f.shape() == (100, 40) && f.valid_frames() == 98 && f.frames()[98 * 40..].iter().all(|&v| v == 0.0);
    check(
        worst < 1e-4 && padded,
        format!("max deviation {worst:.2e} over 3 fixtures, 98 frames pad to {:?}: {padded}", f.shape()),
    )
}

fn encoder() -> Outcome {
    let t0 = Instant::now();
    let (train_ds, test_ds) = SoundDataset::synthetic(&Note::ALL, SplitCounts { train: 1000, test: 50 }, 1, 1.0)
        .map_err(|e| e.to_string())?;
    let mut model = Model::<f32>::new(NetConfig::desk(EnvKind::TurtleBot), 0).map_err(|e| e.to_string())?;
    let cfg = EncoderTrainConfig { epochs: 3, batch_size: 32, lr: 1e-3, seed: 0 };
    let r = train_sound_encoder(&mut model, &train_ds, &test_ds, &cfg).map_err(|e| e.to_string())?;
    let acc = r.test_accuracy.last().copied().unwrap_or(r.initial_accuracy);
    let elapsed = t0.elapsed();
    check(
        acc >= 0.95 && elapsed < Duration::from_secs(30 * 60),
        format!(
            "held-out accuracy {:.3} -> {acc:.3} on {} clips, {:.0}s",
            r.initial_accuracy,
            test_ds.items.len(),
            elapsed.as_secs_f64()
        ),
    )
}

fn kuka_training() -> Outcome {
    let t0 = Instant::now();
    let mut cfg = RunConfig::new(EnvKind::Kuka, Profile::Desk);
    cfg.set("oracle_concept", "true").map_err(|e| e.to_string())?;
    cfg.total_timesteps = 200_000;
    let opts = TrainOptions { out_dir: None, parallel: false, max_updates: None };
    let out = train(&cfg, None, &opts, |_| {}).map_err(|e| e.to_string())?;
    let (_, test) = load_sounds(&cfg).map_err(|e| e.to_string())?;
    let mut env = build_env(&cfg, sound_bank(&test)).map_err(|e| e.to_string())?;
    let policy = EvalPolicy::Model { model: &out.checkpoint.model, source: ConceptSource::Oracle };
    let trained = evaluate(policy, env.as_mut(), eval_seed(cfg.seed)).map_err(|e| e.to_string())?;
    let walk = evaluate(EvalPolicy::RandomWalk, env.as_mut(), eval_seed(cfg.seed)).map_err(|e| e.to_string())?;
    check(
        trained.success_rate >= 0.70 && walk.success_rate <= 0.10,
        format!(
            "trained success {:.3} after {} steps, random walk {:.3}, {:.0}s",
            trained.success_rate,
            out.checkpoint.steps_done,
            walk.success_rate,
            t0.elapsed().as_secs_f64()
        ),
    )
}

fn turtlebot_improvement() -> Outcome {
    let t0 = Instant::now();
    let base = RunConfig::new(EnvKind::TurtleBot, Profile::Desk);
    let (_, test) = load_sounds(&base).map_err(|e| e.to_string())?;
    let mut env = build_env(&base, sound_bank(&test)).map_err(|e| e.to_string())?;
    let seed = eval_seed(base.seed);
    let oracle = evaluate(EvalPolicy::ScriptedOracle, env.as_mut(), seed).map_err(|e| e.to_string())?;
    let walk = evaluate(EvalPolicy::RandomWalk, env.as_mut(), seed).map_err(|e| e.to_string())?;
    let gap = oracle.mean_episode_reward - walk.mean_episode_reward;
    let threshold = 0.05 * gap;

    let mut gains = Vec::new();
    for run_seed in 0..3u64 {
        let mut cfg = base.clone();
        cfg.seed = run_seed;
        cfg.set("oracle_concept", "true").map_err(|e| e.to_string())?;
        cfg.total_timesteps = 50_000;
        let mut opts = TrainOptions { out_dir: None, parallel: false, max_updates: Some(0) };
        let start = train(&cfg, None, &opts, |_| {}).map_err(|e| e.to_string())?.checkpoint;
        let policy = EvalPolicy::Model { model: &start.model, source: ConceptSource::Oracle };
        let before = evaluate(policy, env.as_mut(), eval_seed(run_seed)).map_err(|e| e.to_string())?;
        opts.max_updates = None;
        let end = train(&cfg, Some(start), &opts, |_| {}).map_err(|e| e.to_string())?.checkpoint;
        let policy = EvalPolicy::Model { model: &end.model, source: ConceptSource::Oracle };
        let after = evaluate(policy, env.as_mut(), eval_seed(run_seed)).map_err(|e| e.to_string())?;
        gains.push(after.mean_episode_reward - before.mean_episode_reward);
    }
    let mut sorted = gains.clone();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[1];
    check(
        median >= threshold,
        format!(
            "median reward gain {median:.2} (seeds {gains:.2?}), needed {threshold:.2} = 0.05 x ({:.2} - {:.2}), {:.0}s",
            oracle.mean_episode_reward,
            walk.mean_episode_reward,
            t0.elapsed().as_secs_f64()
        ),
    )
}

fn eval_protocol() -> Outcome {
    let mut notes = Vec::new();
    for env_kind in [EnvKind::TurtleBot, EnvKind::Kuka] {
        let cfg = small(env_kind);
        let (train_ds, test_ds) = load_sounds(&cfg).map_err(|e| e.to_string())?;
        let test_ptrs: HashSet<_> = test_ds.items.iter().map(|(f, _)| Arc::as_ptr(f)).collect();
        let train_ptrs: HashSet<_> = train_ds.items.iter().map(|(f, _)| Arc::as_ptr(f)).collect();
        let inner = build_env(&cfg, sound_bank(&test_ds)).map_err(|e| e.to_string())?;
        let mut rec = Recording { inner, seen: Vec::new() };
        let model = Model::<f32>::new(cfg.effective_net(), 0).map_err(|e| e.to_string())?;
        let policy = EvalPolicy::Model { model: &model, source: ConceptSource::Learned };
        let r = evaluate(policy, &mut rec, eval_seed(cfg.seed)).map_err(|e| e.to_string())?;
        let per_target_ok = r.per_target.len() == 4
            && r.per_target.iter().enumerate().all(|(k, b)| b.target == k && b.episodes == EVAL_EPISODES_PER_TARGET);
        let test_only = rec.seen.iter().zip(&r.details).all(|((label, ptr), d)| {
            *label == d.target && test_ptrs.contains(ptr) && !train_ptrs.contains(ptr)
        });
        if !(r.episodes == 200 && rec.seen.len() == 200 && per_target_ok && test_only) {
            return Err(format!("{env_kind:?}: {} episodes, per-target ok {per_target_ok}, test only {test_only}", r.episodes));
        }
        let rows = ablation_rows(env_kind);
        let aux = rows.iter().filter(|r| r.table == "aux").count();
        let cmp: Vec<&str> = rows.iter().filter(|r| r.table == "comparison").map(|r| r.name.as_str()).collect();
        let expected_aux = if env_kind == EnvKind::TurtleBot { 6 } else { 2 };
        let base = RunConfig::new(env_kind, Profile::Paper);
        let weights_ok = rows.iter().filter(|r| r.table == "aux").all(|r| {
            let w = r.apply(&base).unwrap().effective_ppo().weights;
            (w.s > 0.0) == r.name.contains("L_s") && (w.o > 0.0) == r.name.contains("L_o") && (w.t > 0.0) == r.name.contains("L_t")
        });
        if aux != expected_aux
            || cmp.len() != 3
            || cmp[0] != "Oracle"
            || !cmp[1].starts_with("No attention")
            || cmp[2] != "Random walk"
            || !weights_ok
        {
            return Err(format!("{env_kind:?}: {aux} aux rows, comparison rows {cmp:?}, weights ok {weights_ok}"));
        }
        notes.push(format!("{env_kind:?} 200 test-split episodes, {aux}+3 ablation rows"));
    }
    Ok(notes.join("; "))
}

fn reproducibility() -> Outcome {
    let mut cfg = small(EnvKind::TurtleBot);
    cfg.total_timesteps = 1600;
    let opts = TrainOptions { out_dir: None, parallel: false, max_updates: None };
    let a = train(&cfg, None, &opts, |_| {}).map_err(|e| e.to_string())?;
    let b = train(&cfg, None, &opts, |_| {}).map_err(|e| e.to_string())?;
    let strip = |m: &[TrainMetrics]| m.iter().map(TrainMetrics::without_timing).collect::<Vec<_>>();
    let metrics_ok = !a.metrics.is_empty() && strip(&a.metrics) == strip(&b.metrics);

    let (_, test) = load_sounds(&cfg).map_err(|e| e.to_string())?;
    let traj = |m: &Model<f32>| export_trajectory(&cfg, Some((m, ConceptSource::Learned)), sound_bank(&test), 9, 1, None);
    let ta = traj(&a.checkpoint.model).map_err(|e| e.to_string())?;
    let tb = traj(&b.checkpoint.model).map_err(|e| e.to_string())?;
    let traj_ok = ta.csv == tb.csv && ta.svg == tb.svg;

    let bytes = a.checkpoint.to_bytes();
    let back = Checkpoint::from_bytes(&bytes).map_err(|e| e.to_string())?;
    let ckpt_ok = back.to_bytes() == bytes && bytes == b.checkpoint.to_bytes();
    check(
        metrics_ok && traj_ok && ckpt_ok,
        format!(
            "{} updates: metrics identical {metrics_ok}, trajectories identical {traj_ok}, checkpoint bytes round trip {ckpt_ok}",
            a.metrics.len()
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("1 analytic gradients match finite differences", gradients),
        ("2 environment rewards match direct evaluation", rewards),
        ("3 MFCC front end matches reference features", mfcc),
        ("4 sound encoder classifies held-out clips", encoder),
        ("5 Kuka oracle-concept policy beats random walk", kuka_training),
        ("6 TurtleBot reward improves after pretraining", turtlebot_improvement),
        ("7 evaluation protocol and ablation grid", eval_protocol),
        ("8 serial runs and checkpoints are reproducible", reproducibility),
    ];
    // Numeric arguments select criteria; with none, all of them run.
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (i, (name, run)) in criteria.into_iter().enumerate() {
        if !selected.is_empty() && !selected.contains(&(i + 1)) {
            continue;
        }
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
