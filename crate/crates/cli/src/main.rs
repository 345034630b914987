use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use sonicnav::harness::{
    ablation_rows, build_env, eval_seed, evaluate, export_trajectory, load_sounds, pretrain_for,
    run_ablation, sound_bank, synth_data, train, Checkpoint, EvalPolicy, RunConfig, SuccessReport,
    TrainOptions,
};
use sonicnav::model::{EnvKind, Model};
use sonicnav::ppo::ConceptSource;

#[derive(Parser)]
#[command(name = "sonicnav", about = "Sound-commanded navigation and reaching with PPO")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// `key = value` run config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Task used when no config file is given.
    #[arg(long, default_value = "turtlebot")]
    env: String,
    /// Default profile when no config file is given (desk or paper).
    #[arg(long, default_value = "desk")]
    profile: String,
    #[arg(long)]
    seed: Option<u64>,
    /// Extra `key=value` overrides applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        let text = match &self.config {
            Some(p) => std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
            None => format!("env = {}\nprofile = {}\n", self.env, self.profile),
        };
        let mut cfg = RunConfig::parse(&text)?;
        for o in &self.overrides {
            let (k, v) = o.split_once('=').context("overrides take the form key=value")?;
            cfg.set(k.trim(), v.trim())?;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Baseline {
    RandomWalk,
    ScriptedOracle,
}

#[derive(Subcommand)]
enum Command {
    /// Train a policy, then evaluate it on the test sounds.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
        /// Run episodes sequentially.
        #[arg(long)]
        serial: bool,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Start from pretrained vision weights.
        #[arg(long)]
        init: Option<PathBuf>,
    },
    /// Evaluate a checkpoint: 50 episodes per target on the test sounds.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and evaluate each ablation row.
    Ablate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        serial: bool,
        /// Only run rows whose names are listed (comma separated).
        #[arg(long)]
        rows: Option<String>,
        /// Print the rows and their overrides without running.
        #[arg(long)]
        list: bool,
    },
    /// Evaluate a non-learning policy under the evaluation protocol.
    Baseline {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_enum)]
        policy: Baseline,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write synthetic note recordings as WAV files.
    SynthData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "C4,D4,E4,F4")]
        notes: String,
        #[arg(long, default_value_t = 250)]
        per_note: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1.0)]
        duration: f64,
    },
    /// Pretrain the image trunk on visibility labels and save the weights.
    PretrainVision {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Roll out one episode and write a CSV trace and an SVG map.
    ExportTraj {
        /// Policy checkpoint; without it the scripted oracle drives.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value_t = 0)]
        episode_seed: u64,
        #[arg(long, default_value_t = 0)]
        target: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn source_of(cfg: &RunConfig) -> ConceptSource {
    if cfg.ablation.oracle_concept {
        ConceptSource::Oracle
    } else {
        ConceptSource::Learned
    }
}

fn eval_model(cfg: &RunConfig, model: &Model<f32>) -> Result<SuccessReport> {
    let (_, test) = load_sounds(cfg)?;
    let mut env = build_env(cfg, sound_bank(&test))?;
    let policy = EvalPolicy::Model {
        model,
        source: source_of(cfg),
    };
    Ok(evaluate(policy, env.as_mut(), eval_seed(cfg.seed))?)
}

fn write_report(dir: &Path, report: &SuccessReport) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("report.json"), serde_json::to_string_pretty(report)? + "\n")?;
    println!(
        "{} on {}: success {:.3} ({:?}), mean reward {:.3}",
        report.policy,
        report.env,
        report.success_rate,
        report.per_target.iter().map(|b| b.successes).collect::<Vec<_>>(),
        report.mean_episode_reward
    );
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Train {
            cfg,
            out,
            serial,
            resume,
            init,
        } => {
            let mut cfg = cfg.load()?;
            let resume = match (resume, init) {
                (Some(_), Some(_)) => bail!("--resume and --init are exclusive"),
                (Some(p), None) => Some(Checkpoint::load(&p)?),
                (None, Some(p)) => {
                    let mut ck = Checkpoint::load(&p)?;
                    if ck.update_index != 0 {
                        bail!("--init expects a pretraining checkpoint");
                    }
                    cfg.pretrain = false;
                    ck.config = cfg.clone();
                    Some(ck)
                }
                (None, None) => None,
            };
            let opts = TrainOptions {
                out_dir: Some(out.clone()),
                parallel: !serial,
                max_updates: None,
            };
            let outcome = train(&cfg, resume, &opts, |m| {
                println!(
                    "update {:>5} steps {:>8} reward {:>9.3} success {:.3} loss {:.4}",
                    m.update_index, m.steps, m.mean_episode_reward, m.success_fraction, m.total
                );
            })?;
            let report = eval_model(&cfg, &outcome.checkpoint.model)?;
            write_report(&out, &report)?;
        }
        Command::Eval { checkpoint, out } => {
            let ck = Checkpoint::load(&checkpoint)?;
            let report = eval_model(&ck.config, &ck.model)?;
            write_report(&out, &report)?;
        }
        Command::Ablate {
            cfg,
            out,
            serial,
            rows,
            list,
        } => {
            let cfg = cfg.load()?;
            let mut all = ablation_rows(cfg.env);
            if let Some(names) = rows {
                let wanted: Vec<&str> = names.split(',').map(str::trim).collect();
                for w in &wanted {
                    if !all.iter().any(|r| r.name == *w) {
                        bail!("unknown ablation row `{w}`");
                    }
                }
                all.retain(|r| wanted.contains(&r.name.as_str()));
            }
            if list {
                for r in &all {
                    let ov: Vec<String> = r.overrides.iter().map(|(k, v)| format!("{k}={v}")).collect();
                    println!("{:<11} {:<32} {}", r.table, r.name, ov.join(" "));
                }
                return Ok(());
            }
            for r in run_ablation(&cfg, &all, out.as_deref(), !serial)? {
                println!("{:<32} {:.3}", r.row.name, r.success_rate);
            }
        }
        Command::Baseline { cfg, policy, out } => {
            let cfg = cfg.load()?;
            let (_, test) = load_sounds(&cfg)?;
            let mut env = build_env(&cfg, sound_bank(&test))?;
            let policy = match policy {
                Baseline::RandomWalk => EvalPolicy::RandomWalk,
                Baseline::ScriptedOracle => EvalPolicy::ScriptedOracle,
            };
            let report = evaluate(policy, env.as_mut(), eval_seed(cfg.seed))?;
            write_report(&out, &report)?;
        }
        Command::SynthData {
            out,
            notes,
            per_note,
            seed,
            duration,
        } => {
            let notes: Vec<String> = notes.split(',').map(|s| s.trim().to_string()).collect();
            let files = synth_data(&out, &notes, per_note, seed, duration)?;
            println!("wrote {} files under {}", files.len(), out.display());
        }
        Command::PretrainVision { cfg, out } => {
            let cfg = cfg.load()?;
            if cfg.env != EnvKind::TurtleBot {
                bail!("vision pretraining applies to the turtlebot task only");
            }
            let mut model = Model::<f32>::new(cfg.effective_net(), cfg.seed)?;
            let report = pretrain_for(&cfg, &mut model)?;
            std::fs::create_dir_all(&out)?;
            std::fs::write(out.join("pretrain.json"), serde_json::to_string_pretty(&report)? + "\n")?;
            let adam = sonicnav::diff::AdamState::new(&model.params, cfg.ppo.lr);
            Checkpoint {
                config: cfg,
                model,
                adam,
                update_index: 0,
                steps_done: 0,
            }
            .save(&out.join("pretrained.bin"))?;
            println!(
                "L_o {:.4} -> {:.4}, L_t {:.4} -> {:.4}",
                report.l_o_before, report.l_o_after, report.l_t_before, report.l_t_after
            );
        }
        Command::ExportTraj {
            checkpoint,
            cfg,
            episode_seed,
            target,
            out,
        } => {
            let ck = checkpoint.map(|p| Checkpoint::load(&p)).transpose()?;
            let cfg = match &ck {
                Some(c) => c.config.clone(),
                None => cfg.load()?,
            };
            let (_, test) = load_sounds(&cfg)?;
            let model = ck.as_ref().map(|c| (&c.model, source_of(&cfg)));
            let ex = export_trajectory(&cfg, model, sound_bank(&test), episode_seed, target, Some(&out))?;
            println!("{} steps, success {}", ex.rows.len(), ex.success);
        }
    }
    Ok(())
}
