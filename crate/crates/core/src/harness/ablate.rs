use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    build_env, evaluate, load_sounds, sound_bank, train, EvalPolicy, HarnessError, RunConfig, SuccessReport,
    TrainOptions,
};
use crate::model::EnvKind;
use crate::ppo::ConceptSource;

/// One ablation configuration: a display name and the config overrides it applies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub table: String,
    pub name: String,
    pub overrides: Vec<(String, String)>,
    /// Evaluated without training (random-walk baseline).
    pub untrained: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationResult {
    pub row: AblationRow,
    pub success_rate: f64,
    pub report: SuccessReport,
}

fn row(table: &str, name: &str, overrides: &[(&str, &str)]) -> AblationRow {
    AblationRow {
        table: table.into(),
        name: name.into(),
        overrides: overrides.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        untrained: false,
    }
}

/// Auxiliary-loss rows followed by the oracle, no-attention and random-walk
/// comparison rows for the given task.
pub fn ablation_rows(env: EnvKind) -> Vec<AblationRow> {
    let mut rows = match env {
        EnvKind::TurtleBot => vec![
            row("aux", "Attention + L_o + L_t + L_s", &[]),
            row("aux", "Attention + L_o + L_t", &[("use_l_s", "false")]),
            row("aux", "Attention + L_t + L_s", &[("use_l_o", "false")]),
            row("aux", "Attention + L_o + L_s", &[("use_l_t", "false")]),
            row("aux", "Attention + L_s", &[("use_l_o", "false"), ("use_l_t", "false")]),
            row(
                "aux",
                "Attention",
                &[("use_l_s", "false"), ("use_l_o", "false"), ("use_l_t", "false")],
            ),
            row("comparison", "Oracle", &[("oracle_concept", "true")]),
            row("comparison", "No attention + L_o + L_t + L_s", &[("attention", "false")]),
        ],
        EnvKind::Kuka => vec![
            row("aux", "Attention + L_s", &[]),
            row("aux", "Attention", &[("use_l_s", "false")]),
            row("comparison", "Oracle", &[("oracle_concept", "true")]),
            row("comparison", "No attention + L_s", &[("attention", "false")]),
        ],
    };
    let mut rw = row("comparison", "Random walk", &[]);
    rw.untrained = true;
    rows.push(rw);
    rows
}

impl AblationRow {
    pub fn apply(&self, base: &RunConfig) -> Result<RunConfig, HarnessError> {
        let mut cfg = base.clone();
        for (k, v) in &self.overrides {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Trains and evaluates each row; results land in `<out>/<index>/` and
/// `<out>/ablation.json`.
pub fn run_ablation(
    base: &RunConfig,
    rows: &[AblationRow],
    out: Option<&Path>,
    parallel: bool,
) -> Result<Vec<AblationResult>, HarnessError> {
    let mut results = Vec::new();
    for (i, r) in rows.iter().enumerate() {
        let cfg = r.apply(base)?;
        let (_, test) = load_sounds(&cfg)?;
        let mut env = build_env(&cfg, sound_bank(&test))?;
        let eval_seed = super::eval_seed(cfg.seed);
        let report = if r.untrained {
            evaluate(EvalPolicy::RandomWalk, env.as_mut(), eval_seed)?
        } else {
            let opts = TrainOptions {
                out_dir: out.map(|o| o.join(format!("row{i:02}"))),
                parallel,
                max_updates: None,
            };
            let outcome = train(&cfg, None, &opts, |_| {})?;
            let source = if cfg.ablation.oracle_concept {
                ConceptSource::Oracle
            } else {
                ConceptSource::Learned
            };
            let policy = EvalPolicy::Model {
                model: &outcome.checkpoint.model,
                source,
            };
            evaluate(policy, env.as_mut(), eval_seed)?
        };
        results.push(AblationResult {
            row: r.clone(),
            success_rate: report.success_rate,
            report,
        });
        if let Some(o) = out {
            std::fs::create_dir_all(o)?;
            super::write_json(&o.join("ablation.json"), &results)?;
        }
    }
    Ok(results)
}
