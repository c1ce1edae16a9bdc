use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use curriculum_teacher::curriculum::ingest::write_csv;
use curriculum_teacher::harness::{
    emit_policy_table, load_dataset, prepare, run, ExperimentConfig, ExperimentKind, RunLog,
};
use curriculum_teacher::{Error, Result};
use serde_json::json;

#[derive(Parser)]
#[command(name = "curriculum", about = "Teacher-guided curriculum training experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (flat `section.key = value` file). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override `seed.global`.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides `output.dir`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum BaselineKind {
    Batchwise,
    Curriculum,
}

#[derive(Subcommand)]
enum Command {
    /// Load the configured dataset and write it as CSV.
    Ingest(Common),
    /// Split, score and write the curriculum plan as JSON.
    Curriculum(Common),
    /// Train a teacher, then run a greedy student.
    Train(Common),
    /// Run a baseline with the same step budget as a teacher run.
    Baseline {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "batchwise")]
        kind: BaselineKind,
    },
    /// Apply a saved teacher to the configured dataset without updates.
    Transfer {
        #[command(flatten)]
        common: Common,
        /// Teacher checkpoint (overrides `experiment.checkpoint`).
        #[arg(long)]
        checkpoint: Option<String>,
    },
    /// Pair each greedy action with the action for a noisy copy of the state.
    Perturb {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<String>,
        #[arg(long)]
        sigma: Option<f64>,
    },
    /// Train and evaluate with the width forced to zero almost always.
    Constrain(Common),
    /// Train with the student learning rate divided by `experiment.lr_divisor`.
    SlowLr(Common),
    /// Convert a run log to the policy table CSV.
    Export {
        #[command(flatten)]
        common: Common,
        /// Run log (JSON lines).
        #[arg(long)]
        log: PathBuf,
    },
}

fn load(common: &Common) -> Result<(ExperimentConfig, PathBuf)> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::from_path(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seeds.global = s;
    }
    let out = common
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    cfg.output_dir = Some(out.display().to_string());
    cfg.validate()?;
    Ok((cfg, out))
}

fn experiment(common: &Common, kind: ExperimentKind, tweak: impl FnOnce(&mut ExperimentConfig)) -> Result<()> {
    let (mut cfg, out) = load(common)?;
    cfg.experiment.kind = kind;
    tweak(&mut cfg);
    let result = run(&cfg)?;
    result.write_to(&out)?;
    let s = &result.log.summary;
    println!(
        "{}",
        json!({
            "experiment": s.experiment,
            "best_test_acc": s.best_test_acc,
            "best_iter": s.best_iter,
            "config_hash": s.config_hash,
            "out": out.display().to_string(),
        })
    );
    Ok(())
}

fn write(out: &Path, name: &str, contents: &str) -> Result<()> {
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join(name), contents)?;
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest(c) => {
            let (cfg, out) = load(&c)?;
            let (dataset, names) = load_dataset(&cfg)?;
            let mut buf = Vec::new();
            write_csv(&mut buf, &dataset, &names)?;
            write(&out, "dataset.csv", &String::from_utf8(buf).expect("csv is utf-8"))?;
            println!(
                "{}",
                json!({"rows": dataset.len(), "features": dataset.n_features(), "classes": dataset.n_classes})
            );
            Ok(())
        }
        Command::Curriculum(c) => {
            let (cfg, out) = load(&c)?;
            let data = prepare(&cfg)?;
            write(&out, "plan.json", &data.plan.to_json()?)?;
            println!("{}", json!({"n_train": data.train.len(), "n_batches": data.plan.n_batches}));
            Ok(())
        }
        Command::Train(c) => experiment(&c, ExperimentKind::Train, |_| {}),
        Command::Baseline { common, kind } => {
            let k = match kind {
                BaselineKind::Batchwise => ExperimentKind::BaselineBatchwise,
                BaselineKind::Curriculum => ExperimentKind::BaselineCurriculum,
            };
            experiment(&common, k, |_| {})
        }
        Command::Transfer { common, checkpoint } => experiment(&common, ExperimentKind::Transfer, |cfg| {
            if checkpoint.is_some() {
                cfg.experiment.checkpoint = checkpoint;
            }
        }),
        Command::Perturb {
            common,
            checkpoint,
            sigma,
        } => experiment(&common, ExperimentKind::Perturb, |cfg| {
            if checkpoint.is_some() {
                cfg.experiment.checkpoint = checkpoint;
            }
            if let Some(s) = sigma {
                cfg.experiment.perturb_sigma = s;
            }
        }),
        Command::Constrain(c) => experiment(&c, ExperimentKind::Constrain, |_| {}),
        Command::SlowLr(c) => experiment(&c, ExperimentKind::SlowLr, |_| {}),
        Command::Export { common, log } => {
            let out = common.out.unwrap_or_else(|| PathBuf::from("out"));
            let runlog = RunLog::from_jsonl(&std::fs::read_to_string(&log)?)?;
            write(&out, "policy.csv", &emit_policy_table(&runlog.records)?)?;
            println!("{}", json!({"rows": runlog.records.len()}));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_record(&e));
            ExitCode::FAILURE
        }
    }
}

fn error_record(e: &Error) -> serde_json::Value {
    let mut v = json!({"error": e.kind(), "message": e.to_string()});
    if let Error::Transfer { checkpoint, dataset } = e {
        v["checkpoint_state_dim"] = json!(checkpoint);
        v["dataset_state_dim"] = json!(dataset);
    }
    v
}
