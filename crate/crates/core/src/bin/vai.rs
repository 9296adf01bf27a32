use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use vai_core::harness::{ExperimentConfig, HeatmapMode, Pipeline, Stage};

#[derive(Parser)]
#[command(name = "vai", version, about = "Vulnerable agent identification experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides experiment.seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides experiment.out_dir.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train the cooperative victim.
    TrainVictim(Common),
    /// Collect the cooperative corpus and fit Q and the robust value.
    FitValue(Common),
    /// Select attack sets with every configured method.
    Select(Common),
    /// Train adversaries on the saved sets and evaluate them.
    Attack(Common),
    /// Summarize attacked returns against Random and the cooperative baseline.
    Evaluate(Common),
    /// Correlate predicted drops with realized attacked returns.
    Correlate(Common),
    /// Export a vulnerability heatmap for the scenario of the master seed.
    Heatmap {
        #[command(flatten)]
        common: Common,
        /// per-agent-eps or single-adversary-xi
        #[arg(long, default_value = "per-agent-eps")]
        mode: String,
    },
    /// Run every stage in order, skipping completed ones.
    Pipeline(Common),
}

fn open(c: &Common) -> vai_core::Result<Pipeline> {
    let mut cfg = ExperimentConfig::load(&c.config)?;
    if let Some(s) = c.seed {
        cfg.experiment.seed = s;
    }
    Pipeline::new(cfg, c.out.clone())
}

fn stage(c: &Common, stage: Stage) -> vai_core::Result<()> {
    let p = open(c)?;
    let ran = p.run_stage(stage)?;
    println!("{}: {} ({})", stage.name(), if ran { "done" } else { "already complete" }, p.out_dir().display());
    if stage == Stage::Correlate {
        if let Some(r) = p.ledger().rows()?.iter().rev().find(|r| r.experiment_id == p.experiment_id() && r.metric == "pearson_r") {
            println!("pearson r = {}", r.value);
        }
    }
    Ok(())
}

fn run(cli: Cli) -> vai_core::Result<()> {
    match cli.command {
        Command::TrainVictim(c) => stage(&c, Stage::TrainVictim),
        Command::FitValue(c) => stage(&c, Stage::FitValue),
        Command::Select(c) => stage(&c, Stage::Select),
        Command::Attack(c) => stage(&c, Stage::Attack),
        Command::Evaluate(c) => stage(&c, Stage::Evaluate),
        Command::Correlate(c) => stage(&c, Stage::Correlate),
        Command::Heatmap { common, mode } => {
            let p = open(&common)?;
            let (path, _) = p.heatmap(HeatmapMode::parse(&mode)?, p.config().experiment.seed)?;
            println!("heatmap: {}", path.display());
            Ok(())
        }
        Command::Pipeline(c) => {
            let p = open(&c)?;
            p.run_all()?;
            println!("pipeline complete: {}", p.ledger().path().display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
