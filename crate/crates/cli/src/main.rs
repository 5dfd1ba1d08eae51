use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use gier_cli::{
    cmd_ablate, cmd_evaluate, cmd_record, cmd_run, cmd_significance, cmd_validate,
    ExperimentConfig, Overrides,
};
use gier_core::backend::BackendKind;
use gier_core::TaskKind;

#[derive(Parser)]
#[command(name = "gier", version, about = "Gap-driven iterative enhancement experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run both baselines and the GIER loop for every instance.
    Run(RunArgs),
    /// Compute per-stage metrics for a run store.
    Evaluate {
        #[arg(long)]
        store: PathBuf,
    },
    /// Paired Wilcoxon test and bootstrap CI between two stages.
    Significance {
        #[arg(long)]
        store: PathBuf,
        /// Stage before (e.g. baseline_gaps).
        #[arg(long)]
        a: String,
        /// Stage after (e.g. final).
        #[arg(long)]
        b: String,
        #[arg(long)]
        allow_partial: bool,
    },
    /// Run the base config and every configured ablation.
    Ablate(RunArgs),
    /// Export a store's cached completions as a replay transcript.
    Record {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        transcript: PathBuf,
    },
    /// Check a config, or a corpus and gap file.
    Validate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        task: Option<TaskKind>,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        gaps: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Http,
    Replay,
    Scripted,
}

impl From<BackendArg> for BackendKind {
    fn from(b: BackendArg) -> Self {
        match b {
            BackendArg::Http => BackendKind::Http,
            BackendArg::Replay => BackendKind::Replay,
            BackendArg::Scripted => BackendKind::Scripted,
        }
    }
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    task: Option<TaskKind>,
    #[arg(long, value_enum)]
    backend: Option<BackendArg>,
    #[arg(long)]
    transcript: Option<PathBuf>,
    #[arg(long)]
    parallel: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Directory holding one run store per run id.
    #[arg(long)]
    out: PathBuf,
}

impl RunArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        cfg.apply(&Overrides {
            task: self.task,
            backend: self.backend.map(Into::into),
            transcript: self.transcript.clone(),
            parallel: self.parallel,
            seed: self.seed,
        });
        Ok(cfg)
    }
}

fn print<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn dispatch(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run(args) => {
            let summary = cmd_run(&args.load()?, &args.out)?;
            print(&summary)?;
            Ok(summary.success())
        }
        Command::Evaluate { store } => {
            print(&cmd_evaluate(&store)?)?;
            Ok(true)
        }
        Command::Significance {
            store,
            a,
            b,
            allow_partial,
        } => {
            let out = cmd_significance(&store, &a, &b, allow_partial)?;
            print!("{}", std::fs::read_to_string(&out.markdown)?);
            Ok(true)
        }
        Command::Ablate(args) => {
            let out = cmd_ablate(&args.load()?, &args.out)?;
            print!("{}", std::fs::read_to_string(&out.markdown)?);
            Ok(out.base.success() && out.variants.iter().all(|v| v.success()))
        }
        Command::Record { store, transcript } => {
            let n = cmd_record(&store, &transcript)?;
            println!("{n} completions written to {}", transcript.display());
            Ok(true)
        }
        Command::Validate {
            config,
            task,
            corpus,
            gaps,
        } => {
            let cfg = config.as_deref().map(ExperimentConfig::load).transpose()?;
            let report = cmd_validate(cfg.as_ref(), corpus.as_deref(), gaps.as_deref(), task)?;
            print(&report)?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match dispatch(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
