//! Argument parsing and dispatch for the `pws` binary.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use pws_core::gateway::CACHE_DIR_ENV;
use pws_core::pipeline::{
    self, compare, exit_code, read_metrics, run_pipeline, RunConfig, RunOptions, Stage, StageStatus,
};
use pws_core::{fixtures, Error, Result};

use crate::service::{self, AppState};

#[derive(Debug, Parser)]
#[command(name = "pws", version, about = "Prompted weak supervision pipeline")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// Run configuration (TOML).
    #[arg(long, global = true, default_value = "run.toml")]
    pub config: PathBuf,
    /// Response and calibration cache directory.
    #[arg(long, global = true, env = CACHE_DIR_ENV)]
    pub cache_dir: Option<PathBuf>,
    /// End-model seeds, comma separated; overrides the config.
    #[arg(long, global = true, value_delimiter = ',')]
    pub seed_list: Option<Vec<u64>>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check the config, dataset and labeler suite without querying.
    Validate,
    /// Estimate calibration weights.
    Calibrate,
    /// Run the pipeline through the query stage.
    Query,
    /// Run the pipeline through the label-model stage.
    Label,
    /// Run the pipeline through end-model training.
    Train,
    /// Run the pipeline through evaluation.
    Eval,
    /// Run the pipeline through the analysis report.
    Report,
    /// Run every stage, resuming completed ones.
    Run,
    /// Run a zero-shot and a prompted config and tabulate both.
    Compare {
        #[arg(long)]
        zero_shot: PathBuf,
        #[arg(long)]
        prompted: PathBuf,
    },
    /// Serve the console API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        /// Directory of static console assets.
        #[arg(long)]
        static_dir: Option<PathBuf>,
    },
    /// Write the shipped labeler suites and the spam fixture.
    Fixtures {
        #[arg(long)]
        out: PathBuf,
    },
}

impl Command {
    fn until(&self) -> Option<Option<Stage>> {
        Some(match self {
            Command::Calibrate => Some(Stage::Calibrate),
            Command::Query => Some(Stage::Query),
            Command::Label => Some(Stage::Label),
            Command::Train => Some(Stage::Train),
            Command::Eval => Some(Stage::Eval),
            Command::Report => Some(Stage::Report),
            Command::Run => None,
            _ => return None,
        })
    }
}

impl Global {
    fn options(&self, until: Option<Stage>) -> RunOptions {
        RunOptions {
            cache_dir: self.cache_dir.clone(),
            seeds: self.seed_list.clone(),
            until,
        }
    }
}

/// Runs the parsed command and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    let g = &cli.global;
    if let Some(until) = cli.command.until() {
        let cfg = RunConfig::load(&g.config)?;
        let outcome = run_pipeline(&cfg, &g.options(until))?;
        if outcome.up_to_date() {
            println!("up to date: {}", outcome.run_dir.display());
        } else {
            let names: Vec<&str> = outcome.executed.iter().map(|s| s.name()).collect();
            println!("ran {} in {}", names.join(", "), outcome.run_dir.display());
        }
        if outcome.record.status(Stage::Eval) == StageStatus::Done {
            let m = read_metrics(&outcome.run_dir)?;
            let s = &m.end_model.summary;
            println!(
                "{}: accuracy {}  f1 {}",
                m.split,
                s.accuracy.format_pct(),
                s.f1.format_pct()
            );
        }
        return Ok(());
    }
    match &cli.command {
        Command::Validate => {
            let cfg = RunConfig::load(&g.config)?;
            let inputs = pipeline::validate(&g.options(None).apply(&cfg))?;
            println!(
                "ok: {} labelers, {} classes, run {}",
                inputs.suite.lfs.len(),
                inputs.dataset.class_space.k(),
                cfg.run_id()?
            );
        }
        Command::Compare {
            zero_shot,
            prompted,
        } => {
            let zs = RunConfig::load(zero_shot)?;
            let pws = RunConfig::load(prompted)?;
            print!("{}", compare(&zs, &pws, &g.options(None))?.render());
        }
        Command::Serve { addr, static_dir } => {
            let cfg = g.options(None).apply(&RunConfig::load(&g.config)?);
            cfg.validate()?;
            let state = Arc::new(AppState::from_config(&cfg)?);
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(service::serve(state, *addr, static_dir.clone()))
                .map_err(|e| match e.kind() {
                    std::io::ErrorKind::AddrInUse => {
                        Error::Config(format!("address {addr} is already in use"))
                    }
                    _ => e.into(),
                })?;
        }
        Command::Fixtures { out } => {
            fixtures::write_suites(out.join("suites"))?;
            fixtures::spam_synth::write(out.join("spam_synth"))?;
            println!("wrote fixtures to {}", out.display());
        }
        _ => unreachable!("stage commands are handled above"),
    }
    Ok(())
}
