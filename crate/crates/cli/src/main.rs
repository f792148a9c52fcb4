use clap::{Args, Parser, Subcommand};
use ether_core::runner::{self, RunConfig};
use ether_core::{EtherError, Result};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "ether", version, about = "Hindsight relabelling with a learned referential game")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train an agent; writes the config copy, metric log and checkpoints to --out.
    Train(Common),
    /// Greedy success ratio of a run's checkpoint, next to the random-policy baseline.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Checkpoint step; defaults to the latest.
        #[arg(long)]
        step: Option<u64>,
    },
    /// Train a speaker and listener alone on one-hot attribute stimuli.
    Refgame(Common),
    /// Render a run's metric log to SVG.
    Plot {
        #[command(flatten)]
        common: Common,
        /// Metric to draw; repeatable. Defaults to every metric.
        #[arg(long = "metric")]
        metrics: Vec<String>,
        /// Output file; defaults to metrics.svg beside the log.
        #[arg(long)]
        svg: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// TOML configuration; unknown keys are rejected.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one configuration value, e.g. `trainer.n_actors=8`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory (train, refgame: created; eval, plot: read).
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn overrides(&self) -> Vec<String> {
        let mut o = self.overrides.clone();
        if let Some(seed) = self.seed {
            o.push(format!("seed={seed}"));
        }
        o
    }

    fn config(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::load(self.config.as_deref(), &self.overrides())?;
        if let Some(out) = &self.out {
            cfg.out_dir = out.clone();
        }
        Ok(cfg)
    }

    fn existing_run(&self) -> Result<PathBuf> {
        self.out
            .clone()
            .ok_or_else(|| EtherError::Usage("--out must name an existing run directory".into()))
    }
}

fn print_json(value: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(common) => {
            let cfg = common.config()?;
            let summary = runner::train(&cfg, &cfg.out_dir)?;
            print_json(&runner::SummaryFile::from(&summary))
        }
        Command::Eval { common, step } => {
            let dir = common.existing_run()?;
            if common.config.is_some() {
                return Err(EtherError::Usage("eval reads the run's own config; use --set to change it".into()));
            }
            print_json(&runner::eval(&dir, step, &common.overrides())?)
        }
        Command::Refgame(common) => {
            let cfg = common.config()?;
            print_json(&runner::refgame(&cfg, &cfg.out_dir)?)
        }
        Command::Plot { common, metrics, svg } => {
            let dir = common.existing_run()?;
            let path = runner::plot(&dir, svg.as_deref(), &metrics)?;
            println!("{}", path.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::FAILURE
        }
    }
}
