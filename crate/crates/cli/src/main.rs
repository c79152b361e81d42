//! `irof`: faithfulness scores for attribution heatmaps.

mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::BaselineKind;
use settings::{ConfigError, Settings};

const EXIT_CONFIG: u8 = 2;
const EXIT_BACKEND: u8 = 3;
const EXIT_DATA: u8 = 4;

#[derive(Parser)]
#[command(name = "irof", version, about = "Faithfulness scores for attribution heatmaps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Run {
    /// TOML file with the same keys as the long flags; flags win.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    settings: Settings,
}

#[derive(Subcommand)]
enum Command {
    /// Score each method's heatmaps with one degradation scheme.
    Evaluate(Run),
    /// Paired t-tests of each method against a random order, per evaluator.
    Sensitivity(Run),
    /// Compute and cache segment maps.
    Segment(Run),
    /// Write baseline heatmaps.
    Baseline {
        #[arg(value_enum)]
        kind: BaselineKind,
        #[command(flatten)]
        run: Run,
    },
}

impl Run {
    fn resolve(self) -> anyhow::Result<settings::Resolved> {
        let file = match &self.config {
            Some(path) => Settings::from_file(path)?,
            None => Settings::default(),
        };
        self.settings.over(file).resolve()
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<ConfigError>().is_some() {
            return EXIT_CONFIG;
        }
        if let Some(e) = cause.downcast_ref::<irof::Error>() {
            if e.is_backend() {
                return EXIT_BACKEND;
            }
            if e.is_config() {
                return EXIT_CONFIG;
            }
            return EXIT_DATA;
        }
    }
    EXIT_DATA
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Evaluate(run) => commands::run_evaluate(&run.resolve()?),
        Command::Sensitivity(run) => commands::run_sensitivity(&run.resolve()?),
        Command::Segment(run) => commands::run_segment(&run.resolve()?),
        Command::Baseline { kind, run } => commands::run_baseline(&run.resolve()?, kind).map(drop),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("IROF_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
