use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fbopt_cli::experiments::run_experiment;
use fbopt_cli::schema::{ExperimentConfig, ExperimentKind};
use fbopt_cli::CliError;

#[derive(Parser)]
#[command(name = "fbopt", about = "Simulation and certification toolkit for feedback optimization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// JSON experiment config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Instance seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Gain multipliers (repeatable), relative to the family's bound.
    #[arg(long = "eps-mult")]
    eps_mult: Vec<f64>,
    /// Output directory override.
    #[arg(long)]
    out: Option<String>,
    /// Use the literal textbook sign layout of the saddle-point law.
    #[arg(long = "paper-literal-signs")]
    paper_literal_signs: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run a figure experiment from a config file.
    Run {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Compute certificate constants and gain bounds.
    Bounds {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Bisect empirical instability thresholds across seeds.
    Threshold {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Run the property suite.
    Suite {
        #[command(flatten)]
        common: CommonArgs,
    },
}

fn load_config(
    common: &CommonArgs,
    default_kind: Option<ExperimentKind>,
) -> Result<ExperimentConfig, CliError> {
    let mut config = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            serde_json::from_str::<ExperimentConfig>(&text)?
        }
        None => {
            let kind = default_kind.ok_or_else(|| {
                CliError::Config(String::from("the run subcommand requires --config"))
            })?;
            ExperimentConfig::new(kind)
        }
    };
    if let Some(kind) = default_kind {
        if common.config.is_none() {
            config.experiment = kind;
        }
    }
    if let Some(seed) = common.seed {
        config.seed = Some(seed);
    }
    if !common.eps_mult.is_empty() {
        config.eps_multipliers = common.eps_mult.clone();
    }
    if let Some(out) = &common.out {
        config.output_dir = out.clone();
    }
    if common.paper_literal_signs {
        config.literal_saddle_signs = true;
    }
    config.validate()?;
    Ok(config)
}

fn execute(cli: &Cli) -> Result<i32, CliError> {
    let base_dir = Path::new(".");
    let (common, default_kind) = match &cli.command {
        Command::Run { common } => (common, None),
        Command::Bounds { common } => (common, Some(ExperimentKind::BoundsReport)),
        Command::Threshold { common } => (common, Some(ExperimentKind::ThresholdSweep)),
        Command::Suite { common } => (common, Some(ExperimentKind::PropertySuite)),
    };
    let config = load_config(common, default_kind)?;
    let outcome = run_experiment(&config, base_dir)?;
    println!("{}", outcome.summary_path.display());
    if outcome.suite_failed {
        return Ok(2);
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
