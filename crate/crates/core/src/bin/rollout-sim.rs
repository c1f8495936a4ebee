use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use rollout_core::study::{run_study, ExperimentConfig, StudyKind};
use rollout_core::Error;

#[derive(Parser)]
#[command(name = "rollout-sim", version, about = "Roll-out experiment simulations under network interference")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Model selection study: LOPO against the baseline procedures.
    Select(RunArgs),
    /// Probability that the TTE is identified, per roll-out period and edge probability.
    Identify(RunArgs),
    /// Variance of the TTE estimate with and without a roll-out.
    Variance(RunArgs),
    /// Model selection across a grid of graph densities.
    Sparsity(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON config; defaults are used for every field it leaves out.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base seed, overriding the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, overriding the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Use N = 1000 and 500 replications for selection studies.
    #[arg(long)]
    paper_scale: bool,
    /// Number of units, overriding the config.
    #[arg(long)]
    n: Option<usize>,
    /// Number of replications, overriding the config.
    #[arg(long)]
    reps: Option<usize>,
}

fn run(kind: StudyKind, args: RunArgs) -> Result<PathBuf, Error> {
    let mut config = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::from_json(&format!(r#"{{"study": "{}"}}"#, kind.name()))?,
    };
    if config.study != kind {
        return Err(Error::Config(format!(
            "config describes a {} study but the {} command was used",
            config.study.name(),
            kind.name()
        )));
    }
    config.seed = args.seed.or(config.seed);
    config.out = args.out.or(config.out);
    config.n = args.n.or(config.n);
    config.replications = args.reps.or(config.replications);
    config.paper_scale |= args.paper_scale;
    let resolved = config.resolve()?;
    let output = run_study(&resolved)?;
    output.write(&resolved.out)?;
    Ok(resolved.out)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, args) = match cli.command {
        Command::Select(a) => (StudyKind::Selection, a),
        Command::Identify(a) => (StudyKind::Identification, a),
        Command::Variance(a) => (StudyKind::Variance, a),
        Command::Sparsity(a) => (StudyKind::Sparsity, a),
    };
    match run(kind, args) {
        Ok(out) => {
            println!("wrote {} results to {}", kind.name(), out.display());
            ExitCode::SUCCESS
        }
        Err(err @ Error::Config(_)) => {
            eprintln!("rollout-sim: {err}");
            ExitCode::from(2)
        }
        Err(err) => {
            eprintln!("rollout-sim: {err}");
            ExitCode::FAILURE
        }
    }
}
