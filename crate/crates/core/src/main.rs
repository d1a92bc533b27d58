use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use riskforge::config::validate_config;
use riskforge::pipeline::{run_pipeline, run_stage, Stage, StageOutcome};

const COMMANDS: [&str; 11] =
    ["synth", "cohort", "features", "impute", "text", "select", "fit", "evaluate", "report", "all", "check"];

/// Interpretable mortality-risk pipeline.
///
/// Each stage reads upstream artifacts from the run directory and writes its
/// own outputs there. `all` runs every stage after `synth`; `check` validates
/// the configuration and prints it with defaults filled in.
#[derive(Debug, Parser)]
#[command(name = "riskforge", version)]
struct Cli {
    /// Stage to run
    #[arg(value_parser = COMMANDS)]
    command: String,
    /// Pipeline configuration (TOML)
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to `output.dir` (`inputs.dir` for synth)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Root seed, overriding the configured one
    #[arg(long)]
    seed: Option<u64>,
}

fn print_outcome(o: &StageOutcome) {
    println!("{}: {} artifact(s) in {}", o.stage, o.artifacts.len(), o.dir.display());
}

fn run(cli: &Cli) -> Result<(), Box<dyn std::error::Error>> {
    let cfg = validate_config(&cli.config, cli.seed)?;
    let out = cli.out.as_deref();
    match cli.command.as_str() {
        "check" => print!("{}", cfg.echo_text()),
        "all" => run_pipeline(&cfg, out)?.iter().for_each(print_outcome),
        stage => print_outcome(&run_stage(stage.parse::<Stage>()?, &cfg, out)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
