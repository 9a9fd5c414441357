use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hjb_pi_cli::{audit, generalization_eval, precompute_reference, presets, run_scenario, CliError, GridSpec, RunOptions, ScenarioConfig};

/// Grid-based policy iteration scenarios.
///
/// Relative output and cache paths resolve against $HJBPI_OUTPUT_ROOT
/// (default: the working directory).
#[derive(Parser)]
#[command(name = "hjbpi", version)]
struct Cli {
    /// Parallel assembly, reference solves and rollouts (last digits may differ).
    #[arg(long, global = true)]
    parallel: bool,
    /// No progress output.
    #[arg(long, short, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario config (or preset A, B, C) and write its artifacts.
    Solve { config: String },
    /// Score a run's final surrogate on a grid such as "1 1 10".
    Generalize { run_dir: PathBuf, grid: String },
    /// Audit the final policy and domain of a run; writes audit.json.
    Audit { run_dir: PathBuf },
    /// Precompute the reference cache for a config.
    Reference { config: String },
    /// Print a preset config.
    Preset { name: String },
}

fn load(arg: &str) -> Result<ScenarioConfig, CliError> {
    match presets::get(arg) {
        Some(text) if !std::path::Path::new(arg).exists() => ScenarioConfig::parse(text),
        _ => ScenarioConfig::from_file(std::path::Path::new(arg)),
    }
}

fn exec(cli: Cli) -> Result<i32, CliError> {
    let mut opts = RunOptions::from_env(cli.parallel);
    opts.quiet = cli.quiet;
    match cli.command {
        Command::Solve { config } => {
            let cfg = load(&config)?;
            let summary = run_scenario(&cfg, &opts)?;
            println!("run directory: {}", summary.run_dir.display());
            println!("stop: {}", summary.result.stop.as_str());
            if let Some(e) = summary.e_l2().last().copied().flatten() {
                println!("final E_l2: {e:.6e}");
            }
            Ok(summary.exit_code())
        }
        Command::Generalize { run_dir, grid } => {
            let spec = GridSpec::parse(&grid).map_err(CliError::Config)?;
            let e = generalization_eval(&run_dir, &spec, &opts)?;
            println!("E_l2 = {e:.6e}");
            Ok(0)
        }
        Command::Audit { run_dir } => {
            let report = audit(&run_dir, &opts)?;
            println!("{:#}", report.to_json());
            Ok(0)
        }
        Command::Reference { config } => {
            let cfg = load(&config)?;
            let n = precompute_reference(&cfg, &opts)?;
            println!("reference cache covers {n} points");
            Ok(0)
        }
        Command::Preset { name } => {
            let text = presets::get(&name).ok_or_else(|| CliError::Config(format!("no preset `{name}`")))?;
            print!("{text}");
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    match exec(Cli::parse()) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
