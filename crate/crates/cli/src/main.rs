//! `covlab`: runs named scenarios from TOML configs and writes reports.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use covlab_core::scenario::{self, OutputFormat, ScenarioConfig, ScenarioName};
use covlab_core::Error;

#[derive(Parser)]
#[command(name = "covlab", version, about = "Scenario runner for perturbed quantum dynamical semigroups")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and report every declared check.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `output.format` from the config.
        #[arg(long, value_parser = parse_format)]
        format: Option<OutputFormat>,
        /// Overrides `output.path` from the config; stdout when neither is set.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rerun a scenario on successively refined grids and tabulate observed orders.
    Converge {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        levels: usize,
        #[arg(long, value_parser = parse_format)]
        format: Option<OutputFormat>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List the available scenarios and their checks.
    ListScenarios,
}

fn parse_format(s: &str) -> Result<OutputFormat, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

const EXIT_CHECK_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_CAPACITY: u8 = 3;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Capacity(_) | Error::TermCap { .. } => EXIT_CAPACITY,
        Error::Config(_) | Error::Alignment { .. } | Error::Domain(_) | Error::SpecMismatch(_) | Error::Io(_) => EXIT_CONFIG,
        _ => EXIT_CHECK_FAILURE,
    }
}

fn write_output(text: &str, out: Option<&Path>) -> Result<(), Error> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| Error::Config(format!("{}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn output_target(cli: Option<PathBuf>, cfg: &ScenarioConfig) -> Option<PathBuf> {
    cli.or_else(|| cfg.output.path.as_ref().map(PathBuf::from))
}

fn run(config: &Path, format: Option<OutputFormat>, out: Option<PathBuf>) -> Result<u8, Error> {
    let cfg = ScenarioConfig::from_path(config)?;
    let report = scenario::run_scenario(&cfg)?;
    let format = format.unwrap_or(cfg.output.format);
    write_output(&report.render(format), output_target(out, &cfg).as_deref())?;
    for c in report.checks.iter().filter(|c| !c.passed) {
        eprintln!("check failed: {} = {:?} ({})", c.name, c.value, c.criterion.describe());
    }
    Ok(if report.passed { 0 } else { EXIT_CHECK_FAILURE })
}

fn converge(config: &Path, levels: usize, format: Option<OutputFormat>, out: Option<PathBuf>) -> Result<u8, Error> {
    let cfg = ScenarioConfig::from_path(config)?;
    let table = scenario::convergence_report(&cfg, levels)?;
    let format = format.unwrap_or(cfg.output.format);
    write_output(&table.render(format), output_target(out, &cfg).as_deref())?;
    for w in &table.warnings {
        eprintln!("warning: {w}");
    }
    Ok(if table.is_complete() { 0 } else { EXIT_CAPACITY })
}

fn list_scenarios() {
    for name in ScenarioName::ALL {
        println!("{name}");
        println!("    {}", name.summary());
        let names: Vec<&str> = scenario::declared_checks(name).iter().map(|c| c.name).collect();
        println!("    checks: {}", names.join(", "));
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, format, out } => run(&config, format, out),
        Command::Converge { config, levels, format, out } => converge(&config, levels, format, out),
        Command::ListScenarios => {
            list_scenarios();
            Ok(0)
        }
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
