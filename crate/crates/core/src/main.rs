use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use trunc_sa::diagnostics::{write_drift_csv, DriftCondition};
use trunc_sa::scenarios::{check_conditions, run_scenario, write_outputs, ScenarioConfig, ScenarioKind};
use trunc_sa::Error;

#[derive(Parser)]
#[command(name = "trunc-sa", version, about = "Truncated stochastic approximation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write trajectories.csv, report.json and rates.csv.
    Run {
        scenario: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        reps: Option<u64>,
        #[arg(long)]
        horizon: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Probe comma-separated drift conditions (e.g. D1,H1,B1) on the configured field.
    Check {
        conditions: String,
        #[arg(long)]
        config: PathBuf,
        /// Write conditions.csv here instead of printing it.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List the available scenarios.
    List,
}

enum Failure {
    Checks,
    Config(Error),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::Domain(_) | Error::Unsupported(_) | Error::DimensionMismatch { .. } => {
                Failure::Config(e)
            }
            other => Failure::Runtime(other),
        }
    }
}

fn config_error(e: Error) -> Failure {
    Failure::Config(e)
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::List => {
            for k in ScenarioKind::ALL {
                println!("{:<14} {}", k.name(), k.description());
            }
            Ok(())
        }
        Command::Run {
            scenario,
            config,
            seed,
            reps,
            horizon,
            out,
        } => {
            let kind: ScenarioKind = scenario.parse().map_err(config_error)?;
            let mut cfg = match config {
                Some(path) => ScenarioConfig::load(&path).map_err(config_error)?,
                None => ScenarioConfig::new(kind),
            };
            if cfg.scenario != kind {
                return Err(Failure::Config(Error::Config(format!(
                    "config describes scenario {}, not {kind}",
                    cfg.scenario
                ))));
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(r) = reps {
                cfg.replications = r;
            }
            if let Some(h) = horizon {
                cfg.horizon = h;
            }
            cfg.validate().map_err(config_error)?;
            let outcome = run_scenario(&cfg)?;
            write_outputs(&outcome, &out)?;
            for w in &outcome.report.warnings {
                eprintln!("warning: {w}");
            }
            for c in &outcome.report.checks {
                let value = c.value.map_or("n/a".to_string(), |v| format!("{v:.6}"));
                println!("{} {} = {value}", if c.passed { "PASS" } else { "FAIL" }, c.name);
            }
            println!("outputs written to {}", out.display());
            if outcome.report.passed {
                Ok(())
            } else {
                Err(Failure::Checks)
            }
        }
        Command::Check { conditions, config, out } => {
            let conds = conditions
                .split(',')
                .filter(|s| !s.trim().is_empty())
                .map(|s| s.parse::<DriftCondition>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(config_error)?;
            if conds.is_empty() {
                return Err(Failure::Config(Error::Config("no conditions given".into())));
            }
            let cfg = ScenarioConfig::load(&config).map_err(config_error)?;
            let reports = check_conditions(&cfg, &conds)?;
            match out {
                Some(dir) => {
                    std::fs::create_dir_all(&dir).map_err(Error::from)?;
                    let file = std::fs::File::create(dir.join("conditions.csv")).map_err(Error::from)?;
                    write_drift_csv(&reports, file)?;
                }
                None => write_drift_csv(&reports, io::stdout().lock())?,
            }
            for r in &reports {
                eprintln!(
                    "{} {}: {} evaluated, {} violations ({} before t_min)",
                    if r.passed() { "PASS" } else { "FAIL" },
                    r.condition,
                    r.evaluated,
                    r.violations,
                    r.early_violations
                );
            }
            if reports.iter().all(|r| r.passed()) {
                Ok(())
            } else {
                Err(Failure::Checks)
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Checks) => ExitCode::from(1),
        Err(Failure::Config(e)) => {
            eprintln!("{e}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
