use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use spinphase::cli::report::{write_atomic, write_report};
use spinphase::cli::runner::{run_scenario, trajectory_csv, ResultRecord};
use spinphase::cli::scenario::{parse_scenario, Analysis, Scenario};
use spinphase::{ConfigCode, Error};

/// Spin evolution scenarios: propagators, cyclic families and phase
/// decompositions, driven by TOML scenario files.
#[derive(Parser)]
#[command(name = "spinphase", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Override the scenario's trajectory grid.
    #[arg(long, global = true)]
    steps: Option<usize>,
    /// Override the scenario's reference-propagator grid.
    #[arg(long, global = true)]
    oracle_steps: Option<usize>,
    /// Override the seed of the randomized verification draws.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the analysis named by the scenario and write its report.
    Run { scenario: PathBuf },
    /// Run the invariant battery on the scenario's spin and program.
    Verify { scenario: PathBuf },
    /// Integrate the seeding trajectory and write it as CSV.
    DumpTrajectory { scenario: PathBuf, csv: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(code) => code,
        Err(err) => {
            let payload = serde_json::json!({
                "error": { "code": err.code(), "message": err.to_string() }
            });
            println!("{payload}");
            if err.code() == "not_applicable" {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn execute(cli: &Cli) -> spinphase::Result<ExitCode> {
    match &cli.command {
        Command::Run { scenario } => {
            let (sc, warnings) = load(scenario, cli)?;
            for w in &warnings {
                eprintln!("warning: {w}");
            }
            let report = run_scenario(&sc, warnings)?;
            write_report(Path::new(&sc.output.report), &report)?;
            if let Some(csv) = &sc.output.trajectory_csv {
                write_atomic(Path::new(csv), &trajectory_csv(&sc)?)?;
            }
            println!("wrote {}", sc.output.report);
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify { scenario } => {
            let (mut sc, warnings) = load(scenario, cli)?;
            for w in &warnings {
                eprintln!("warning: {w}");
            }
            sc.analysis = Analysis::VerifySuite;
            let report = run_scenario(&sc, warnings)?;
            write_report(Path::new(&sc.output.report), &report)?;
            let failed: Vec<&str> = report
                .results
                .iter()
                .filter_map(|r| match r {
                    ResultRecord::Check(c) if !c.passed => Some(c.check.as_str()),
                    _ => None,
                })
                .collect();
            if failed.is_empty() {
                println!(
                    "verified: {} checks passed; wrote {}",
                    report.results.len(),
                    sc.output.report
                );
                Ok(ExitCode::SUCCESS)
            } else {
                let payload = serde_json::json!({
                    "error": {
                        "code": "verify_failed",
                        "message": format!(
                            "{} of {} checks failed: {}",
                            failed.len(),
                            report.results.len(),
                            failed.join(", ")
                        ),
                    }
                });
                println!("{payload}");
                Ok(ExitCode::from(1))
            }
        }
        Command::DumpTrajectory { scenario, csv } => {
            let (sc, warnings) = load(scenario, cli)?;
            for w in &warnings {
                eprintln!("warning: {w}");
            }
            write_atomic(csv, &trajectory_csv(&sc)?)?;
            println!("wrote {}", csv.display());
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn load(path: &Path, cli: &Cli) -> spinphase::Result<(Scenario, Vec<String>)> {
    let text = std::fs::read_to_string(path)?;
    let (mut sc, warnings) = parse_scenario(&text)?;
    if let Some(steps) = cli.steps {
        if steps < 8 {
            return Err(Error::Config {
                code: ConfigCode::BadValue,
                message: format!("--steps must be at least 8, got {steps}"),
            });
        }
        sc.scenario.steps = Some(steps);
    }
    if let Some(os) = cli.oracle_steps {
        if os < 2 {
            return Err(Error::Config {
                code: ConfigCode::BadValue,
                message: format!("--oracle-steps must be at least 2, got {os}"),
            });
        }
        sc.scenario.oracle_steps = Some(os);
    }
    if let Some(seed) = cli.seed {
        sc.scenario.seed = Some(seed);
    }
    Ok((sc, warnings))
}
