// SPDX-License-Identifier: Apache-2.0

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use rftrojan::harness::{
    builtin_scenario, builtin_scenarios, load_scenario, matrix_table, run_matrix, run_with,
    sweep_duty, sweep_table, RunOptions, Scenario, ScenarioError,
};

#[derive(Parser)]
#[command(name = "rftrojan", version, about = "Register-file hardware Trojan simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario (builtin name or TOML file).
    Run {
        scenario: String,
        /// Write the trace to PATH.
        #[arg(long, value_name = "PATH")]
        trace: Option<PathBuf>,
        /// Write the JSON report to PATH instead of stdout.
        #[arg(long, value_name = "PATH")]
        report: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        max_cycles: Option<u64>,
    },
    /// List builtin scenarios.
    List,
    /// Duty-cycle sweep over the scenario's hammer loop.
    Sweep {
        scenario: String,
        /// Comma-separated duty fractions; defaults to the scenario's list.
        #[arg(long, value_delimiter = ',')]
        duty: Vec<f64>,
        #[arg(long)]
        json: bool,
    },
    /// Attack x defense matrix from the scenario's [matrix] section.
    Matrix {
        scenario: String,
        #[arg(long)]
        json: bool,
    },
}

fn resolve(name: &str) -> Result<Scenario, ScenarioError> {
    if !Path::new(name).exists() {
        if let Some(s) = builtin_scenario(name) {
            return Ok(s);
        }
    }
    load_scenario(name)
}

fn write_out(path: &Path, text: &str) -> Result<(), String> {
    std::fs::write(path, text).map_err(|e| format!("cannot write {}: {e}", path.display()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}

fn execute(command: Command) -> Result<(), String> {
    match command {
        Command::List => {
            for s in builtin_scenarios() {
                println!("{}\t{}", s.name(), s.def.description);
            }
        }
        Command::Run {
            scenario,
            trace,
            report,
            seed,
            max_cycles,
        } => {
            let s = resolve(&scenario).map_err(|e| e.to_string())?;
            let options = RunOptions {
                retain_trace: trace.is_some(),
                seed,
                max_cycles,
            };
            let result = run_with(&s, &options);
            if let Some(path) = trace {
                write_out(&path, &result.trace.text())?;
            }
            let json = result.report.to_json();
            match report {
                Some(path) => write_out(&path, &json)?,
                None => println!("{json}"),
            }
            eprintln!(
                "{}: {:?} after {} cycles, digest {}",
                s.name(),
                result.report.stop_reason,
                result.report.cycles,
                result.report.digest
            );
        }
        Command::Sweep { scenario, duty, json } => {
            let s = resolve(&scenario).map_err(|e| e.to_string())?;
            let duties = if duty.is_empty() {
                s.def.sweep.clone().unwrap_or_default().duties
            } else {
                duty
            };
            if let Some(bad) = duties.iter().find(|d| !(**d > 0.0 && **d <= 1.0)) {
                return Err(format!("duty {bad} must be in (0, 1]"));
            }
            let points = sweep_duty(&s, &duties);
            if json {
                println!("{}", serde_json::to_string_pretty(&points).expect("serializable"));
            } else {
                print!("{}", sweep_table(&points));
            }
        }
        Command::Matrix { scenario, json } => {
            let s = resolve(&scenario).map_err(|e| e.to_string())?;
            let m = s
                .def
                .matrix
                .as_ref()
                .ok_or_else(|| format!("{} has no [matrix] section", s.name()))?;
            let cells = run_matrix(m).map_err(|e| e.to_string())?;
            if json {
                println!("{}", serde_json::to_string_pretty(&cells).expect("serializable"));
            } else {
                print!("{}", matrix_table(&cells));
            }
        }
    }
    Ok(())
}
