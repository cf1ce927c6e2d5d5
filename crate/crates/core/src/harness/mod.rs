// SPDX-License-Identifier: Apache-2.0

//! Scenario loading, the simulation loop, builtin scenarios, reports and
//! the batch drivers behind the CLI.

pub mod builtin;
pub mod matrix;
pub mod report;
pub mod scenario;
pub mod sim;
pub mod sweep;
pub mod trace;

pub use builtin::{builtin_def, builtin_scenario, builtin_scenarios, builtin_source, BUILTIN_NAMES};
pub use matrix::{matrix_cell, matrix_table, run_matrix, MatrixCell, Verdict};
pub use report::Report;
pub use scenario::{
    defense_preset, load_scenario, parse_scenario, scenario_from_str, Expect, MatrixDef, PayloadDef,
    ProcessDef, ProgramStep, Scenario, ScenarioDef, ScenarioError, SweepDef, ValidationIssue,
    DEFENSE_PRESETS,
};
pub use sim::{run, run_with, ExpectationResult, RunOptions, RunResult, StopReason};
pub use sweep::{duty_scenario, duty_split, sweep_duty, sweep_point, sweep_table, SweepPoint};
pub use trace::{EventKind, Trace, TraceEvent};
