// SPDX-License-Identifier: Apache-2.0

use super::scenario::{parse_scenario, Scenario, ScenarioDef};

pub const BUILTIN_NAMES: [&str; 6] = [
    "bc_privilege_escalation",
    "rp_fork_leak",
    "lbl_dos",
    "gpr_corrupt",
    "duty_cycle_sweep",
    "countermeasure_matrix",
];

pub fn builtin_source(name: &str) -> Option<&'static str> {
    Some(match name {
        "bc_privilege_escalation" => include_str!("../../scenarios/bc_privilege_escalation.toml"),
        "rp_fork_leak" => include_str!("../../scenarios/rp_fork_leak.toml"),
        "lbl_dos" => include_str!("../../scenarios/lbl_dos.toml"),
        "gpr_corrupt" => include_str!("../../scenarios/gpr_corrupt.toml"),
        "duty_cycle_sweep" => include_str!("../../scenarios/duty_cycle_sweep.toml"),
        "countermeasure_matrix" => include_str!("../../scenarios/countermeasure_matrix.toml"),
        _ => return None,
    })
}

/// Parsed but unvalidated builtin, for callers that want to edit it first.
pub fn builtin_def(name: &str) -> Option<ScenarioDef> {
    builtin_source(name).map(|s| parse_scenario(s).expect("builtin scenarios parse"))
}

pub fn builtin_scenario(name: &str) -> Option<Scenario> {
    builtin_def(name).map(|d| Scenario::from_def(d).expect("builtin scenarios validate"))
}

pub fn builtin_scenarios() -> Vec<Scenario> {
    BUILTIN_NAMES
        .iter()
        .map(|n| builtin_scenario(n).expect("listed builtin exists"))
        .collect()
}
