// SPDX-License-Identifier: Apache-2.0

//! Scenario files.
//!
//! Scenarios are TOML documents. The top level holds `name`, `seed`,
//! `max_cycles` and optional `stop_on_trigger`; the tables `[machine]`,
//! `[trigger]`, `[defense]`, `[[payloads]]`, `[[processes]]` and
//! `[programs]` configure the run, and `[sweep]` / `[matrix]` drive the
//! batch commands. The full grammar is documented in `SCENARIOS.md` at the
//! repository root.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::defense::DefenseConfig;
use crate::machine::{MachineConfig, Privilege};
use crate::payload::{
    ForceTo, PayloadAttachment, PayloadControl, PayloadKind, Polarity, TrojanKind,
    DEFAULT_WINDOW_CYCLES,
};
use crate::regfile::Word;
use crate::trigger::{
    default_reset_pattern, default_set_pattern, PatternDef, ResetMode, TriggerCell, TriggerConfig,
    TriggerError,
    DEFAULT_EPSILON, DEFAULT_N_RESET, DEFAULT_N_SET, DEFAULT_RESET_ADDRESS, DEFAULT_SET_ADDRESS,
    DEFAULT_V_MAX, DEFAULT_V_THRESHOLD,
};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationIssue {
    pub path: String,
    pub message: String,
}

impl fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid scenario:\n{}", .0.iter().map(|i| format!("  {i}")).collect::<Vec<_>>().join("\n"))]
    Validation(Vec<ValidationIssue>),
}

impl ScenarioError {
    pub fn issues(&self) -> &[ValidationIssue] {
        match self {
            ScenarioError::Validation(v) => v,
            _ => &[],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expect {
    Ok,
    Fault,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProgramStep {
    Write {
        vaddr: u64,
        data: Word,
        #[serde(default = "one")]
        repeat: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        label: Option<String>,
    },
    Read {
        vaddr: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        expect: Option<Expect>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        label: Option<String>,
    },
    Idle {
        cycles: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        label: Option<String>,
    },
    /// Children run `program` from the start, or continue after this step.
    Fork {
        n: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        program: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        label: Option<String>,
    },
    SwitchTo {
        pid: u32,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        label: Option<String>,
    },
    ReadRegister {
        name: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        expect: Option<Word>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        label: Option<String>,
    },
}

fn one() -> u64 {
    1
}

impl ProgramStep {
    pub fn label(&self) -> Option<&str> {
        match self {
            ProgramStep::Write { label, .. }
            | ProgramStep::Read { label, .. }
            | ProgramStep::Idle { label, .. }
            | ProgramStep::Fork { label, .. }
            | ProgramStep::SwitchTo { label, .. }
            | ProgramStep::ReadRegister { label, .. } => label.as_deref(),
        }
    }

    /// Cycles the step occupies when scheduled.
    pub fn repetitions(&self) -> u64 {
        match self {
            ProgramStep::Write { repeat, .. } => *repeat,
            ProgramStep::Idle { cycles, .. } => *cycles,
            _ => 1,
        }
    }

    pub fn op(&self) -> &'static str {
        match self {
            ProgramStep::Write { .. } => "write",
            ProgramStep::Read { .. } => "read",
            ProgramStep::Idle { .. } => "idle",
            ProgramStep::Fork { .. } => "fork",
            ProgramStep::SwitchTo { .. } => "switch_to",
            ProgramStep::ReadRegister { .. } => "read_register",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TriggerDef {
    pub set_address: u64,
    pub set_pattern: PatternDef,
    pub reset_address: u64,
    pub reset_pattern: PatternDef,
    pub v_max: f64,
    pub v_threshold: f64,
    pub n_set: u32,
    pub n_reset: u32,
    pub reset_mode: ResetMode,
    pub epsilon: f64,
}

impl Default for TriggerDef {
    fn default() -> Self {
        Self {
            set_address: DEFAULT_SET_ADDRESS,
            set_pattern: default_set_pattern().into(),
            reset_address: DEFAULT_RESET_ADDRESS,
            reset_pattern: default_reset_pattern().into(),
            v_max: DEFAULT_V_MAX,
            v_threshold: DEFAULT_V_THRESHOLD,
            n_set: DEFAULT_N_SET,
            n_reset: DEFAULT_N_RESET,
            reset_mode: ResetMode::Counted,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

/// A register given by name (`"cs"`) or by raw entry index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RegRef {
    Entry(usize),
    Name(String),
}

/// Payload as written in a scenario. Which fields are required depends on
/// `kind`; see `SCENARIOS.md`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PayloadDef {
    pub kind: TrojanKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<RegRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bit_mask: Option<Word>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub force_to: Option<ForceTo>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub infected_port: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window_cycles: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table_polarity: Option<Polarity>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bit_position: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group_index: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forced_value: Option<bool>,
    pub addr_x: u64,
    pub addr_y: u64,
    pub pattern: PatternDef,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProcessDef {
    pub program: String,
    #[serde(default)]
    pub privilege: Privilege,
    #[serde(default)]
    pub start_cycle: u64,
    /// Blocked until another process switches to it.
    #[serde(default)]
    pub sleeping: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub port: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepDef {
    pub duties: Vec<f64>,
    /// Length of one ON+OFF block in cycles.
    pub period: u64,
    pub budget: u64,
}

impl Default for SweepDef {
    fn default() -> Self {
        Self {
            duties: vec![0.2, 0.3, 0.5, 1.0],
            period: 100,
            budget: 1_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixDef {
    /// Builtin scenario names.
    pub attacks: Vec<String>,
    /// Defense preset names, see [`defense_preset`].
    pub defenses: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioDef {
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_max_cycles")]
    pub max_cycles: u64,
    #[serde(default)]
    pub stop_on_trigger: bool,
    #[serde(default)]
    pub machine: MachineConfig,
    #[serde(default)]
    pub trigger: TriggerDef,
    #[serde(default)]
    pub defense: DefenseConfig,
    #[serde(default)]
    pub payloads: Vec<PayloadDef>,
    #[serde(default)]
    pub processes: Vec<ProcessDef>,
    #[serde(default)]
    pub programs: BTreeMap<String, Vec<ProgramStep>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepDef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<MatrixDef>,
}

fn default_max_cycles() -> u64 {
    100_000
}

/// A validated scenario ready to run.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub def: ScenarioDef,
    pub trigger: TriggerConfig,
    pub payloads: Vec<PayloadAttachment>,
    /// Programs in name order; processes refer to them by index.
    pub programs: Vec<(String, Vec<ProgramStep>)>,
}

impl Scenario {
    pub fn name(&self) -> &str {
        &self.def.name
    }

    pub fn program_index(&self, name: &str) -> Option<usize> {
        self.programs.iter().position(|(n, _)| n == name)
    }

    pub fn from_def(def: ScenarioDef) -> Result<Self, ScenarioError> {
        let mut issues = Vec::new();
        let (trigger, payloads) = validate(&def, &mut issues);
        if !issues.is_empty() {
            return Err(ScenarioError::Validation(issues));
        }
        let programs = def.programs.iter().map(|(n, s)| (n.clone(), s.clone())).collect();
        Ok(Self {
            trigger: trigger.expect("validated"),
            payloads,
            programs,
            def,
        })
    }

    /// Canonical TOML text of the scenario.
    pub fn to_toml(&self) -> String {
        toml::to_string(&self.def).expect("scenario serializes")
    }
}

pub fn parse_scenario(text: &str) -> Result<ScenarioDef, ScenarioError> {
    toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))
}

pub fn scenario_from_str(text: &str) -> Result<Scenario, ScenarioError> {
    Scenario::from_def(parse_scenario(text)?)
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    scenario_from_str(&text)
}

/// Named defense configurations used by the countermeasure matrix.
pub fn defense_preset(name: &str) -> Option<DefenseConfig> {
    use crate::defense::VerifyMode;
    let mut d = DefenseConfig::default();
    match name {
        "none" => {}
        "verify-dedicated" => d.verify.mode = VerifyMode::Dedicated,
        "verify-opportunistic" => d.verify.mode = VerifyMode::Opportunistic,
        "puf-hash" => d.hash.enabled = true,
        "obfuscation" => d.obfuscation.enabled = true,
        _ => return None,
    }
    Some(d)
}

pub const DEFENSE_PRESETS: [&str; 5] = [
    "none",
    "verify-dedicated",
    "verify-opportunistic",
    "puf-hash",
    "obfuscation",
];

struct Issues<'a>(&'a mut Vec<ValidationIssue>);

impl Issues<'_> {
    fn push(&mut self, path: impl Into<String>, message: impl Into<String>) {
        self.0.push(ValidationIssue {
            path: path.into(),
            message: message.into(),
        });
    }
}

fn validate(def: &ScenarioDef, out: &mut Vec<ValidationIssue>) -> (Option<TriggerConfig>, Vec<PayloadAttachment>) {
    let mut issues = Issues(out);
    if def.name.trim().is_empty() {
        issues.push("name", "must not be empty");
    }
    if def.max_cycles == 0 {
        issues.push("max_cycles", "must be at least 1");
    }
    let machine_issues = def.machine.validate();
    for (path, msg) in machine_issues {
        issues.push(format!("machine.{path}"), msg);
    }
    let geometry = def.machine.geometry;
    let space = &def.machine.address_space;

    let trigger = validate_trigger(def, &mut issues);

    if let Err(e) = def.defense.validate(geometry.read_ports) {
        issues.push("defense", e.to_string());
    }

    let mut payloads = Vec::new();
    if geometry.validate().is_ok() {
        for (i, p) in def.payloads.iter().enumerate() {
            if let Some(a) = build_payload(def, i, p, &mut issues) {
                payloads.push(a);
            }
        }
    }

    if def.processes.is_empty() {
        issues.push("processes", "at least one process is required");
    }
    for (i, p) in def.processes.iter().enumerate() {
        if !def.programs.contains_key(&p.program) {
            issues.push(format!("processes[{i}].program"), format!("unknown program `{}`", p.program));
        }
        if let Some(port) = p.port {
            if port >= geometry.read_ports {
                issues.push(format!("processes[{i}].port"), format!("{port} outside {} read ports", geometry.read_ports));
            }
        }
    }

    let forks: usize = def
        .programs
        .values()
        .flatten()
        .map(|s| match s {
            ProgramStep::Fork { n, .. } => *n,
            _ => 0,
        })
        .sum();
    let max_pid = def.processes.len() + forks;
    for (name, steps) in &def.programs {
        if steps.is_empty() {
            issues.push(format!("programs.{name}"), "program has no steps");
        }
        for (j, step) in steps.iter().enumerate() {
            let at = |key: &str| format!("programs.{name}[{j}].{key}");
            match step {
                ProgramStep::Write { vaddr, repeat, .. } => {
                    if *repeat == 0 {
                        issues.push(at("repeat"), "must be at least 1");
                    }
                    if !space.contains(*vaddr) {
                        issues.push(at("vaddr"), format!("{vaddr:#x} outside the address space"));
                    }
                }
                ProgramStep::Read { vaddr, .. } => {
                    if !space.contains(*vaddr) {
                        issues.push(at("vaddr"), format!("{vaddr:#x} outside the address space"));
                    }
                }
                ProgramStep::Idle { cycles, .. } => {
                    if *cycles == 0 {
                        issues.push(at("cycles"), "must be at least 1");
                    }
                }
                ProgramStep::Fork { n, program, .. } => {
                    if *n == 0 {
                        issues.push(at("n"), "must be at least 1");
                    }
                    if let Some(p) = program {
                        if !def.programs.contains_key(p) {
                            issues.push(at("program"), format!("unknown program `{p}`"));
                        }
                    }
                }
                ProgramStep::SwitchTo { pid, .. } => {
                    if *pid as usize >= max_pid {
                        issues.push(at("pid"), format!("no process can have pid {pid}"));
                    }
                }
                ProgramStep::ReadRegister { name: reg, .. } => {
                    if def.machine.registers.entry_of(reg).is_none() {
                        issues.push(at("name"), format!("unknown register `{reg}`"));
                    }
                }
            }
        }
    }

    if let Some(sweep) = &def.sweep {
        if sweep.duties.is_empty() {
            issues.push("sweep.duties", "must list at least one duty cycle");
        }
        for (i, d) in sweep.duties.iter().enumerate() {
            if !(*d > 0.0 && *d <= 1.0) {
                issues.push(format!("sweep.duties[{i}]"), format!("{d} must be in (0, 1]"));
            }
        }
        if sweep.period == 0 {
            issues.push("sweep.period", "must be at least 1");
        }
        if sweep.budget == 0 {
            issues.push("sweep.budget", "must be at least 1");
        }
    }
    if let Some(m) = &def.matrix {
        if m.attacks.is_empty() {
            issues.push("matrix.attacks", "must list at least one attack");
        }
        for (i, a) in m.attacks.iter().enumerate() {
            if !super::builtin::BUILTIN_NAMES.contains(&a.as_str()) {
                issues.push(format!("matrix.attacks[{i}]"), format!("unknown builtin scenario `{a}`"));
            }
        }
        if m.defenses.is_empty() {
            issues.push("matrix.defenses", "must list at least one defense");
        }
        for (i, d) in m.defenses.iter().enumerate() {
            if defense_preset(d).is_none() {
                issues.push(
                    format!("matrix.defenses[{i}]"),
                    format!("unknown defense `{d}`; expected one of {}", DEFENSE_PRESETS.join(", ")),
                );
            }
        }
    }
    (trigger, payloads)
}

fn validate_trigger(def: &ScenarioDef, issues: &mut Issues<'_>) -> Option<TriggerConfig> {
    let t = &def.trigger;
    let space = &def.machine.address_space;
    let set_pattern = t
        .set_pattern
        .build()
        .map_err(|e| issues.push("trigger.set_pattern", e.to_string()))
        .ok();
    let reset_pattern = t
        .reset_pattern
        .build()
        .map_err(|e| issues.push("trigger.reset_pattern", e.to_string()))
        .ok();
    for (key, addr) in [("trigger.set_address", t.set_address), ("trigger.reset_address", t.reset_address)] {
        if !space.contains(addr) {
            issues.push(key, format!("{addr:#x} outside the address space"));
        }
    }
    // Scalar parameters are checked even when a pattern is broken.
    let config = TriggerConfig {
        set_address: t.set_address,
        set_pattern: set_pattern.clone().unwrap_or_else(default_set_pattern),
        reset_address: t.reset_address,
        reset_pattern: reset_pattern.clone().unwrap_or_else(default_reset_pattern),
        v_max: t.v_max,
        v_threshold: t.v_threshold,
        n_set: t.n_set,
        n_reset: t.n_reset,
        reset_mode: t.reset_mode,
        epsilon: t.epsilon,
    };
    let scalar_ok = match TriggerCell::new(&config) {
        Ok(_) => true,
        Err(e) => {
            let key = match e {
                TriggerError::ZeroHammerCount => "trigger.n_set",
                TriggerError::ZeroResetCount => "trigger.n_reset",
                TriggerError::Threshold { .. } => "trigger.v_threshold",
                TriggerError::Epsilon(_) => "trigger.epsilon",
                _ => "trigger",
            };
            issues.push(key, e.to_string());
            false
        }
    };
    let (set_pattern, reset_pattern) = (set_pattern?, reset_pattern?);
    let l1 = def.machine.l1;
    if l1.validate().is_ok() && l1.index(t.set_address) == l1.index(t.reset_address) && set_pattern.overlaps(&reset_pattern) {
        issues.push(
            "trigger.reset_address",
            format!(
                "{:#x} shares L1 set {} with set_address {:#x} and the patterns overlap, so one write could both set and reset",
                t.reset_address,
                l1.index(t.reset_address),
                t.set_address
            ),
        );
    }
    scalar_ok.then_some(config)
}

fn build_payload(def: &ScenarioDef, i: usize, p: &PayloadDef, issues: &mut Issues<'_>) -> Option<PayloadAttachment> {
    let at = |key: &str| format!("payloads[{i}].{key}");
    let before = issues.0.len();
    let required: &[(&str, bool)] = match p.kind {
        TrojanKind::Bc => &[
            ("target", p.target.is_some()),
            ("bit_mask", p.bit_mask.is_some()),
            ("force_to", p.force_to.is_some()),
        ],
        TrojanKind::Rp => &[
            ("target", p.target.is_some()),
            ("bit_mask", p.bit_mask.is_some()),
            ("infected_port", p.infected_port.is_some()),
        ],
        TrojanKind::Lbl => &[
            ("infected_port", p.infected_port.is_some()),
            ("bit_position", p.bit_position.is_some()),
            ("group_index", p.group_index.is_some()),
            ("forced_value", p.forced_value.is_some()),
        ],
    };
    for (key, present) in required {
        if !present {
            issues.push(at(key), format!("required for {} payloads", p.kind));
        }
    }
    let registers = &def.machine.registers;
    let target = match &p.target {
        Some(RegRef::Entry(e)) => Some(*e),
        Some(RegRef::Name(n)) => registers.entry_of(n).or_else(|| {
            issues.push(at("target"), format!("unknown register `{n}`"));
            None
        }),
        None => None,
    };
    let pattern = p
        .pattern
        .build()
        .map_err(|e| issues.push(at("pattern"), e.to_string()))
        .ok();
    if issues.0.len() > before {
        return None;
    }
    let window_cycles = p.window_cycles.unwrap_or(DEFAULT_WINDOW_CYCLES);
    let kind = match p.kind {
        TrojanKind::Bc => PayloadKind::Bc {
            target_entry: target?,
            bit_mask: p.bit_mask?,
            force_to: p.force_to?,
        },
        TrojanKind::Rp => PayloadKind::Rp {
            target_entry: target?,
            bit_mask: p.bit_mask?,
            infected_port: p.infected_port?,
            window_cycles,
            table_polarity: p.table_polarity.unwrap_or_default(),
        },
        TrojanKind::Lbl => PayloadKind::Lbl {
            infected_port: p.infected_port?,
            bit_position: p.bit_position?,
            group_index: p.group_index?,
            forced_value: p.forced_value?,
            window_cycles,
        },
    };
    let attachment = PayloadAttachment::new(
        kind,
        PayloadControl {
            addr_x: p.addr_x,
            addr_y: p.addr_y,
            pattern: pattern?,
        },
    );
    if let Err(e) = attachment.validate(&def.machine.geometry) {
        issues.push(format!("payloads[{i}]"), e.to_string());
        return None;
    }
    Some(attachment)
}
