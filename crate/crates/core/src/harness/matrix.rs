// SPDX-License-Identifier: Apache-2.0

//! Attack x defense matrix.
//!
//! Each cell runs the attack with the defense applied, plus the same
//! scenario without payloads as a baseline. The attack had an effect if any
//! process outcome (status, kernel bytes, faults, register read-backs)
//! differs from the baseline.

use rayon::prelude::*;
use serde::Serialize;

use super::builtin::builtin_def;
use super::report::Report;
use super::scenario::{defense_preset, MatrixDef, Scenario, ScenarioError, ValidationIssue};
use super::sim::{run, RunResult};
use super::trace::{EventKind, TraceEvent};
use crate::payload::TrojanKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Verdict {
    /// At least one detection event was raised.
    Detected,
    /// The trigger never latched, so no payload could fire.
    Prevented,
    /// The attack changed an outcome and nothing was detected.
    Undetected,
    /// The trigger latched but outcomes match the baseline.
    NoEffect,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatrixCell {
    pub attack: String,
    pub payloads: Vec<TrojanKind>,
    pub defense: String,
    pub verdict: Verdict,
    pub triggered: bool,
    pub attack_effect: bool,
    pub detections: usize,
    pub verified: u64,
    pub skipped: u64,
    /// Trace lines supporting the verdict.
    pub evidence: Vec<String>,
}

fn outcome_signature(r: &Report) -> Vec<String> {
    r.processes
        .iter()
        .map(|p| {
            let regs: Vec<String> = p.register_reads.iter().map(|x| format!("{}={:#x}", x.name, x.value)).collect();
            format!(
                "{}:{:?}:kb={}:sf={}:pf={}:{}",
                p.pid,
                p.status,
                p.kernel_bytes,
                p.seg_faults,
                p.page_faults,
                regs.join(",")
            )
        })
        .collect()
}

fn is_outcome(e: &TraceEvent) -> bool {
    matches!(
        e.kind,
        EventKind::CplRead | EventKind::AccessOk | EventKind::SegFault | EventKind::PageFault | EventKind::RfRead
    )
}

/// First outcome event where the attacked run departs from the baseline.
fn first_divergence(attacked: &RunResult, baseline: &RunResult) -> Option<String> {
    let a = attacked.trace.events().iter().filter(|e| is_outcome(e));
    let mut b = baseline.trace.events().iter().filter(|e| is_outcome(e));
    for ea in a {
        match b.next() {
            Some(eb) if eb.line() == ea.line() => continue,
            _ => return Some(ea.line()),
        }
    }
    None
}

fn first_line(r: &RunResult, kind: EventKind) -> Option<String> {
    r.trace.of_kind(kind).next().map(TraceEvent::line)
}

/// Runs one cell.
pub fn matrix_cell(attack: &Scenario, defense: &str) -> Result<MatrixCell, ScenarioError> {
    let preset = defense_preset(defense).ok_or_else(|| {
        ScenarioError::Validation(vec![ValidationIssue {
            path: "matrix.defenses".into(),
            message: format!("unknown defense `{defense}`"),
        }])
    })?;
    let mut def = attack.def.clone();
    def.defense = preset;
    let attacked_s = Scenario::from_def(def.clone())?;
    def.payloads.clear();
    let baseline_s = Scenario::from_def(def)?;
    let attacked = run(&attacked_s);
    let baseline = run(&baseline_s);
    let rep = &attacked.report;
    let triggered = rep.trigger.hammers_at_latch.is_some();
    let attack_effect = outcome_signature(rep) != outcome_signature(&baseline.report);
    let detections = rep.detections.total;
    let verdict = if detections > 0 {
        Verdict::Detected
    } else if !triggered {
        Verdict::Prevented
    } else if attack_effect {
        Verdict::Undetected
    } else {
        Verdict::NoEffect
    };
    let mut evidence = Vec::new();
    match first_line(&attacked, EventKind::Triggered) {
        Some(l) => evidence.push(l),
        None => evidence.push(format!(
            "no Triggered event; max charge {:.9} V of {:.9} V threshold",
            rep.trigger.max_charge_v, rep.trigger.v_threshold
        )),
    }
    evidence.extend(first_line(&attacked, EventKind::PayloadFired));
    evidence.extend(first_line(&attacked, EventKind::Detection));
    if attack_effect {
        evidence.extend(first_divergence(&attacked, &baseline));
    }
    Ok(MatrixCell {
        attack: attack.name().to_string(),
        payloads: attack.payloads.iter().map(|p| p.kind.trojan_kind()).collect(),
        defense: defense.to_string(),
        verdict,
        triggered,
        attack_effect,
        detections,
        verified: rep.verification.verified,
        skipped: rep.verification.skipped,
        evidence,
    })
}

/// Every (attack, defense) pair of the matrix section, in row-major order.
pub fn run_matrix(matrix: &MatrixDef) -> Result<Vec<MatrixCell>, ScenarioError> {
    let attacks = matrix
        .attacks
        .iter()
        .map(|name| {
            let def = builtin_def(name).ok_or_else(|| {
                ScenarioError::Validation(vec![ValidationIssue {
                    path: "matrix.attacks".into(),
                    message: format!("unknown builtin scenario `{name}`"),
                }])
            })?;
            Scenario::from_def(def)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let pairs: Vec<(&Scenario, &String)> = attacks
        .iter()
        .flat_map(|a| matrix.defenses.iter().map(move |d| (a, d)))
        .collect();
    pairs.par_iter().map(|(a, d)| matrix_cell(a, d)).collect()
}

pub fn matrix_table(cells: &[MatrixCell]) -> String {
    let mut out = String::from("attack\tdefense\tverdict\tdetections\tverified/skipped\n");
    for c in cells {
        out.push_str(&format!(
            "{}\t{}\t{:?}\t{}\t{}/{}\n",
            c.attack, c.defense, c.verdict, c.detections, c.verified, c.skipped
        ));
    }
    out
}
