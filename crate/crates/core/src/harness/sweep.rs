// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use super::scenario::{ProcessDef, ProgramStep, Scenario, SweepDef};
use super::sim::{run_with, RunOptions};
use crate::machine::Privilege;
use crate::regfile::Word;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub duty: f64,
    pub on_cycles: u64,
    pub off_cycles: u64,
    pub latched: bool,
    pub hammers_to_latch: Option<u64>,
    pub cycles_to_latch: Option<u64>,
    pub cycles_run: u64,
    pub max_charge_v: f64,
    /// `max_charge_v / v_threshold`.
    pub max_charge_ratio: f64,
    pub digest: String,
}

/// ON/OFF split of one block. At least one hammer per block.
pub fn duty_split(duty: f64, period: u64) -> (u64, u64) {
    let on = ((duty * period as f64).round() as u64).clamp(1, period);
    (on, period - on)
}

/// The scenario with its programs replaced by a periodic hammer loop on
/// the trigger address. Payloads are dropped; the run stops at the latch.
pub fn duty_scenario(scenario: &Scenario, duty: f64) -> Scenario {
    let sweep = scenario.def.sweep.clone().unwrap_or_default();
    let (on, off) = duty_split(duty, sweep.period);
    let addr = scenario.trigger.set_address;
    let data = scenario.trigger.set_pattern.example_word() as Word;
    let blocks = sweep.budget.div_ceil(sweep.period);
    let mut steps = Vec::with_capacity(2 * blocks as usize);
    for _ in 0..blocks {
        steps.push(ProgramStep::Write {
            vaddr: addr,
            data,
            repeat: on,
            label: None,
        });
        if off > 0 {
            steps.push(ProgramStep::Idle {
                cycles: off,
                label: None,
            });
        }
    }
    let mut def = scenario.def.clone();
    def.name = format!("{}@{duty}", scenario.def.name);
    def.payloads.clear();
    def.processes = vec![ProcessDef {
        program: "hammer_loop".into(),
        privilege: Privilege::User,
        start_cycle: 0,
        sleeping: false,
        port: None,
    }];
    def.programs = BTreeMap::from([("hammer_loop".to_string(), steps)]);
    def.max_cycles = sweep.budget;
    def.stop_on_trigger = true;
    def.sweep = Some(SweepDef { duties: vec![duty], ..sweep });
    Scenario::from_def(def).expect("derived from a valid scenario")
}

pub fn sweep_point(scenario: &Scenario, duty: f64) -> SweepPoint {
    let derived = duty_scenario(scenario, duty);
    let period = derived.def.sweep.as_ref().map_or(100, |s| s.period);
    let (on, off) = duty_split(duty, period);
    let result = run_with(&derived, &RunOptions::default());
    let t = &result.report.trigger;
    SweepPoint {
        duty,
        on_cycles: on,
        off_cycles: off,
        latched: t.hammers_at_latch.is_some(),
        hammers_to_latch: t.hammers_at_latch,
        cycles_to_latch: t.triggered_at_cycle.map(|c| c + 1),
        cycles_run: result.report.cycles,
        max_charge_v: t.max_charge_v,
        max_charge_ratio: t.max_charge_v / t.v_threshold,
        digest: result.report.digest,
    }
}

/// One run per duty fraction, in parallel; results keep the input order.
pub fn sweep_duty(scenario: &Scenario, duties: &[f64]) -> Vec<SweepPoint> {
    duties.par_iter().map(|&d| sweep_point(scenario, d)).collect()
}

pub fn sweep_table(points: &[SweepPoint]) -> String {
    let mut out = String::from("duty\ton/off\tlatched\thammers_to_latch\tmax_charge/threshold\n");
    for p in points {
        out.push_str(&format!(
            "{:.2}\t{}/{}\t{}\t{}\t{:.4}\n",
            p.duty,
            p.on_cycles,
            p.off_cycles,
            if p.latched { "yes" } else { "no" },
            p.hammers_to_latch.map_or_else(|| "-".to_string(), |h| h.to_string()),
            p.max_charge_ratio
        ));
    }
    out
}
