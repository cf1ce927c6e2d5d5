// SPDX-License-Identifier: Apache-2.0

use serde::Serialize;

use super::scenario::Scenario;
use super::sim::{ExpectationResult, StopReason};
use super::trace::Trace;
use crate::defense::{DetectionEvent, DetectionKind};
use crate::machine::{Machine, Pid, Privilege, ProcessStatus, RegisterRead};
use crate::payload::{overhead_for, overhead_row, OverheadRecord, TrojanKind, OVERHEAD_TABLE};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TriggerSummary {
    pub latched: bool,
    pub hammers: u64,
    pub hammers_at_latch: Option<u64>,
    pub triggered_at_cycle: Option<u64>,
    pub reset_at_cycle: Option<u64>,
    pub final_charge_v: f64,
    pub max_charge_v: f64,
    pub v_threshold: f64,
    pub n_set: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProcessReport {
    pub pid: Pid,
    pub parent: Option<Pid>,
    pub program: String,
    pub privilege: Privilege,
    pub port: usize,
    pub status: ProcessStatus,
    pub writes: u64,
    pub user_reads: u64,
    pub kernel_reads: u64,
    pub kernel_bytes: u64,
    pub seg_faults: u64,
    pub page_faults: u64,
    pub register_reads: Vec<RegisterRead>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PayloadReport {
    pub index: usize,
    pub kind: TrojanKind,
    pub fires: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectionSummary {
    pub total: usize,
    pub rf_read_mismatch: usize,
    pub register_hash_mismatch: usize,
    pub first_cycle: Option<u64>,
    pub events: Vec<DetectionEvent>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationSummary {
    pub verified: u64,
    pub skipped: u64,
    pub schedulable_read_ports: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub scenario: String,
    pub seed: u64,
    pub defense: String,
    pub stop_reason: StopReason,
    pub cycles: u64,
    pub trigger: TriggerSummary,
    pub processes: Vec<ProcessReport>,
    pub expectations: Vec<ExpectationResult>,
    pub payloads: Vec<PayloadReport>,
    pub detections: DetectionSummary,
    pub verification: VerificationSummary,
    pub context_switches: u64,
    /// Table rows for the configured payloads.
    pub overhead: Vec<OverheadRecord>,
    /// Payloads whose variant has no published figures.
    pub overhead_unavailable: Vec<String>,
    /// The complete published table.
    pub overhead_table: Vec<OverheadRecord>,
    pub trace_events: u64,
    pub digest: String,
}

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn process(&self, pid: Pid) -> &ProcessReport {
        &self.processes[pid as usize]
    }

    pub fn budget_exceeded(&self) -> bool {
        self.stop_reason == StopReason::CycleBudgetExceeded
    }
}

pub(crate) fn build_report(
    scenario: &Scenario,
    seed: u64,
    machine: &Machine,
    trace: &Trace,
    cycles: u64,
    stop_reason: StopReason,
    expectations: Vec<ExpectationResult>,
) -> Report {
    let trig = machine.trigger();
    let counters = &machine.counters;
    let processes = machine
        .processes()
        .iter()
        .map(|p| ProcessReport {
            pid: p.pid,
            parent: p.parent,
            program: scenario.programs[p.cursor.program].0.clone(),
            privilege: p.privilege,
            port: p.port,
            status: p.status,
            writes: p.stats.writes,
            user_reads: p.stats.user_reads,
            kernel_reads: p.stats.kernel_reads,
            kernel_bytes: p.stats.kernel_bytes,
            seg_faults: p.stats.seg_faults,
            page_faults: p.stats.page_faults,
            register_reads: p.stats.register_reads.clone(),
        })
        .collect();
    let mut overhead = Vec::new();
    let mut overhead_unavailable = Vec::new();
    for (i, a) in scenario.payloads.iter().enumerate() {
        match overhead_for(a) {
            Ok(r) => overhead.push(r),
            Err(e) => overhead_unavailable.push(format!("payloads[{i}]: {e}")),
        }
    }
    let count = |k| counters.detections.iter().filter(|d| d.kind == k).count();
    Report {
        scenario: scenario.def.name.clone(),
        seed,
        defense: scenario.def.defense.label(),
        stop_reason,
        cycles,
        trigger: TriggerSummary {
            latched: trig.latched(),
            hammers: trig.hammers(),
            hammers_at_latch: counters.hammers_at_latch,
            triggered_at_cycle: counters.triggered_at,
            reset_at_cycle: counters.reset_at,
            final_charge_v: trig.charge_v(),
            max_charge_v: trig.max_charge_v(),
            v_threshold: trig.v_threshold,
            n_set: trig.n_set,
        },
        processes,
        expectations,
        payloads: machine
            .payloads()
            .attachments
            .iter()
            .enumerate()
            .map(|(index, a)| PayloadReport {
                index,
                kind: a.kind.trojan_kind(),
                fires: a.fires,
            })
            .collect(),
        detections: DetectionSummary {
            total: counters.detections.len(),
            rf_read_mismatch: count(DetectionKind::RfReadMismatch),
            register_hash_mismatch: count(DetectionKind::RegisterHashMismatch),
            first_cycle: counters.detections.first().map(|d| d.cycle),
            events: counters.detections.clone(),
        },
        verification: VerificationSummary {
            verified: counters.verified,
            skipped: counters.skipped,
            schedulable_read_ports: machine.schedulable_ports(),
        },
        context_switches: counters.context_switches,
        overhead,
        overhead_unavailable,
        overhead_table: OVERHEAD_TABLE.iter().map(|r| overhead_row(r.0, r.1)).collect(),
        trace_events: trace.len(),
        digest: trace.digest(),
    }
}
