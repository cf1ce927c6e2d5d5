// SPDX-License-Identifier: Apache-2.0

//! The cycle loop: one scheduled process executes one program step per
//! cycle, strict round-robin by pid.

use serde::Serialize;

use super::report::{build_report, Report};
use super::scenario::{Expect, ProgramStep, Scenario};
use super::trace::Trace;
use crate::machine::{Access, Machine, Pid, ProcessStatus};
use crate::regfile::Word;

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Keep every event in memory. The digest is computed either way.
    pub retain_trace: bool,
    pub seed: Option<u64>,
    pub max_cycles: Option<u64>,
}

impl RunOptions {
    pub fn retained() -> Self {
        Self {
            retain_trace: true,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// Every process exited or faulted.
    Completed,
    CycleBudgetExceeded,
    Triggered,
}

/// Result of a scripted expectation (`expect` on a read or register read).
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ExpectationResult {
    pub pid: Pid,
    pub cycle: u64,
    pub step: String,
    pub expected: String,
    pub observed: String,
    pub met: bool,
}

#[derive(Debug)]
pub struct RunResult {
    pub trace: Trace,
    pub report: Report,
    pub machine: Machine,
}

struct Sim<'a> {
    scenario: &'a Scenario,
    machine: Machine,
    last: Option<Pid>,
    forced: Option<Pid>,
    expectations: Vec<ExpectationResult>,
}

/// Runs with a retained trace.
pub fn run(scenario: &Scenario) -> RunResult {
    run_with(scenario, &RunOptions::retained())
}

pub fn run_with(scenario: &Scenario, options: &RunOptions) -> RunResult {
    let seed = options.seed.unwrap_or(scenario.def.seed);
    let max_cycles = options.max_cycles.unwrap_or(scenario.def.max_cycles);
    let machine = Machine::new(
        scenario.def.machine.clone(),
        &scenario.trigger,
        scenario.payloads.clone(),
        scenario.def.defense.clone(),
        seed,
    )
    .expect("scenario was validated");
    let mut sim = Sim {
        scenario,
        machine,
        last: None,
        forced: None,
        expectations: Vec::new(),
    };
    for p in &scenario.def.processes {
        let program = scenario.program_index(&p.program).expect("validated program");
        let start = if p.sleeping { u64::MAX } else { p.start_cycle };
        sim.machine.spawn(p.privilege, program, start, p.port);
    }

    let mut trace = Trace::new(options.retain_trace);
    let mut cycle = 0;
    let stop = loop {
        if sim.all_done(cycle) {
            break StopReason::Completed;
        }
        if cycle >= max_cycles {
            break StopReason::CycleBudgetExceeded;
        }
        sim.machine.begin_cycle(cycle);
        if let Some(pid) = sim.pick(cycle) {
            sim.machine.context_switch(pid);
            sim.last = Some(pid);
            sim.execute(pid);
        }
        trace.extend_cycle(sim.machine.end_cycle());
        cycle += 1;
        if scenario.def.stop_on_trigger && sim.machine.trigger().latched() {
            break StopReason::Triggered;
        }
    };
    let report = build_report(scenario, seed, &sim.machine, &trace, cycle, stop, sim.expectations);
    RunResult {
        trace,
        report,
        machine: sim.machine,
    }
}

impl Sim<'_> {
    /// Nothing left that could ever run. Sleeping processes that nobody can
    /// wake do not keep the simulation alive.
    fn all_done(&self, cycle: u64) -> bool {
        !self
            .machine
            .processes()
            .iter()
            .any(|p| p.status == ProcessStatus::Runnable && (p.start_cycle <= cycle || p.start_cycle != u64::MAX))
    }

    fn pick(&mut self, cycle: u64) -> Option<Pid> {
        let procs = self.machine.processes();
        if let Some(pid) = self.forced.take() {
            if procs[pid as usize].is_runnable_at(cycle) {
                return Some(pid);
            }
        }
        let runnable = |p: &&crate::machine::Process| p.is_runnable_at(cycle);
        let after = self.last.map_or(0, |l| l + 1);
        procs
            .iter()
            .filter(runnable)
            .find(|p| p.pid >= after)
            .or_else(|| procs.iter().find(runnable))
            .map(|p| p.pid)
    }

    fn expect(&mut self, pid: Pid, step: &ProgramStep, expected: String, observed: String) {
        let label = step.label().map_or_else(|| step.op().to_string(), str::to_string);
        self.expectations.push(ExpectationResult {
            pid,
            cycle: self.machine.cycle(),
            step: label,
            met: expected == observed,
            expected,
            observed,
        });
    }

    fn execute(&mut self, pid: Pid) {
        let cursor = self.machine.process(pid).cursor;
        let steps = &self.scenario.programs[cursor.program].1;
        let step = &steps[cursor.pc];
        let mut advance = true;
        match step {
            ProgramStep::Write { vaddr, data, repeat, .. } => {
                self.machine.cpu_write(pid, *vaddr, *data);
                advance = cursor.done + 1 >= *repeat;
            }
            ProgramStep::Read { vaddr, expect, .. } => {
                let access = self.machine.cpu_read(pid, *vaddr);
                if let Some(e) = expect {
                    let observed = match access {
                        Access::Ok { .. } => Expect::Ok,
                        Access::Fault(_) => Expect::Fault,
                    };
                    self.expect(pid, step, format!("{e:?}").to_lowercase(), format!("{observed:?}").to_lowercase());
                }
            }
            ProgramStep::Idle { cycles, .. } => {
                advance = cursor.done + 1 >= *cycles;
            }
            ProgramStep::Fork { n, program, .. } => {
                let (prog, pc) = match program {
                    Some(name) => (self.scenario.program_index(name).expect("validated"), 0),
                    None => (cursor.program, cursor.pc + 1),
                };
                // A continuation past the last step has nothing to run.
                if pc < self.scenario.programs[prog].1.len() {
                    self.machine.fork(pid, *n, prog, pc);
                }
            }
            ProgramStep::SwitchTo { pid: target, .. } => {
                let now = self.machine.cycle();
                if let Some(t) = self.machine.processes().get(*target as usize) {
                    if t.status == ProcessStatus::Runnable {
                        let start = t.start_cycle.min(now + 1);
                        self.machine.process_mut(*target).start_cycle = start;
                        self.forced = Some(*target);
                    }
                }
            }
            ProgramStep::ReadRegister { name, expect, .. } => {
                let value = self.machine.read_register(pid, name).expect("validated register");
                if let Some(e) = expect {
                    self.expect(pid, step, hex(*e), hex(value));
                }
            }
        }
        let len = steps.len();
        let p = self.machine.process_mut(pid);
        if advance {
            p.cursor.pc += 1;
            p.cursor.done = 0;
        } else {
            p.cursor.done += 1;
        }
        if p.status == ProcessStatus::Runnable && p.cursor.pc >= len {
            p.status = ProcessStatus::Exited;
        }
    }
}

fn hex(v: Word) -> String {
    format!("{v:#x}")
}
