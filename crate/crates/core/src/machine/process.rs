// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;

use serde::Serialize;

use super::registers::Privilege;
use crate::regfile::Word;

pub type Pid = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ProcessStatus {
    Runnable,
    Faulted,
    Exited,
}

/// Position of a process inside its program. `program` indexes the
/// scenario's program table; `done` counts repetitions of the current step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ProgramCursor {
    pub program: usize,
    pub pc: usize,
    pub done: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RegisterRead {
    pub cycle: u64,
    pub name: String,
    pub value: Word,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ProcessStats {
    pub writes: u64,
    pub user_reads: u64,
    pub kernel_reads: u64,
    pub kernel_bytes: u64,
    pub seg_faults: u64,
    pub page_faults: u64,
    pub register_reads: Vec<RegisterRead>,
}

#[derive(Debug, Clone)]
pub struct Process {
    pub pid: Pid,
    pub parent: Option<Pid>,
    pub privilege: Privilege,
    /// Segment and control registers as the kernel last set them. Restored
    /// verbatim on every switch-in.
    pub kernel_context: BTreeMap<usize, Word>,
    /// GPR contents captured at the last switch-out.
    pub saved_gprs: BTreeMap<usize, Word>,
    /// Read port used for this process's CPL and segment reads under the
    /// per-process port policy.
    pub port: usize,
    pub status: ProcessStatus,
    pub start_cycle: u64,
    pub cursor: ProgramCursor,
    pub stats: ProcessStats,
}

impl Process {
    /// Every mapped entry as it will be written back on the next switch-in.
    pub fn saved_registers(&self) -> BTreeMap<usize, Word> {
        let mut all = self.kernel_context.clone();
        all.extend(self.saved_gprs.iter().map(|(&e, &v)| (e, v)));
        all
    }

    pub fn is_runnable_at(&self, cycle: u64) -> bool {
        self.status == ProcessStatus::Runnable && self.start_cycle <= cycle
    }

    pub fn finished(&self) -> bool {
        self.status != ProcessStatus::Runnable
    }
}
