// SPDX-License-Identifier: Apache-2.0

//! Minimal CPU and memory model around the register file.
//!
//! Architectural registers live in RF entries, the CPL lives in CS, and every
//! memory access goes through the same path: read CS and DS through a read
//! port (payload filters apply), check the selectors, then translate with the
//! CPL that was just read. There is no other source of privilege.

mod cache;
mod paging;
mod process;
mod registers;

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::{L1Cache, L1Config};
pub use paging::{
    translate_and_check, AccessFault, PageTable, Pte, SegFaultReason, Tlb, TlbConfig, TlbStatus,
    Translation, PAGE_SHIFT, PAGE_SIZE,
};
pub use process::{Pid, Process, ProcessStats, ProcessStatus, ProgramCursor, RegisterRead};
pub use registers::{
    initial_values, selector_index, Privilege, RegClass, RegisterMap, DEFAULT_SELECTOR_INDICES,
    KERNEL_CS, KERNEL_DS, USER_CS, USER_DS,
};

use crate::defense::{
    schedulable_ports, verified_read, DefenseConfig, DetectionEvent, HashShadowStore,
    ObfuscationMap, PufModel, VerifyMode, VerifyOutcome,
};
use crate::harness::trace::{hex, EventKind, TraceEvent};
use crate::payload::{apply_bc, Activation, PayloadAttachment, PayloadSet};
use crate::regfile::{Geometry, NoFilter, RegFileError, RegisterFile, Word};
use crate::trigger::{CycleEvent, TriggerCell, TriggerConfig, TriggerError, TriggerTransition};

/// Kernel data word the exploits try to read.
pub const KERNEL_SECRET_ADDRESS: u64 = 0xC010_0000;
pub const KERNEL_SECRET: Word = 0x5EC2_E7ED;

#[derive(Debug, Error)]
pub enum MachineError {
    #[error(transparent)]
    RegFile(#[from] RegFileError),
    #[error(transparent)]
    Trigger(#[from] TriggerError),
    #[error("{0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PortPolicy {
    /// The paging unit reads CS through `paging_port`.
    #[default]
    Fixed,
    /// Each process reads CS through its own port; forked children are
    /// spread round-robin over the schedulable read ports.
    PerProcess,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Region {
    pub name: String,
    pub start: u64,
    pub pages: u64,
    #[serde(default = "yes")]
    pub writable: bool,
    #[serde(default = "yes")]
    pub present: bool,
    /// Overrides the U/S bit; by default pages at or above `kernel_base` are
    /// kernel pages.
    #[serde(default)]
    pub kernel: Option<bool>,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemoryInit {
    pub addr: u64,
    pub data: Word,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AddressSpace {
    pub address_bits: u32,
    pub kernel_base: u64,
    pub regions: Vec<Region>,
    pub memory: Vec<MemoryInit>,
}

impl Default for AddressSpace {
    /// 32-bit space with the top 1 GiB reserved for the kernel.
    fn default() -> Self {
        let region = |name: &str, start, pages, writable| Region {
            name: name.into(),
            start,
            pages,
            writable,
            present: true,
            kernel: None,
        };
        Self {
            address_bits: 32,
            kernel_base: 0xC000_0000,
            regions: vec![
                region("text", 0x0804_8000, 4, false),
                region("data", 0x0060_0000, 16, true),
                region("stack", 0xBFFF_E000, 2, true),
                region("kernel", 0xC010_0000, 4, true),
            ],
            memory: vec![MemoryInit {
                addr: KERNEL_SECRET_ADDRESS,
                data: KERNEL_SECRET,
            }],
        }
    }
}

impl AddressSpace {
    pub fn limit(&self) -> u64 {
        if self.address_bits >= 64 {
            u64::MAX
        } else {
            1 << self.address_bits
        }
    }

    pub fn contains(&self, vaddr: u64) -> bool {
        self.address_bits >= 64 || vaddr < self.limit()
    }

    pub fn page_table(&self) -> PageTable {
        let mut pt = PageTable::new();
        for r in &self.regions {
            let first = r.start >> PAGE_SHIFT;
            for vpn in first..first + r.pages {
                pt.map(Pte {
                    vpn,
                    pfn: vpn,
                    present: r.present,
                    us_bit: r.kernel.unwrap_or((vpn << PAGE_SHIFT) >= self.kernel_base),
                    rw_bit: r.writable,
                });
            }
        }
        pt
    }

    pub fn validate(&self) -> Vec<(String, String)> {
        let mut issues = Vec::new();
        if !(12..=64).contains(&self.address_bits) {
            issues.push(("address_bits".into(), format!("{} must be in 12..=64", self.address_bits)));
            return issues;
        }
        if !self.contains(self.kernel_base) {
            issues.push(("kernel_base".into(), format!("{:#x} outside the address space", self.kernel_base)));
        }
        for (i, r) in self.regions.iter().enumerate() {
            if r.start % PAGE_SIZE != 0 {
                issues.push((format!("regions[{i}].start"), format!("{:#x} is not page aligned", r.start)));
            }
            let end = r.start.checked_add(r.pages.saturating_mul(PAGE_SIZE));
            if r.pages == 0 || end.is_none_or(|e| e > self.limit() && self.address_bits < 64) {
                issues.push((format!("regions[{i}].pages"), format!("region `{}` does not fit the address space", r.name)));
            }
        }
        for (i, m) in self.memory.iter().enumerate() {
            if !self.contains(m.addr) {
                issues.push((format!("memory[{i}].addr"), format!("{:#x} outside the address space", m.addr)));
            }
        }
        issues
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MachineConfig {
    pub geometry: Geometry,
    pub registers: RegisterMap,
    pub l1: L1Config,
    pub tlb: TlbConfig,
    pub address_space: AddressSpace,
    pub paging_port: usize,
    pub port_policy: PortPolicy,
    /// GDT indices that hold valid descriptors.
    pub valid_selectors: Vec<u16>,
    /// Emit a `ChargeSample` every this many cycles; 0 disables sampling.
    pub charge_sample_interval: u64,
}

impl Default for MachineConfig {
    fn default() -> Self {
        Self {
            geometry: Geometry::default(),
            registers: RegisterMap::default(),
            l1: L1Config::default(),
            tlb: TlbConfig::default(),
            address_space: AddressSpace::default(),
            paging_port: 0,
            port_policy: PortPolicy::Fixed,
            valid_selectors: DEFAULT_SELECTOR_INDICES.to_vec(),
            charge_sample_interval: 100,
        }
    }
}

impl MachineConfig {
    /// Problems as `(key path, message)` relative to the machine section.
    pub fn validate(&self) -> Vec<(String, String)> {
        let mut issues = Vec::new();
        if let Err(e) = self.geometry.validate() {
            issues.push(("geometry".into(), e.to_string()));
            return issues;
        }
        if let Err(e) = self.registers.validate(&self.geometry) {
            issues.push(("registers".into(), e));
        }
        if let Err(e) = self.l1.validate() {
            issues.push(("l1".into(), e));
        }
        if self.paging_port >= self.geometry.read_ports {
            issues.push((
                "paging_port".into(),
                format!("{} outside {} read ports", self.paging_port, self.geometry.read_ports),
            ));
        }
        for (path, msg) in self.address_space.validate() {
            issues.push((format!("address_space.{path}"), msg));
        }
        issues
    }
}

/// Outcome of one memory access, as reported to the script interpreter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Access {
    Ok { data: Word, kernel: bool },
    Fault(AccessFault),
}

/// The whole simulated system below the scheduler.
#[derive(Debug)]
pub struct Machine {
    pub config: MachineConfig,
    rf: RegisterFile,
    payloads: PayloadSet,
    trigger: TriggerCell,
    l1: L1Cache,
    monitored_set: usize,
    reset_set: usize,
    page_table: PageTable,
    tlb: Tlb,
    memory: BTreeMap<u64, Word>,
    processes: Vec<Process>,
    current: Option<Pid>,
    defense: DefenseConfig,
    puf: Option<PufModel>,
    shadow: Option<HashShadowStore>,
    port_rng: ChaCha8Rng,
    cycle: u64,
    busy: Vec<bool>,
    trigger_seen: bool,
    events: Vec<TraceEvent>,
    pub counters: Counters,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Counters {
    pub verified: u64,
    pub skipped: u64,
    pub context_switches: u64,
    pub hammers_at_latch: Option<u64>,
    pub triggered_at: Option<u64>,
    pub reset_at: Option<u64>,
    pub detections: Vec<DetectionEvent>,
}

/// Seed material for derived secrets, so distinct roles never share a stream.
fn derive_seed(seed: u64, role: u64) -> u64 {
    let mut h = seed ^ role.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    h = (h ^ (h >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    h = (h ^ (h >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    h ^ (h >> 31)
}

impl Machine {
    pub fn new(
        config: MachineConfig,
        trigger: &TriggerConfig,
        payloads: Vec<PayloadAttachment>,
        defense: DefenseConfig,
        seed: u64,
    ) -> Result<Self, MachineError> {
        if let Some((path, msg)) = config.validate().into_iter().next() {
            return Err(MachineError::Config(format!("{path}: {msg}")));
        }
        defense
            .validate(config.geometry.read_ports)
            .map_err(|e| MachineError::Config(e.to_string()))?;
        let rf = RegisterFile::new(config.geometry)?;
        let trigger = TriggerCell::new(trigger)?;
        let obfuscation = defense.obfuscation.enabled.then(|| {
            let boot = defense.obfuscation.seed.unwrap_or_else(|| derive_seed(seed, 1));
            ObfuscationMap::from_seed(config.l1.sets, boot)
        });
        let l1 = L1Cache::new(config.l1, obfuscation);
        let (puf, shadow) = if defense.hash.enabled {
            let challenge_width = usize::BITS - (config.geometry.entries - 1).leading_zeros();
            let puf = PufModel::new(
                defense.hash.puf_seed.unwrap_or_else(|| derive_seed(seed, 2)),
                challenge_width.max(1),
                defense.hash.response_width,
            )
            .map_err(|e| MachineError::Config(e.to_string()))?;
            (Some(puf), Some(HashShadowStore::new(config.registers.protected_entries())))
        } else {
            (None, None)
        };
        let memory = config
            .address_space
            .memory
            .iter()
            .map(|m| (m.addr, m.data))
            .collect();
        Ok(Self {
            monitored_set: l1.index(trigger.set_address),
            reset_set: l1.index(trigger.reset_address),
            page_table: config.address_space.page_table(),
            tlb: Tlb::new(config.tlb),
            payloads: PayloadSet::new(&config.geometry, payloads),
            busy: vec![false; config.geometry.read_ports],
            rf,
            trigger,
            l1,
            memory,
            processes: Vec::new(),
            current: None,
            defense,
            puf,
            shadow,
            port_rng: ChaCha8Rng::seed_from_u64(derive_seed(seed, 3)),
            cycle: 0,
            trigger_seen: false,
            events: Vec::new(),
            counters: Counters::default(),
            config,
        })
    }

    pub fn cycle(&self) -> u64 {
        self.cycle
    }

    pub fn rf(&self) -> &RegisterFile {
        &self.rf
    }

    pub fn trigger(&self) -> &TriggerCell {
        &self.trigger
    }

    pub fn payloads(&self) -> &PayloadSet {
        &self.payloads
    }

    pub fn l1(&self) -> &L1Cache {
        &self.l1
    }

    pub fn monitored_set(&self) -> usize {
        self.monitored_set
    }

    pub fn processes(&self) -> &[Process] {
        &self.processes
    }

    pub fn process(&self, pid: Pid) -> &Process {
        &self.processes[pid as usize]
    }

    pub fn process_mut(&mut self, pid: Pid) -> &mut Process {
        &mut self.processes[pid as usize]
    }

    pub fn current(&self) -> Option<Pid> {
        self.current
    }

    pub fn memory(&self, paddr: u64) -> Word {
        self.memory.get(&paddr).copied().unwrap_or(0)
    }

    /// Read ports ordinary traffic may use.
    pub fn schedulable_ports(&self) -> Vec<usize> {
        schedulable_ports(&self.defense.verify, self.config.geometry.read_ports)
    }

    fn emit(&mut self, event: TraceEvent) {
        self.events.push(event);
    }

    fn ev(&self, kind: EventKind) -> TraceEvent {
        TraceEvent::new(self.cycle, kind)
    }

    fn reg_name(&self, entry: usize) -> String {
        self.config
            .registers
            .name_of(entry)
            .unwrap_or_else(|| format!("r{entry}"))
    }

    /// Creates a process that becomes runnable at `start_cycle`.
    pub fn spawn(&mut self, privilege: Privilege, program: usize, start_cycle: u64, port: Option<usize>) -> Pid {
        let pid = self.processes.len() as Pid;
        let values = initial_values(&self.config.registers, privilege, pid);
        let gprs = self.config.registers.gpr_entries();
        let (saved_gprs, kernel_context) = values.into_iter().partition(|(e, _)| gprs.contains(e));
        self.processes.push(Process {
            pid,
            parent: None,
            privilege,
            kernel_context,
            saved_gprs,
            port: port.unwrap_or(self.config.paging_port),
            status: ProcessStatus::Runnable,
            start_cycle,
            cursor: ProgramCursor {
                program,
                pc: 0,
                done: 0,
            },
            stats: ProcessStats::default(),
        });
        pid
    }

    /// Opens a cycle: closes elapsed payload windows and samples background
    /// port occupancy for opportunistic verification.
    pub fn begin_cycle(&mut self, cycle: u64) {
        self.cycle = cycle;
        self.rf.set_cycle(cycle);
        self.trigger_seen = false;
        for i in self.payloads.expire(cycle) {
            let kind = self.payloads.attachments[i].kind.trojan_kind();
            let e = self.ev(EventKind::WindowClose).with("payload", i).with("kind", kind.to_string());
            self.emit(e);
        }
        let load = self.defense.verify.port_load;
        let draw = self.defense.verify.mode == VerifyMode::Opportunistic && load > 0.0;
        for b in self.busy.iter_mut() {
            *b = draw && self.port_rng.random_bool(load);
        }
    }

    /// Word currently visible for `entry`, including a staged write.
    fn current_value(&self, entry: usize) -> Word {
        self.rf.read(0, entry, &NoFilter).expect("mapped entry").raw
    }

    /// Saves the running process's GPRs and loads `next`'s context.
    ///
    /// Segment and control registers come from the kernel's copy, not from
    /// the RF, so a switch rewrites (and heals) any bitcell corruption there.
    pub fn context_switch(&mut self, next: Pid) {
        if self.current == Some(next) {
            return;
        }
        if let Some(cur) = self.current {
            let gprs: Vec<usize> = self.config.registers.gpr_entries().into_iter().collect();
            let saved = gprs.iter().map(|&e| (e, self.current_value(e))).collect();
            self.processes[cur as usize].saved_gprs = saved;
        }
        let write_ports = self.config.geometry.write_ports;
        let restore = self.processes[next as usize].saved_registers();
        for (i, (entry, value)) in restore.into_iter().enumerate() {
            self.rf
                .write(i % write_ports, entry, value)
                .expect("restore writes distinct mapped entries");
            if let (Some(store), Some(puf)) = (self.shadow.as_mut(), self.puf.as_ref()) {
                store.hash_on_write(puf, entry, value).expect("entry fits challenge width");
            }
        }
        self.tlb.flush();
        self.counters.context_switches += 1;
        let from = self.current.map_or_else(|| "-".to_string(), |p| p.to_string());
        let e = self.ev(EventKind::ContextSwitch).with("from", from).with("to", next);
        self.emit(e);
        self.current = Some(next);
    }

    fn port_for(&self, pid: Pid) -> usize {
        match self.config.port_policy {
            PortPolicy::Fixed => self.config.paging_port,
            PortPolicy::PerProcess => self.processes[pid as usize].port,
        }
    }

    /// One architectural register read, with whatever verification is on.
    fn rf_read(&mut self, pid: Pid, port: usize, entry: usize) -> Word {
        let (read, outcome) = verified_read(
            &self.rf,
            &self.payloads,
            &self.defense.verify,
            port,
            entry,
            &mut self.busy,
        );
        self.busy[port] = true;
        let name = self.reg_name(entry);
        let e = self
            .ev(EventKind::RfRead)
            .with("pid", pid)
            .with("port", port)
            .with("entry", entry)
            .with("reg", name)
            .with("raw", hex(read.raw))
            .with("value", hex(read.value));
        self.emit(e);
        match outcome {
            Some(VerifyOutcome::Agreed { .. }) => self.counters.verified += 1,
            Some(VerifyOutcome::Mismatch(d)) => {
                self.counters.verified += 1;
                self.detect(d);
            }
            Some(VerifyOutcome::Skipped) => {
                self.counters.skipped += 1;
                let e = self.ev(EventKind::Skipped).with("pid", pid).with("port", port).with("entry", entry);
                self.emit(e);
            }
            None => {}
        }
        if let (Some(store), Some(puf)) = (self.shadow.as_ref(), self.puf.as_ref()) {
            let found = store
                .detection(puf, self.cycle, port, entry, read.value)
                .expect("protected entries are tagged at switch-in");
            if let Some(d) = found {
                self.detect(d);
            }
        }
        read.value
    }

    fn detect(&mut self, d: DetectionEvent) {
        let mut e = self
            .ev(EventKind::Detection)
            .with("kind", d.kind.to_string())
            .with("entry", d.entry)
            .with("port", d.port);
        if let Some(v) = d.verify_port {
            e = e.with("verify_port", v);
        }
        e = e.with("observed", hex(d.observed)).with("reference", hex(d.reference));
        self.emit(e);
        self.counters.detections.push(d);
    }

    /// Reads CS through the port selected by the port policy and extracts CPL.
    pub fn read_cpl(&mut self, pid: Pid) -> u8 {
        let port = self.port_for(pid);
        let cs = self.rf_read(pid, port, self.config.registers.cs);
        let cpl = self.config.registers.cpl_of(cs);
        let e = self
            .ev(EventKind::CplRead)
            .with("pid", pid)
            .with("port", port)
            .with("cs", hex(cs))
            .with("cpl", cpl);
        self.emit(e);
        cpl
    }

    /// Scripted read-back of a named register.
    pub fn read_register(&mut self, pid: Pid, name: &str) -> Option<Word> {
        let entry = self.config.registers.entry_of(name)?;
        let value = if entry == self.config.registers.cs {
            self.read_cpl(pid);
            let e = self.events.iter().rev().find(|e| e.kind == EventKind::RfRead);
            e.and_then(|e| e.int("value")).unwrap_or(0) as Word
        } else {
            let port = self.port_for(pid);
            self.rf_read(pid, port, entry)
        };
        self.processes[pid as usize].stats.register_reads.push(RegisterRead {
            cycle: self.cycle,
            name: name.to_ascii_lowercase(),
            value,
        });
        Some(value)
    }

    fn fault(&mut self, pid: Pid, op: &str, vaddr: u64, fault: AccessFault) {
        let p = &mut self.processes[pid as usize];
        p.status = ProcessStatus::Faulted;
        let e = match fault {
            AccessFault::SegFault(reason) => {
                p.stats.seg_faults += 1;
                self.ev(EventKind::SegFault).with("reason", reason.to_string())
            }
            AccessFault::PageFault => {
                p.stats.page_faults += 1;
                self.ev(EventKind::PageFault)
            }
        };
        let e = e.with("pid", pid).with("op", op).with("vaddr", hex(vaddr));
        self.emit(e);
    }

    /// Privilege and segment checks followed by translation. On a fault the
    /// process is marked faulted.
    fn access(&mut self, pid: Pid, vaddr: u64, is_write: bool) -> Result<Translation, AccessFault> {
        let op = if is_write { "write" } else { "read" };
        let cpl = self.read_cpl(pid);
        let port = self.port_for(pid);
        let ds_entry = self.config.registers.segments["ds"];
        let ds = self.rf_read(pid, port, ds_entry);
        let cs = self
            .events
            .iter()
            .rev()
            .find(|e| e.kind == EventKind::CplRead)
            .and_then(|e| e.int("cs"))
            .unwrap_or(0) as Word;
        let valid = |v: Word| self.config.valid_selectors.contains(&selector_index(v));
        let result = if !valid(cs) || !valid(ds) {
            Err(AccessFault::SegFault(SegFaultReason::InvalidSelector))
        } else if !self.config.address_space.contains(vaddr) {
            Err(AccessFault::PageFault)
        } else {
            translate_and_check(&self.page_table, &mut self.tlb, vaddr, is_write, cpl)
        };
        if let Err(f) = result {
            self.fault(pid, op, vaddr, f);
        }
        result
    }

    /// A store from `pid`. On success the L1 bus write is visible to the
    /// trigger and the payload control logic.
    pub fn cpu_write(&mut self, pid: Pid, vaddr: u64, data: Word) -> Access {
        let t = match self.access(pid, vaddr, true) {
            Ok(t) => t,
            Err(f) => return Access::Fault(f),
        };
        let kernel = vaddr >= self.config.address_space.kernel_base;
        let e = self
            .ev(EventKind::AccessOk)
            .with("pid", pid)
            .with("op", "write")
            .with("vaddr", hex(vaddr))
            .with("data", hex(data))
            .with("tlb", t.tlb.to_string());
        self.emit(e);
        self.processes[pid as usize].stats.writes += 1;
        self.memory.insert(t.paddr(), data);
        self.bus_write(pid, vaddr, data);
        Access::Ok { data, kernel }
    }

    fn bus_write(&mut self, pid: Pid, vaddr: u64, data: Word) {
        let set = self.l1.physical_set(vaddr);
        let word = u64::from(data);
        let event = if set == self.monitored_set && self.trigger.set_pattern.matches(word) {
            CycleEvent::HammerSet
        } else if set == self.reset_set && self.trigger.reset_pattern.matches(word) {
            CycleEvent::HammerReset
        } else {
            CycleEvent::Idle
        };
        if event != CycleEvent::Idle {
            debug_assert!(!self.trigger_seen, "one bus write per cycle");
            self.trigger_seen = true;
            let transition = self.trigger.observe_cycle(event, self.cycle);
            let cell = if event == CycleEvent::HammerSet { "set" } else { "reset" };
            let e = self
                .ev(EventKind::HammerObserved)
                .with("cell", cell)
                .with("pid", pid)
                .with("vaddr", hex(vaddr))
                .with("set", set)
                .with("hammers", self.trigger.hammers())
                .with("charge", self.trigger.charge_v())
                .with("reset_charge", self.trigger.reset_charge_v());
            self.emit(e);
            self.on_transition(transition);
        }
        let fired = self.payloads.on_bus_write(self.trigger.latched(), vaddr, data, self.cycle);
        for act in fired {
            let kind = self.payloads.attachments[act.payload].kind.trojan_kind();
            match act.activation {
                Activation::Force { entry, mask, force_to } => {
                    let (before, after) = apply_bc(&act.activation, &mut self.rf).expect("force activation");
                    let name = self.reg_name(entry);
                    let e = self
                        .ev(EventKind::PayloadFired)
                        .with("payload", act.payload)
                        .with("kind", kind.to_string())
                        .with("entry", entry)
                        .with("reg", name)
                        .with("mask", hex(mask))
                        .with("force_to", format!("{force_to:?}").to_lowercase())
                        .with("before", hex(before))
                        .with("after", hex(after));
                    self.emit(e);
                }
                Activation::Window { since, until, v_f } => {
                    let e = self
                        .ev(EventKind::PayloadFired)
                        .with("payload", act.payload)
                        .with("kind", kind.to_string())
                        .with("v_f", v_f);
                    self.emit(e);
                    let e = self
                        .ev(EventKind::WindowOpen)
                        .with("payload", act.payload)
                        .with("kind", kind.to_string())
                        .with("since", since)
                        .with("until", until)
                        .with("v_f", v_f);
                    self.emit(e);
                }
            }
        }
    }

    fn on_transition(&mut self, transition: Option<TriggerTransition>) {
        match transition {
            Some(TriggerTransition::Triggered) => {
                let hammers = self.trigger.hammers();
                self.counters.hammers_at_latch.get_or_insert(hammers);
                self.counters.triggered_at.get_or_insert(self.cycle);
                let e = self
                    .ev(EventKind::Triggered)
                    .with("hammers", hammers)
                    .with("charge", self.trigger.charge_v());
                self.emit(e);
                for i in 0..self.payloads.attachments.len() {
                    let kind = self.payloads.attachments[i].kind.trojan_kind();
                    let e = self.ev(EventKind::PayloadArmed).with("payload", i).with("kind", kind.to_string());
                    self.emit(e);
                }
            }
            Some(TriggerTransition::Reset) => {
                self.counters.reset_at = Some(self.cycle);
                let e = self.ev(EventKind::Reset).with("charge", self.trigger.charge_v());
                self.emit(e);
            }
            None => {}
        }
    }

    /// A load from `pid`.
    pub fn cpu_read(&mut self, pid: Pid, vaddr: u64) -> Access {
        let t = match self.access(pid, vaddr, false) {
            Ok(t) => t,
            Err(f) => return Access::Fault(f),
        };
        let data = self.memory(t.paddr());
        let kernel = vaddr >= self.config.address_space.kernel_base
            || self.page_table.lookup(vaddr >> PAGE_SHIFT).is_some_and(|p| p.us_bit);
        let stats = &mut self.processes[pid as usize].stats;
        if kernel {
            stats.kernel_reads += 1;
            stats.kernel_bytes += u64::from(Word::BITS / 8);
        } else {
            stats.user_reads += 1;
        }
        let e = self
            .ev(EventKind::AccessOk)
            .with("pid", pid)
            .with("op", "read")
            .with("vaddr", hex(vaddr))
            .with("data", hex(data))
            .with("kernel", kernel)
            .with("tlb", t.tlb.to_string());
        self.emit(e);
        Access::Ok { data, kernel }
    }

    /// Clones `parent` `n` times. Children start next cycle with the parent's
    /// context and are spread round-robin over the schedulable read ports.
    pub fn fork(&mut self, parent: Pid, n: usize, program: usize, pc: usize) -> Vec<Pid> {
        let ports = self.schedulable_ports();
        let gprs: BTreeMap<usize, Word> = if self.current == Some(parent) {
            self.config
                .registers
                .gpr_entries()
                .into_iter()
                .map(|e| (e, self.current_value(e)))
                .collect()
        } else {
            self.processes[parent as usize].saved_gprs.clone()
        };
        let template = self.processes[parent as usize].clone();
        (0..n)
            .map(|i| {
                let pid = self.processes.len() as Pid;
                self.processes.push(Process {
                    pid,
                    parent: Some(parent),
                    saved_gprs: gprs.clone(),
                    port: ports[i % ports.len()],
                    status: ProcessStatus::Runnable,
                    start_cycle: self.cycle + 1,
                    cursor: ProgramCursor { program, pc, done: 0 },
                    stats: ProcessStats::default(),
                    ..template.clone()
                });
                pid
            })
            .collect()
    }

    /// Closes the cycle: idle leak for the trigger, RF commit, charge sample.
    /// Returns the cycle's events in emission order.
    pub fn end_cycle(&mut self) -> Vec<TraceEvent> {
        if !self.trigger_seen {
            let t = self.trigger.observe_cycle(CycleEvent::Idle, self.cycle);
            self.on_transition(t);
        }
        for w in self.rf.commit() {
            let name = self.reg_name(w.entry);
            let e = self
                .ev(EventKind::RfWrite)
                .with("port", w.port)
                .with("entry", w.entry)
                .with("reg", name)
                .with("data", hex(w.data));
            self.emit(e);
        }
        let interval = self.config.charge_sample_interval;
        if interval > 0 && self.cycle.is_multiple_of(interval) {
            let e = self
                .ev(EventKind::ChargeSample)
                .with("charge", self.trigger.charge_v())
                .with("reset_charge", self.trigger.reset_charge_v())
                .with("latched", self.trigger.latched());
            self.emit(e);
        }
        std::mem::take(&mut self.events)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::payload::{ForceTo, PayloadControl, PayloadKind};
    use crate::trigger::DEFAULT_SET_ADDRESS;
    use proptest::prelude::*;

    const DEPLOY: u64 = 0x0060_2100;

    fn machine(payloads: Vec<PayloadAttachment>, defense: DefenseConfig) -> Machine {
        Machine::new(MachineConfig::default(), &TriggerConfig::default(), payloads, defense, 7).unwrap()
    }

    fn bc_cs() -> PayloadAttachment {
        PayloadAttachment::new(
            PayloadKind::Bc {
                target_entry: 0,
                bit_mask: 0b11,
                force_to: ForceTo::Zeros,
            },
            PayloadControl {
                addr_x: DEPLOY,
                addr_y: DEPLOY + 0x40,
                pattern: crate::trigger::PatternSpec::from_bits(32, &[(2, true)]).unwrap(),
            },
        )
    }

    /// Runs `f` inside one cycle with `pid` switched in.
    fn step<T>(m: &mut Machine, pid: Pid, f: impl FnOnce(&mut Machine) -> T) -> (T, Vec<TraceEvent>) {
        let c = m.cycle() + u64::from(m.current().is_some());
        m.begin_cycle(c);
        m.context_switch(pid);
        let out = f(m);
        (out, m.end_cycle())
    }

    #[test]
    fn hammering_latches_at_n_set() {
        let mut m = machine(vec![], DefenseConfig::default());
        let pid = m.spawn(Privilege::User, 0, 0, None);
        for i in 1..=1837u64 {
            let (a, _) = step(&mut m, pid, |m| m.cpu_write(pid, DEFAULT_SET_ADDRESS, 0x2));
            assert!(matches!(a, Access::Ok { .. }));
            assert_eq!(m.trigger().latched(), i == 1837, "hammer {i}");
        }
        assert_eq!(m.counters.hammers_at_latch, Some(1837));
    }

    #[test]
    fn other_set_does_not_charge() {
        let mut m = machine(vec![], DefenseConfig::default());
        let pid = m.spawn(Privilege::User, 0, 0, None);
        for _ in 0..1837 {
            step(&mut m, pid, |m| m.cpu_write(pid, DEFAULT_SET_ADDRESS + 0x40, 0x2));
        }
        assert_eq!(m.trigger().charge_v(), 0.0);
        assert!(!m.trigger().latched());
    }

    #[test]
    fn obfuscated_set_defeats_hammering() {
        // Boot seed whose permutation moves the monitored set.
        let l1 = L1Config::default();
        let s = l1.index(DEFAULT_SET_ADDRESS);
        let seed = (0..).find(|&b| ObfuscationMap::from_seed(l1.sets, b).apply(s) != s).unwrap();
        let mut defense = DefenseConfig::default();
        defense.obfuscation.enabled = true;
        defense.obfuscation.seed = Some(seed);
        let mut m = machine(vec![], defense);
        let pid = m.spawn(Privilege::User, 0, 0, None);
        m.begin_cycle(0);
        m.context_switch(pid);
        m.end_cycle();
        for c in 1..=1_000_000u64 {
            m.begin_cycle(c);
            m.cpu_write(pid, DEFAULT_SET_ADDRESS, 0x2);
            m.end_cycle();
        }
        assert_eq!(m.trigger().charge_v(), 0.0);
    }

    #[test]
    fn user_cannot_read_kernel_page() {
        let mut m = machine(vec![], DefenseConfig::default());
        let user = m.spawn(Privilege::User, 0, 0, None);
        let kernel = m.spawn(Privilege::Kernel, 0, 0, None);
        let (a, ev) = step(&mut m, user, |m| m.cpu_read(user, KERNEL_SECRET_ADDRESS));
        assert_eq!(a, Access::Fault(AccessFault::SegFault(SegFaultReason::KernelPage)));
        assert!(ev.iter().any(|e| e.kind == EventKind::SegFault));
        assert_eq!(m.process(user).status, ProcessStatus::Faulted);
        let (a, _) = step(&mut m, kernel, |m| m.cpu_read(kernel, KERNEL_SECRET_ADDRESS));
        assert_eq!(a, Access::Ok { data: KERNEL_SECRET, kernel: true });
    }

    #[test]
    fn read_only_and_unmapped() {
        let mut m = machine(vec![], DefenseConfig::default());
        let pid = m.spawn(Privilege::User, 0, 0, None);
        let (a, _) = step(&mut m, pid, |m| m.cpu_write(pid, 0x0804_8000, 1));
        assert_eq!(a, Access::Fault(AccessFault::SegFault(SegFaultReason::ReadOnly)));
        let pid = m.spawn(Privilege::User, 0, 0, None);
        let (a, _) = step(&mut m, pid, |m| m.cpu_read(pid, 0x1000));
        assert_eq!(a, Access::Fault(AccessFault::PageFault));
    }

    #[test]
    fn bc_escalates_until_context_switch() {
        let mut m = machine(vec![bc_cs()], DefenseConfig::default());
        let adv = m.spawn(Privilege::User, 0, 0, None);
        let other = m.spawn(Privilege::User, 0, 0, None);
        for _ in 0..1837 {
            step(&mut m, adv, |m| m.cpu_write(adv, DEFAULT_SET_ADDRESS, 0x2));
        }
        let (_, ev) = step(&mut m, adv, |m| m.cpu_write(adv, DEPLOY, 0x4));
        assert!(ev.iter().any(|e| e.kind == EventKind::PayloadFired));
        let (cpl, _) = step(&mut m, adv, |m| m.read_cpl(adv));
        assert_eq!(cpl, 0);
        let (a, _) = step(&mut m, adv, |m| m.cpu_read(adv, KERNEL_SECRET_ADDRESS));
        assert_eq!(a, Access::Ok { data: KERNEL_SECRET, kernel: true });
        step(&mut m, other, |_| ());
        let (cpl, _) = step(&mut m, adv, |m| m.read_cpl(adv));
        assert_eq!(cpl, 3);
    }

    #[test]
    fn hash_catches_bc_on_first_read() {
        let mut defense = DefenseConfig::default();
        defense.hash.enabled = true;
        let mut m = machine(vec![bc_cs()], defense);
        let adv = m.spawn(Privilege::User, 0, 0, None);
        for _ in 0..1837 {
            step(&mut m, adv, |m| m.cpu_write(adv, DEFAULT_SET_ADDRESS, 0x2));
        }
        assert!(m.counters.detections.is_empty());
        step(&mut m, adv, |m| m.cpu_write(adv, DEPLOY, 0x4));
        let (_, ev) = step(&mut m, adv, |m| m.read_cpl(adv));
        assert_eq!(ev.iter().filter(|e| e.kind == EventKind::Detection).count(), 1);
    }

    #[test]
    fn fork_assigns_ports_round_robin() {
        let mut m = machine(vec![], DefenseConfig::default());
        let parent = m.spawn(Privilege::User, 0, 0, None);
        step(&mut m, parent, |_| ());
        let kids = m.fork(parent, 8, 0, 0);
        let ports: Vec<_> = kids.iter().map(|&k| m.process(k).port).collect();
        assert_eq!(ports, [0, 1, 2, 3, 0, 1, 2, 3]);
        let one = m.fork(parent, 1, 0, 0);
        assert_eq!(m.process(one[0]).port, 0);

        let mut defense = DefenseConfig::default();
        defense.verify.mode = VerifyMode::Dedicated;
        let mut m = machine(vec![], defense);
        let parent = m.spawn(Privilege::User, 0, 0, None);
        step(&mut m, parent, |_| ());
        let kids = m.fork(parent, 4, 0, 0);
        let ports: Vec<_> = kids.iter().map(|&k| m.process(k).port).collect();
        assert_eq!(ports, [0, 1, 2, 0]);
    }

    #[test]
    fn identical_snapshots_leave_rf_unchanged() {
        let mut m = machine(vec![], DefenseConfig::default());
        let a = m.spawn(Privilege::User, 0, 0, None);
        let b = m.spawn(Privilege::User, 0, 0, None);
        // Same pid-dependent cr3 would differ, so align the contexts.
        let ctx = m.process(a).kernel_context.clone();
        m.process_mut(b).kernel_context = ctx;
        step(&mut m, a, |_| ());
        let before: Vec<Word> = (0..256).map(|e| m.rf().stored(e)).collect();
        step(&mut m, b, |_| ());
        let after: Vec<Word> = (0..256).map(|e| m.rf().stored(e)).collect();
        assert_eq!(before, after);
    }

    proptest! {
        /// Every process resumes with its own context, checked against a
        /// map-based model of per-process register contents.
        #[test]
        fn switch_round_trip(seq in prop::collection::vec(0u32..4, 1..60)) {
            let mut m = machine(vec![], DefenseConfig::default());
            let mut model: BTreeMap<Pid, BTreeMap<usize, Word>> = BTreeMap::new();
            for _ in 0..4 {
                let pid = m.spawn(Privilege::User, 0, 0, None);
                model.insert(pid, m.process(pid).saved_registers());
            }
            for pid in seq {
                step(&mut m, pid, |_| ());
                for (&entry, &v) in &model[&pid] {
                    prop_assert_eq!(m.rf().stored(entry), v);
                }
            }
        }

        /// Without payloads a CPL 3 process never gets data from a kernel page.
        #[test]
        fn no_trojan_no_kernel_data(ops in prop::collection::vec((any::<bool>(), prop::sample::select(vec![
            DEFAULT_SET_ADDRESS, KERNEL_SECRET_ADDRESS, KERNEL_SECRET_ADDRESS + 8, 0x0060_1000, 0x0804_8004, 0xBFFF_E010,
        ]), 0u32..8), 1..300)) {
            let mut m = machine(vec![], DefenseConfig::default());
            let mut pid = m.spawn(Privilege::User, 0, 0, None);
            for (write, vaddr, data) in ops {
                if m.process(pid).finished() {
                    pid = m.spawn(Privilege::User, 0, 0, None);
                }
                let (a, _) = step(&mut m, pid, |m| if write { m.cpu_write(pid, vaddr, data) } else { m.cpu_read(pid, vaddr) });
                let leaked = matches!(a, Access::Ok { kernel: true, .. });
                prop_assert!(!leaked);
            }
        }
    }
}
