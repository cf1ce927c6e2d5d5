// SPDX-License-Identifier: Apache-2.0

//! Line-oriented trace stream.
//!
//! One event per line: `cycle<TAB>Kind<TAB>key=value...`. Floats are printed
//! with nine decimals so the text, and the SHA-256 digest over it, are
//! identical on every platform.

use std::fmt::{self, Write as _};

use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum EventKind {
    HammerObserved,
    ChargeSample,
    Triggered,
    Reset,
    PayloadArmed,
    PayloadFired,
    WindowOpen,
    WindowClose,
    RfRead,
    RfWrite,
    CplRead,
    AccessOk,
    SegFault,
    PageFault,
    ContextSwitch,
    Detection,
    Skipped,
}

impl EventKind {
    pub const ALL: [EventKind; 17] = [
        EventKind::HammerObserved,
        EventKind::ChargeSample,
        EventKind::Triggered,
        EventKind::Reset,
        EventKind::PayloadArmed,
        EventKind::PayloadFired,
        EventKind::WindowOpen,
        EventKind::WindowClose,
        EventKind::RfRead,
        EventKind::RfWrite,
        EventKind::CplRead,
        EventKind::AccessOk,
        EventKind::SegFault,
        EventKind::PageFault,
        EventKind::ContextSwitch,
        EventKind::Detection,
        EventKind::Skipped,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EventKind::HammerObserved => "HammerObserved",
            EventKind::ChargeSample => "ChargeSample",
            EventKind::Triggered => "Triggered",
            EventKind::Reset => "Reset",
            EventKind::PayloadArmed => "PayloadArmed",
            EventKind::PayloadFired => "PayloadFired",
            EventKind::WindowOpen => "WindowOpen",
            EventKind::WindowClose => "WindowClose",
            EventKind::RfRead => "RfRead",
            EventKind::RfWrite => "RfWrite",
            EventKind::CplRead => "CplRead",
            EventKind::AccessOk => "AccessOk",
            EventKind::SegFault => "SegFault",
            EventKind::PageFault => "PageFault",
            EventKind::ContextSwitch => "ContextSwitch",
            EventKind::Detection => "Detection",
            EventKind::Skipped => "Skipped",
        }
    }

    pub fn phase(self) -> Phase {
        match self {
            EventKind::HammerObserved
            | EventKind::ChargeSample
            | EventKind::Triggered
            | EventKind::Reset => Phase::Trigger,
            EventKind::PayloadArmed
            | EventKind::PayloadFired
            | EventKind::WindowOpen
            | EventKind::WindowClose => Phase::PayloadControl,
            EventKind::RfRead
            | EventKind::CplRead
            | EventKind::AccessOk
            | EventKind::SegFault
            | EventKind::PageFault => Phase::Reads,
            EventKind::RfWrite | EventKind::ContextSwitch => Phase::WriteCommit,
            EventKind::Detection | EventKind::Skipped => Phase::Defense,
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Order in which events of one cycle appear in the trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Phase {
    Trigger,
    PayloadControl,
    Reads,
    WriteCommit,
    Defense,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Field {
    U(u64),
    Hex(u64),
    F(f64),
    B(bool),
    S(String),
}

impl fmt::Display for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Field::U(v) => write!(f, "{v}"),
            Field::Hex(v) => write!(f, "{v:#x}"),
            Field::F(v) => write!(f, "{v:.9}"),
            Field::B(v) => f.write_str(if *v { "1" } else { "0" }),
            Field::S(s) => f.write_str(s),
        }
    }
}

impl From<u64> for Field {
    fn from(v: u64) -> Self {
        Field::U(v)
    }
}
impl From<usize> for Field {
    fn from(v: usize) -> Self {
        Field::U(v as u64)
    }
}
impl From<u32> for Field {
    fn from(v: u32) -> Self {
        Field::U(u64::from(v))
    }
}
impl From<u8> for Field {
    fn from(v: u8) -> Self {
        Field::U(u64::from(v))
    }
}
impl From<bool> for Field {
    fn from(v: bool) -> Self {
        Field::B(v)
    }
}
impl From<f64> for Field {
    fn from(v: f64) -> Self {
        Field::F(v)
    }
}
impl From<&str> for Field {
    fn from(v: &str) -> Self {
        Field::S(v.to_string())
    }
}
impl From<String> for Field {
    fn from(v: String) -> Self {
        Field::S(v)
    }
}

pub fn hex(v: impl Into<u64>) -> Field {
    Field::Hex(v.into())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceEvent {
    pub cycle: u64,
    pub kind: EventKind,
    pub fields: Vec<(&'static str, Field)>,
}

impl TraceEvent {
    pub fn new(cycle: u64, kind: EventKind) -> Self {
        Self {
            cycle,
            kind,
            fields: Vec::new(),
        }
    }

    pub fn with(mut self, key: &'static str, value: impl Into<Field>) -> Self {
        self.fields.push((key, value.into()));
        self
    }

    pub fn get(&self, key: &str) -> Option<&Field> {
        self.fields.iter().find(|(k, _)| *k == key).map(|(_, v)| v)
    }

    /// Integer value of a `U` or `Hex` field.
    pub fn int(&self, key: &str) -> Option<u64> {
        match self.get(key)? {
            Field::U(v) | Field::Hex(v) => Some(*v),
            Field::B(b) => Some(u64::from(*b)),
            _ => None,
        }
    }

    pub fn text(&self, key: &str) -> Option<&str> {
        match self.get(key)? {
            Field::S(s) => Some(s),
            _ => None,
        }
    }

    pub fn float(&self, key: &str) -> Option<f64> {
        match self.get(key)? {
            Field::F(v) => Some(*v),
            _ => None,
        }
    }

    pub fn write_line(&self, out: &mut String) {
        let _ = write!(out, "{}\t{}", self.cycle, self.kind);
        for (k, v) in &self.fields {
            let _ = write!(out, "\t{k}={v}");
        }
    }

    pub fn line(&self) -> String {
        let mut s = String::new();
        self.write_line(&mut s);
        s
    }
}

impl fmt::Display for TraceEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.line())
    }
}

/// Accumulates events, hashing every line. Retention can be switched off
/// for long sweeps where only the digest and counters matter.
#[derive(Debug, Clone)]
pub struct Trace {
    retain: bool,
    events: Vec<TraceEvent>,
    hasher: Sha256,
    count: u64,
    last_cycle: u64,
    scratch: String,
}

impl Trace {
    pub fn new(retain: bool) -> Self {
        Self {
            retain,
            events: Vec::new(),
            hasher: Sha256::new(),
            count: 0,
            last_cycle: 0,
            scratch: String::new(),
        }
    }

    /// Appends the events of one cycle, ordered by phase. The sort is stable,
    /// so events within a phase keep their emission order.
    pub fn extend_cycle(&mut self, mut events: Vec<TraceEvent>) {
        events.sort_by_key(|e| e.kind.phase());
        for e in events {
            self.push(e);
        }
    }

    fn push(&mut self, event: TraceEvent) {
        debug_assert!(event.cycle >= self.last_cycle, "trace cycles must not decrease");
        self.last_cycle = event.cycle;
        self.scratch.clear();
        event.write_line(&mut self.scratch);
        self.scratch.push('\n');
        self.hasher.update(self.scratch.as_bytes());
        self.count += 1;
        if self.retain {
            self.events.push(event);
        }
    }

    pub fn events(&self) -> &[TraceEvent] {
        &self.events
    }

    pub fn len(&self) -> u64 {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn retained(&self) -> bool {
        self.retain
    }

    pub fn digest(&self) -> String {
        let out = self.hasher.clone().finalize();
        out.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn text(&self) -> String {
        let mut s = String::new();
        for e in &self.events {
            e.write_line(&mut s);
            s.push('\n');
        }
        s
    }

    pub fn of_kind(&self, kind: EventKind) -> impl Iterator<Item = &TraceEvent> {
        self.events.iter().filter(move |e| e.kind == kind)
    }
}

/// Trace text with every `ChargeSample` value blanked.
pub fn without_charge_values(events: &[TraceEvent]) -> Vec<String> {
    events
        .iter()
        .map(|e| {
            if e.kind == EventKind::ChargeSample {
                format!("{}\t{}", e.cycle, e.kind)
            } else {
                e.line()
            }
        })
        .collect()
}
