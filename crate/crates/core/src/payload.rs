// SPDX-License-Identifier: Apache-2.0

//! BC, RP and LBL payloads.
//!
//! A payload stays dormant until the trigger latch is asserted. After that a
//! qualifying write on the L1 bus (its control address, optionally with the
//! SET pattern) deploys it:
//!
//! * **BC** shorts masked storage nodes to ground or Vdd. The corruption lives
//!   in the bitcells and survives until the entry is rewritten.
//! * **RP** forces masked bits of one entry on one read port to `!V_F` for a
//!   bounded window. `V_F` is 1 when the deploy write carried the SET pattern.
//! * **LBL** forces one bit position of every entry sharing a local bitline,
//!   on one read port, for a bounded window.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::regfile::{Geometry, ReadFilter, RegisterFile, Word};
use crate::trigger::PatternSpec;

/// Stand-in for "a few clock cycles (equal to L1 cache latency)".
pub const DEFAULT_WINDOW_CYCLES: u64 = 4;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PayloadError {
    #[error("no overhead figures for {kind} with polarity {polarity} covering {bits} bit(s)")]
    UnknownVariant {
        kind: TrojanKind,
        polarity: Polarity,
        bits: u32,
    },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TrojanKind {
    #[serde(rename = "BC")]
    Bc,
    #[serde(rename = "RP")]
    Rp,
    #[serde(rename = "LBL")]
    Lbl,
}

impl fmt::Display for TrojanKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrojanKind::Bc => "BC",
            TrojanKind::Rp => "RP",
            TrojanKind::Lbl => "LBL",
        })
    }
}

/// Direction of the injected fault.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum Polarity {
    #[serde(rename = "0->1")]
    ZeroToOne,
    #[serde(rename = "1->0")]
    #[default]
    OneToZero,
}

impl fmt::Display for Polarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Polarity::ZeroToOne => "0->1",
            Polarity::OneToZero => "1->0",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForceTo {
    /// NMOS to ground (V_BC_Tr0, deployed via `addr_x`).
    Zeros,
    /// PMOS to Vdd (V_BC_Tr1, deployed via `addr_y`).
    Ones,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PayloadKind {
    Bc {
        target_entry: usize,
        bit_mask: Word,
        force_to: ForceTo,
    },
    Rp {
        target_entry: usize,
        bit_mask: Word,
        infected_port: usize,
        window_cycles: u64,
        /// Overhead row to report; the runtime polarity follows `V_F`.
        table_polarity: Polarity,
    },
    Lbl {
        infected_port: usize,
        bit_position: u32,
        group_index: usize,
        forced_value: bool,
        window_cycles: u64,
    },
}

impl PayloadKind {
    pub fn trojan_kind(&self) -> TrojanKind {
        match self {
            PayloadKind::Bc { .. } => TrojanKind::Bc,
            PayloadKind::Rp { .. } => TrojanKind::Rp,
            PayloadKind::Lbl { .. } => TrojanKind::Lbl,
        }
    }
}

/// Control-logic inputs shared by all payload kinds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PayloadControl {
    pub addr_x: u64,
    pub addr_y: u64,
    pub pattern: PatternSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PayloadState {
    Dormant,
    /// Window covers cycles `since..until`. `v_f` is the RP force polarity.
    Active { since: u64, until: u64, v_f: bool },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PayloadAttachment {
    pub kind: PayloadKind,
    pub control: PayloadControl,
    pub state: PayloadState,
    pub fires: u64,
}

/// What a qualifying bus write did to a payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    /// Force masked bits of `entry` in storage.
    Force {
        entry: usize,
        mask: Word,
        force_to: ForceTo,
    },
    /// Read-path window opened for `since..until`.
    Window { since: u64, until: u64, v_f: bool },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActivationEvent {
    pub payload: usize,
    pub cycle: u64,
    pub activation: Activation,
}

impl PayloadAttachment {
    pub fn new(kind: PayloadKind, control: PayloadControl) -> Self {
        Self {
            kind,
            control,
            state: PayloadState::Dormant,
            fires: 0,
        }
    }

    pub fn validate(&self, geometry: &Geometry) -> Result<(), PayloadError> {
        let word = geometry.word_mask();
        let check_entry = |e: usize| {
            if e >= geometry.entries {
                Err(PayloadError::Invalid(format!(
                    "target entry {e} outside {} entries",
                    geometry.entries
                )))
            } else {
                Ok(())
            }
        };
        let check_port = |p: usize| {
            if p >= geometry.read_ports {
                Err(PayloadError::Invalid(format!(
                    "infected port {p} outside {} read ports",
                    geometry.read_ports
                )))
            } else {
                Ok(())
            }
        };
        let check_mask = |m: Word| {
            if m == 0 || m & !word != 0 {
                Err(PayloadError::Invalid(format!(
                    "bit mask {m:#x} must be non-empty and within {} bits",
                    geometry.word_bits
                )))
            } else {
                Ok(())
            }
        };
        let check_window = |w: u64| {
            if w == 0 {
                Err(PayloadError::Invalid("window_cycles must be at least 1".into()))
            } else {
                Ok(())
            }
        };
        match self.kind {
            PayloadKind::Bc {
                target_entry,
                bit_mask,
                ..
            } => {
                check_entry(target_entry)?;
                check_mask(bit_mask)
            }
            PayloadKind::Rp {
                target_entry,
                bit_mask,
                infected_port,
                window_cycles,
                ..
            } => {
                check_entry(target_entry)?;
                check_mask(bit_mask)?;
                check_port(infected_port)?;
                check_window(window_cycles)
            }
            PayloadKind::Lbl {
                infected_port,
                bit_position,
                group_index,
                window_cycles,
                ..
            } => {
                check_port(infected_port)?;
                check_window(window_cycles)?;
                if bit_position >= geometry.word_bits {
                    return Err(PayloadError::Invalid(format!(
                        "bit_position {bit_position} outside {}-bit word",
                        geometry.word_bits
                    )));
                }
                if group_index >= geometry.lbls_per_gbl {
                    return Err(PayloadError::Invalid(format!(
                        "group_index {group_index} outside {} LBL groups",
                        geometry.lbls_per_gbl
                    )));
                }
                Ok(())
            }
        }
    }

    pub fn is_active(&self, cycle: u64) -> bool {
        matches!(self.state, PayloadState::Active { since, until, .. } if since <= cycle && cycle < until)
    }

    /// Returns to dormant once the window has elapsed. True if it just closed.
    pub fn expire(&mut self, cycle: u64) -> bool {
        match self.state {
            PayloadState::Active { until, .. } if cycle >= until => {
                self.state = PayloadState::Dormant;
                true
            }
            _ => false,
        }
    }

    /// The arming write lands after this cycle's reads, so the window starts
    /// on the next cycle.
    fn open_window(&mut self, cycle: u64, window: u64, v_f: bool) -> Activation {
        let since = cycle + 1;
        let until = since + window;
        self.state = PayloadState::Active { since, until, v_f };
        Activation::Window { since, until, v_f }
    }

    /// Control logic for one L1 bus write.
    pub fn on_bus_write(
        &mut self,
        trigger_latched: bool,
        addr: u64,
        data: Word,
        cycle: u64,
    ) -> Option<Activation> {
        if !trigger_latched {
            return None;
        }
        let matched = self.control.pattern.matches(u64::from(data));
        let activation = match self.kind {
            PayloadKind::Bc {
                target_entry,
                bit_mask,
                force_to,
            } => {
                // V_BC_Tr0 is decoded from addr_x, V_BC_Tr1 from addr_y.
                let gate = match force_to {
                    ForceTo::Zeros => self.control.addr_x,
                    ForceTo::Ones => self.control.addr_y,
                };
                if addr != gate || !matched {
                    return None;
                }
                Activation::Force {
                    entry: target_entry,
                    mask: bit_mask,
                    force_to,
                }
            }
            PayloadKind::Rp { window_cycles, .. } => {
                if addr != self.control.addr_x {
                    return None;
                }
                self.open_window(cycle, window_cycles, matched)
            }
            PayloadKind::Lbl { window_cycles, .. } => {
                if addr != self.control.addr_y || !matched {
                    return None;
                }
                self.open_window(cycle, window_cycles, true)
            }
        };
        self.fires += 1;
        Some(activation)
    }

    /// Read-path corruption contributed by this payload.
    fn corrupt(&self, cells_per_lbl: usize, port: usize, entry: usize, raw: Word, cycle: u64) -> Word {
        if !self.is_active(cycle) {
            return raw;
        }
        let PayloadState::Active { v_f, .. } = self.state else {
            return raw;
        };
        match self.kind {
            PayloadKind::Rp {
                target_entry,
                bit_mask,
                infected_port,
                ..
            } if port == infected_port && entry == target_entry => {
                if v_f {
                    raw & !bit_mask
                } else {
                    raw | bit_mask
                }
            }
            PayloadKind::Lbl {
                infected_port,
                bit_position,
                group_index,
                forced_value,
                ..
            } if port == infected_port && entry / cells_per_lbl == group_index => {
                let bit = 1 << bit_position;
                if forced_value {
                    raw | bit
                } else {
                    raw & !bit
                }
            }
            _ => raw,
        }
    }
}

/// Applies a BC activation to storage. Returns `(before, after)`.
pub fn apply_bc(activation: &Activation, rf: &mut RegisterFile) -> Option<(Word, Word)> {
    match *activation {
        Activation::Force {
            entry,
            mask,
            force_to,
        } => Some(rf.force_bits(entry, mask, force_to == ForceTo::Ones)),
        Activation::Window { .. } => None,
    }
}

/// Read-path filter over all attachments, applied in attachment order.
pub fn filter_read(
    payloads: &[PayloadAttachment],
    cells_per_lbl: usize,
    port: usize,
    entry: usize,
    raw: Word,
    cycle: u64,
) -> Word {
    payloads
        .iter()
        .fold(raw, |v, p| p.corrupt(cells_per_lbl, port, entry, v, cycle))
}

/// All payloads attached to one register file.
#[derive(Debug, Clone, Default)]
pub struct PayloadSet {
    pub cells_per_lbl: usize,
    pub attachments: Vec<PayloadAttachment>,
}

impl PayloadSet {
    pub fn new(geometry: &Geometry, attachments: Vec<PayloadAttachment>) -> Self {
        Self {
            cells_per_lbl: geometry.cells_per_lbl,
            attachments,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.attachments.is_empty()
    }

    pub fn on_bus_write(
        &mut self,
        trigger_latched: bool,
        addr: u64,
        data: Word,
        cycle: u64,
    ) -> Vec<ActivationEvent> {
        self.attachments
            .iter_mut()
            .enumerate()
            .filter_map(|(i, p)| {
                p.on_bus_write(trigger_latched, addr, data, cycle)
                    .map(|activation| ActivationEvent {
                        payload: i,
                        cycle,
                        activation,
                    })
            })
            .collect()
    }

    /// Closes elapsed windows, returning the indices that closed.
    pub fn expire(&mut self, cycle: u64) -> Vec<usize> {
        self.attachments
            .iter_mut()
            .enumerate()
            .filter_map(|(i, p)| p.expire(cycle).then_some(i))
            .collect()
    }
}

impl ReadFilter for PayloadSet {
    fn filter_read(&self, port: usize, entry: usize, raw: Word, cycle: u64) -> Word {
        filter_read(&self.attachments, self.cells_per_lbl, port, entry, raw, cycle)
    }
}

/// Area/power figures for one 2-bit Trojan variant, including control logic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverheadRecord {
    pub kind: TrojanKind,
    pub polarity: Polarity,
    pub static_power_nw: f64,
    pub dynamic_power_uw: f64,
    pub area_um2: f64,
    pub use_case: String,
}

/// (kind, polarity, static nW, dynamic uW, area um^2, use case)
pub const OVERHEAD_TABLE: [(TrojanKind, Polarity, f64, f64, f64, &str); 6] = [
    (TrojanKind::Bc, Polarity::ZeroToOne, 0.079, 62.44, 0.056, "Kernel Leak"),
    (TrojanKind::Bc, Polarity::OneToZero, 0.083, 8.37, 0.023, "Kernel Leak"),
    (TrojanKind::Rp, Polarity::ZeroToOne, 12.93, 45.38, 0.048, "Kernel Leak"),
    (TrojanKind::Rp, Polarity::OneToZero, 33.73, 112.34, 0.064, "Kernel Leak"),
    (TrojanKind::Lbl, Polarity::ZeroToOne, 35.28, 57.54, 0.022, "DoS"),
    (TrojanKind::Lbl, Polarity::OneToZero, 11.26, 24.57, 0.026, "DoS"),
];

/// Minimum payload transistor W/L found sufficient, reported as metadata:
/// (kind, polarity, W/L).
pub const PAYLOAD_SIZING: [(TrojanKind, Polarity, u32); 6] = [
    (TrojanKind::Bc, Polarity::OneToZero, 4),
    (TrojanKind::Bc, Polarity::ZeroToOne, 24),
    (TrojanKind::Rp, Polarity::ZeroToOne, 6),
    (TrojanKind::Rp, Polarity::OneToZero, 15),
    (TrojanKind::Lbl, Polarity::ZeroToOne, 3),
    (TrojanKind::Lbl, Polarity::OneToZero, 7),
];

pub fn overhead_row(kind: TrojanKind, polarity: Polarity) -> OverheadRecord {
    let row = OVERHEAD_TABLE
        .iter()
        .find(|r| r.0 == kind && r.1 == polarity)
        .expect("table covers every kind and polarity");
    OverheadRecord {
        kind,
        polarity,
        static_power_nw: row.2,
        dynamic_power_uw: row.3,
        area_um2: row.4,
        use_case: row.5.to_string(),
    }
}

/// Table row for one attachment. The figures characterize 2-bit BC/RP
/// Trojans and a single infected local bitline for LBL.
pub fn overhead_for(attachment: &PayloadAttachment) -> Result<OverheadRecord, PayloadError> {
    let (kind, polarity, bits) = match attachment.kind {
        PayloadKind::Bc {
            bit_mask, force_to, ..
        } => (
            TrojanKind::Bc,
            match force_to {
                ForceTo::Ones => Polarity::ZeroToOne,
                ForceTo::Zeros => Polarity::OneToZero,
            },
            bit_mask.count_ones(),
        ),
        PayloadKind::Rp {
            bit_mask,
            table_polarity,
            ..
        } => (TrojanKind::Rp, table_polarity, bit_mask.count_ones()),
        PayloadKind::Lbl { forced_value, .. } => (
            TrojanKind::Lbl,
            if forced_value {
                Polarity::ZeroToOne
            } else {
                Polarity::OneToZero
            },
            2,
        ),
    };
    if bits != 2 {
        return Err(PayloadError::UnknownVariant {
            kind,
            polarity,
            bits,
        });
    }
    Ok(overhead_row(kind, polarity))
}

pub fn overhead_report(attachments: &[PayloadAttachment]) -> Result<Vec<OverheadRecord>, PayloadError> {
    attachments.iter().map(overhead_for).collect()
}
