// SPDX-License-Identifier: Apache-2.0

//! 4 KiB paging with a fully associative LRU TLB.
//!
//! The U/S bit follows the convention used by the exploit model: **1 marks a
//! kernel page** that only CPL 0 may touch. This is the inverse of the x86
//! encoding, where U/S = 1 grants user access.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

pub const PAGE_SHIFT: u32 = 12;
pub const PAGE_SIZE: u64 = 1 << PAGE_SHIFT;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pte {
    pub vpn: u64,
    pub pfn: u64,
    pub present: bool,
    /// 1 = kernel page.
    pub us_bit: bool,
    /// 0 = read-only.
    pub rw_bit: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PageTable {
    entries: BTreeMap<u64, Pte>,
}

impl PageTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn map(&mut self, pte: Pte) {
        self.entries.insert(pte.vpn, pte);
    }

    pub fn lookup(&self, vpn: u64) -> Option<&Pte> {
        self.entries.get(&vpn)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SegFaultReason {
    /// U/S = 1 page touched at CPL != 0.
    KernelPage,
    /// Write to a page with R/W = 0.
    ReadOnly,
    /// A segment register's selector does not index a valid descriptor.
    InvalidSelector,
}

impl fmt::Display for SegFaultReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SegFaultReason::KernelPage => "kernel_page",
            SegFaultReason::ReadOnly => "read_only",
            SegFaultReason::InvalidSelector => "invalid_selector",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "reason")]
pub enum AccessFault {
    SegFault(SegFaultReason),
    PageFault,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TlbStatus {
    Hit,
    Miss,
    Off,
}

impl fmt::Display for TlbStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TlbStatus::Hit => "hit",
            TlbStatus::Miss => "miss",
            TlbStatus::Off => "off",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TlbConfig {
    pub enabled: bool,
    pub entries: usize,
}

impl Default for TlbConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            entries: 16,
        }
    }
}

/// Fully associative TLB; least recently used entry is evicted.
#[derive(Debug, Clone)]
pub struct Tlb {
    config: TlbConfig,
    /// Most recently used last.
    lines: Vec<Pte>,
}

impl Tlb {
    pub fn new(config: TlbConfig) -> Self {
        Self {
            config,
            lines: Vec::with_capacity(config.entries),
        }
    }

    pub fn enabled(&self) -> bool {
        self.config.enabled && self.config.entries > 0
    }

    pub fn lookup(&mut self, vpn: u64) -> Option<Pte> {
        let i = self.lines.iter().position(|p| p.vpn == vpn)?;
        let pte = self.lines.remove(i);
        self.lines.push(pte);
        Some(pte)
    }

    pub fn fill(&mut self, pte: Pte) {
        if !self.enabled() {
            return;
        }
        self.lines.retain(|p| p.vpn != pte.vpn);
        if self.lines.len() == self.config.entries {
            self.lines.remove(0);
        }
        self.lines.push(pte);
    }

    pub fn flush(&mut self) {
        self.lines.clear();
    }

    pub fn len(&self) -> usize {
        self.lines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Translation {
    pub pfn: u64,
    pub offset: u64,
    pub tlb: TlbStatus,
}

impl Translation {
    pub fn paddr(&self) -> u64 {
        (self.pfn << PAGE_SHIFT) | self.offset
    }
}

/// Translates `vaddr` and applies the CPL x U/S and R/W checks.
///
/// Any CPL other than 0 is treated as unprivileged; rings 1 and 2 are unused.
pub fn translate_and_check(
    page_table: &PageTable,
    tlb: &mut Tlb,
    vaddr: u64,
    is_write: bool,
    current_cpl: u8,
) -> Result<Translation, AccessFault> {
    let vpn = vaddr >> PAGE_SHIFT;
    let offset = vaddr & (PAGE_SIZE - 1);
    let (pte, status) = if tlb.enabled() {
        match tlb.lookup(vpn) {
            Some(pte) => (pte, TlbStatus::Hit),
            None => {
                let pte = *page_table.lookup(vpn).ok_or(AccessFault::PageFault)?;
                if pte.present {
                    tlb.fill(pte);
                }
                (pte, TlbStatus::Miss)
            }
        }
    } else {
        (*page_table.lookup(vpn).ok_or(AccessFault::PageFault)?, TlbStatus::Off)
    };
    if !pte.present {
        return Err(AccessFault::PageFault);
    }
    if pte.us_bit && current_cpl != 0 {
        return Err(AccessFault::SegFault(SegFaultReason::KernelPage));
    }
    if is_write && !pte.rw_bit {
        return Err(AccessFault::SegFault(SegFaultReason::ReadOnly));
    }
    Ok(Translation {
        pfn: pte.pfn,
        offset,
        tlb: status,
    })
}
