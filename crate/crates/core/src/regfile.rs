// SPDX-License-Identifier: Apache-2.0

//! Behavioral multi-ported register file.
//!
//! Storage is a flat array of words. Writes are staged for the current cycle
//! and committed by [`RegisterFile::commit`]; a read of an entry with a staged
//! write returns the staged data (write-to-read bypass). Every read passes
//! through a [`ReadFilter`] at the local-bitline evaluation point, which is
//! where read-path payloads inject their faults.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Word = u32;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RegFileError {
    #[error("entry {entry} already has a pending write in cycle {cycle}")]
    WriteConflict { entry: usize, cycle: u64 },
    #[error("write port {port} out of range (have {ports})")]
    WritePort { port: usize, ports: usize },
    #[error("read port {port} out of range (have {ports})")]
    ReadPort { port: usize, ports: usize },
    #[error("entry {entry} out of range (have {entries})")]
    Entry { entry: usize, entries: usize },
    #[error("invalid geometry: {0}")]
    Geometry(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Geometry {
    pub entries: usize,
    pub word_bits: u32,
    pub read_ports: usize,
    pub write_ports: usize,
    pub cells_per_lbl: usize,
    pub lbls_per_gbl: usize,
}

impl Default for Geometry {
    /// 256 x 32-bit, 4R/4W, 16 cells per local bitline, 16 LBLs per GBL.
    fn default() -> Self {
        Self {
            entries: 256,
            word_bits: 32,
            read_ports: 4,
            write_ports: 4,
            cells_per_lbl: 16,
            lbls_per_gbl: 16,
        }
    }
}

impl Geometry {
    pub fn validate(&self) -> Result<(), RegFileError> {
        let fields = [
            self.entries,
            self.word_bits as usize,
            self.read_ports,
            self.write_ports,
            self.cells_per_lbl,
            self.lbls_per_gbl,
        ];
        if fields.contains(&0) {
            return Err(RegFileError::Geometry("all fields must be at least 1".into()));
        }
        if self.word_bits > Word::BITS {
            return Err(RegFileError::Geometry(format!(
                "word_bits {} exceeds {}",
                self.word_bits,
                Word::BITS
            )));
        }
        if self.cells_per_lbl * self.lbls_per_gbl != self.entries {
            return Err(RegFileError::Geometry(format!(
                "cells_per_lbl x lbls_per_gbl = {} but entries = {}",
                self.cells_per_lbl * self.lbls_per_gbl,
                self.entries
            )));
        }
        Ok(())
    }

    /// Local bitline group holding `entry`.
    pub fn lbl_group(&self, entry: usize) -> usize {
        entry / self.cells_per_lbl
    }

    pub fn word_mask(&self) -> Word {
        if self.word_bits >= Word::BITS {
            Word::MAX
        } else {
            (1 << self.word_bits) - 1
        }
    }
}

/// LBL group of `addr` in the default 16-cells-per-bitline geometry.
pub fn lbl_group(addr: usize) -> usize {
    Geometry::default().lbl_group(addr)
}

/// Fault hook applied to every read after bypass resolution.
pub trait ReadFilter {
    fn filter_read(&self, port: usize, entry: usize, raw: Word, cycle: u64) -> Word;
}

/// Trojan-free read path.
pub struct NoFilter;

impl ReadFilter for NoFilter {
    fn filter_read(&self, _port: usize, _entry: usize, raw: Word, _cycle: u64) -> Word {
        raw
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PendingWrite {
    pub port: usize,
    pub entry: usize,
    pub data: Word,
}

/// Result of one port read: the bitcell/bypass value and what the port drove out.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PortRead {
    pub raw: Word,
    pub value: Word,
}

#[derive(Debug, Clone)]
pub struct RegisterFile {
    geometry: Geometry,
    words: Vec<Word>,
    cycle: u64,
    pending: Vec<PendingWrite>,
}

impl RegisterFile {
    pub fn new(geometry: Geometry) -> Result<Self, RegFileError> {
        geometry.validate()?;
        Ok(Self {
            geometry,
            words: vec![0; geometry.entries],
            cycle: 0,
            pending: Vec::with_capacity(geometry.write_ports),
        })
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn cycle(&self) -> u64 {
        self.cycle
    }

    fn check_entry(&self, entry: usize) -> Result<(), RegFileError> {
        if entry >= self.geometry.entries {
            return Err(RegFileError::Entry {
                entry,
                entries: self.geometry.entries,
            });
        }
        Ok(())
    }

    /// Stages a write; it becomes visible in storage at [`commit`](Self::commit).
    pub fn write(&mut self, port: usize, entry: usize, data: Word) -> Result<(), RegFileError> {
        if port >= self.geometry.write_ports {
            return Err(RegFileError::WritePort {
                port,
                ports: self.geometry.write_ports,
            });
        }
        self.check_entry(entry)?;
        if self.pending.iter().any(|w| w.entry == entry) {
            return Err(RegFileError::WriteConflict {
                entry,
                cycle: self.cycle,
            });
        }
        self.pending.push(PendingWrite {
            port,
            entry,
            data: data & self.geometry.word_mask(),
        });
        Ok(())
    }

    /// Reads `entry` through `port`, applying `filter` at the evaluation point.
    pub fn read(
        &self,
        port: usize,
        entry: usize,
        filter: &dyn ReadFilter,
    ) -> Result<PortRead, RegFileError> {
        if port >= self.geometry.read_ports {
            return Err(RegFileError::ReadPort {
                port,
                ports: self.geometry.read_ports,
            });
        }
        self.check_entry(entry)?;
        let raw = self
            .pending
            .iter()
            .find(|w| w.entry == entry)
            .map_or(self.words[entry], |w| w.data);
        let value = filter.filter_read(port, entry, raw, self.cycle) & self.geometry.word_mask();
        Ok(PortRead { raw, value })
    }

    /// Commits staged writes and returns them in staging order.
    pub fn commit(&mut self) -> Vec<PendingWrite> {
        let writes = std::mem::take(&mut self.pending);
        for w in &writes {
            self.words[w.entry] = w.data;
        }
        writes
    }

    /// Commits staged writes and moves to the next cycle.
    pub fn end_cycle(&mut self) -> Vec<PendingWrite> {
        let writes = self.commit();
        self.cycle += 1;
        writes
    }

    /// Bitcell contents, ignoring any staged write.
    pub fn stored(&self, entry: usize) -> Word {
        self.words[entry]
    }

    /// Drives masked storage bits to 0 or 1 without a port write (retention
    /// corruption). Returns the previous and new word.
    pub fn force_bits(&mut self, entry: usize, mask: Word, ones: bool) -> (Word, Word) {
        let before = self.words[entry];
        let after = if ones { before | mask } else { before & !mask };
        self.words[entry] = after & self.geometry.word_mask();
        (before, self.words[entry])
    }

    pub fn set_cycle(&mut self, cycle: u64) {
        self.cycle = cycle;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashMap;

    fn rf() -> RegisterFile {
        RegisterFile::new(Geometry::default()).unwrap()
    }

    #[test]
    fn write_then_read_next_cycle() {
        let mut rf = rf();
        rf.write(0, 5, 0xDEAD_BEEF).unwrap();
        rf.end_cycle();
        for port in 0..4 {
            assert_eq!(rf.read(port, 5, &NoFilter).unwrap().value, 0xDEAD_BEEF);
        }
    }

    #[test]
    fn same_entry_same_cycle_conflicts() {
        let mut rf = rf();
        rf.write(0, 5, 1).unwrap();
        assert_eq!(
            rf.write(1, 5, 2),
            Err(RegFileError::WriteConflict { entry: 5, cycle: 0 })
        );
    }

    #[test]
    fn distinct_entries_never_interfere() {
        // Exhaustive small model: every pair of (port, entry) writes with
        // distinct entries in an 8-entry file.
        let g = Geometry {
            entries: 8,
            cells_per_lbl: 4,
            lbls_per_gbl: 2,
            ..Geometry::default()
        };
        for pa in 0..4 {
            for pb in 0..4 {
                for ea in 0..8 {
                    for eb in 0..8 {
                        let mut rf = RegisterFile::new(g).unwrap();
                        rf.write(pa, ea, 0xA).unwrap();
                        let second = rf.write(pb, eb, 0xB);
                        if ea == eb {
                            assert!(second.is_err());
                            continue;
                        }
                        second.unwrap();
                        rf.end_cycle();
                        for e in 0..8 {
                            let want = if e == ea {
                                0xA
                            } else if e == eb {
                                0xB
                            } else {
                                0
                            };
                            assert_eq!(rf.stored(e), want);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn bypass_within_cycle() {
        let mut rf = rf();
        rf.write(0, 7, 0x1234).unwrap();
        assert_eq!(rf.stored(7), 0);
        for port in 0..4 {
            let r = rf.read(port, 7, &NoFilter).unwrap();
            assert_eq!(r.raw, 0x1234);
            assert_eq!(r.value, 0x1234);
        }
    }

    #[test]
    fn port_and_entry_bounds() {
        let mut rf = rf();
        assert!(matches!(rf.write(4, 0, 0), Err(RegFileError::WritePort { .. })));
        assert!(matches!(rf.write(0, 256, 0), Err(RegFileError::Entry { .. })));
        assert!(matches!(rf.read(4, 0, &NoFilter), Err(RegFileError::ReadPort { .. })));
        assert!(matches!(rf.read(0, 256, &NoFilter), Err(RegFileError::Entry { .. })));
    }

    #[test]
    fn lbl_groups_partition_entries() {
        assert_eq!(lbl_group(0), 0);
        assert_eq!(lbl_group(255), 15);
        for g in 0..16 {
            let preimage: Vec<usize> = (0..256).filter(|&a| lbl_group(a) == g).collect();
            assert_eq!(preimage, (16 * g..16 * g + 16).collect::<Vec<_>>());
        }
    }

    #[test]
    fn geometry_rejects_inconsistent_shape() {
        let g = Geometry {
            cells_per_lbl: 8,
            ..Geometry::default()
        };
        assert!(g.validate().is_err());
        let g = Geometry {
            read_ports: 0,
            ..Geometry::default()
        };
        assert!(g.validate().is_err());
    }

    #[test]
    fn force_bits_masks() {
        let mut rf = rf();
        rf.write(0, 3, 0xFFFF_FFFF).unwrap();
        rf.end_cycle();
        assert_eq!(rf.force_bits(3, 0x3, false), (0xFFFF_FFFF, 0xFFFF_FFFC));
        rf.write(0, 4, 0).unwrap();
        rf.end_cycle();
        assert_eq!(rf.force_bits(4, 0x3, true), (0, 0x3));
    }

    #[derive(Debug, Clone)]
    enum Op {
        Write(usize, usize, Word),
        Read(usize, usize),
        Tick,
    }

    fn op() -> impl Strategy<Value = Op> {
        prop_oneof![
            (0usize..4, 0usize..24, any::<Word>()).prop_map(|(p, e, d)| Op::Write(p, e, d)),
            (0usize..4, 0usize..24).prop_map(|(p, e)| Op::Read(p, e)),
            Just(Op::Tick),
        ]
    }

    proptest! {
        /// Map-based reference: committed values plus same-cycle bypass.
        #[test]
        fn matches_reference_model(ops in prop::collection::vec(op(), 0..400)) {
            let mut rf = rf();
            let mut committed: HashMap<usize, Word> = HashMap::new();
            let mut staged: HashMap<usize, Word> = HashMap::new();
            for op in ops {
                match op {
                    Op::Write(p, e, d) => {
                        let r = rf.write(p, e, d);
                        match staged.entry(e) {
                            std::collections::hash_map::Entry::Occupied(_) => prop_assert!(r.is_err()),
                            std::collections::hash_map::Entry::Vacant(v) => {
                                prop_assert!(r.is_ok());
                                v.insert(d);
                            }
                        }
                    }
                    Op::Read(p, e) => {
                        let want = staged.get(&e).or(committed.get(&e)).copied().unwrap_or(0);
                        prop_assert_eq!(rf.read(p, e, &NoFilter).unwrap().value, want);
                        let all: Vec<Word> = (0..4).map(|q| rf.read(q, e, &NoFilter).unwrap().value).collect();
                        prop_assert!(all.iter().all(|&v| v == want));
                    }
                    Op::Tick => {
                        rf.end_cycle();
                        committed.extend(staged.drain());
                    }
                }
            }
        }
    }
}
