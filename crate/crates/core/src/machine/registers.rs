// SPDX-License-Identifier: Apache-2.0

//! Placement of architectural registers in register-file entries.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::regfile::{Geometry, Word};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RegClass {
    Segment,
    Control,
    General,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegisterMap {
    pub cs: usize,
    /// Lowest bit of the 2-bit CPL field inside CS.
    pub cpl_shift: u32,
    pub segments: BTreeMap<String, usize>,
    pub control: BTreeMap<String, usize>,
    pub gprs: BTreeMap<String, usize>,
}

fn named(pairs: &[(&str, usize)]) -> BTreeMap<String, usize> {
    pairs.iter().map(|&(n, e)| (n.to_string(), e)).collect()
}

impl Default for RegisterMap {
    /// Segment registers share LBL group 0 with CS; control registers sit in
    /// group 1 and GPRs in group 2.
    fn default() -> Self {
        Self {
            cs: 0,
            cpl_shift: 0,
            segments: named(&[("ss", 1), ("ds", 2), ("es", 3), ("fs", 4), ("gs", 5)]),
            control: named(&[("cr0", 16), ("cr1", 17), ("cr2", 18), ("cr3", 19), ("cr4", 20)]),
            gprs: named(&[
                ("eax", 32),
                ("ebx", 33),
                ("ecx", 34),
                ("edx", 35),
                ("esi", 36),
                ("edi", 37),
                ("ebp", 38),
                ("esp", 39),
                ("eip", 40),
            ]),
        }
    }
}

impl RegisterMap {
    /// Every mapped register in a fixed order: CS, segments, control, GPRs.
    pub fn all(&self) -> Vec<(String, usize, RegClass)> {
        let mut out = vec![("cs".to_string(), self.cs, RegClass::Segment)];
        for (class, map) in [
            (RegClass::Segment, &self.segments),
            (RegClass::Control, &self.control),
            (RegClass::General, &self.gprs),
        ] {
            out.extend(map.iter().map(|(n, &e)| (n.clone(), e, class)));
        }
        out
    }

    pub fn entry_of(&self, name: &str) -> Option<usize> {
        let name = name.to_ascii_lowercase();
        if name == "cs" {
            return Some(self.cs);
        }
        self.segments
            .get(&name)
            .or_else(|| self.control.get(&name))
            .or_else(|| self.gprs.get(&name))
            .copied()
    }

    pub fn name_of(&self, entry: usize) -> Option<String> {
        self.all().into_iter().find(|r| r.1 == entry).map(|r| r.0)
    }

    pub fn class_of(&self, entry: usize) -> Option<RegClass> {
        self.all().into_iter().find(|r| r.1 == entry).map(|r| r.2)
    }

    /// Entries covered by the hash shadow store: CS, segment and control registers.
    pub fn protected_entries(&self) -> BTreeSet<usize> {
        self.all()
            .into_iter()
            .filter(|r| r.2 != RegClass::General)
            .map(|r| r.1)
            .collect()
    }

    pub fn gpr_entries(&self) -> BTreeSet<usize> {
        self.gprs.values().copied().collect()
    }

    pub fn cpl_mask(&self) -> Word {
        0b11 << self.cpl_shift
    }

    pub fn cpl_of(&self, cs_value: Word) -> u8 {
        ((cs_value >> self.cpl_shift) & 0b11) as u8
    }

    pub fn validate(&self, geometry: &Geometry) -> Result<(), String> {
        if self.cpl_shift + 2 > geometry.word_bits {
            return Err(format!(
                "cpl_shift {} leaves no room for a 2-bit field in {}-bit words",
                self.cpl_shift, geometry.word_bits
            ));
        }
        if !self.segments.contains_key("ds") {
            return Err("segments must map `ds`".into());
        }
        let mut seen = BTreeMap::new();
        for (name, entry, _) in self.all() {
            if entry >= geometry.entries {
                return Err(format!("register {name} maps to entry {entry} outside {} entries", geometry.entries));
            }
            if let Some(prev) = seen.insert(entry, name.clone()) {
                return Err(format!("registers {prev} and {name} both map to entry {entry}"));
            }
        }
        Ok(())
    }
}

/// Privilege a process starts in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Privilege {
    Kernel,
    #[default]
    User,
}

impl Privilege {
    pub fn cpl(self) -> u8 {
        match self {
            Privilege::Kernel => 0,
            Privilege::User => 3,
        }
    }
}

/// Flat-model selectors: GDT index 2/3 kernel code/data, 4/5 user code/data.
pub const KERNEL_CS: Word = 0x10;
pub const KERNEL_DS: Word = 0x18;
pub const USER_CS: Word = 0x23;
pub const USER_DS: Word = 0x2B;
pub const DEFAULT_SELECTOR_INDICES: [u16; 4] = [2, 3, 4, 5];

pub fn selector_index(value: Word) -> u16 {
    ((value & 0xFFFF) >> 3) as u16
}

/// Initial register contents for a process at the given privilege.
pub fn initial_values(map: &RegisterMap, privilege: Privilege, pid: u32) -> BTreeMap<usize, Word> {
    let (cs, ds) = match privilege {
        Privilege::Kernel => (KERNEL_CS, KERNEL_DS),
        Privilege::User => (USER_CS, USER_DS),
    };
    let mut values = BTreeMap::new();
    for (name, entry, class) in map.all() {
        let v = match (class, name.as_str()) {
            (RegClass::Segment, "cs") => (cs & !map.cpl_mask()) | (Word::from(privilege.cpl()) << map.cpl_shift),
            (RegClass::Segment, _) => ds,
            (RegClass::Control, "cr0") => 0x8005_0033,
            (RegClass::Control, "cr3") => 0x0010_0000 + (pid << 12),
            (RegClass::Control, "cr4") => 0x0000_06F0,
            (RegClass::General, "esp") => 0xBFFF_F000,
            (RegClass::General, "eip") => 0x0804_8000,
            _ => 0,
        };
        values.insert(entry, v);
    }
    values
}
