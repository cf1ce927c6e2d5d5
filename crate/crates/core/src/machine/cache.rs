// SPDX-License-Identifier: Apache-2.0

use serde::{Deserialize, Serialize};

use crate::defense::ObfuscationMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct L1Config {
    pub sets: usize,
    pub line_size: u64,
}

impl Default for L1Config {
    fn default() -> Self {
        Self {
            sets: 64,
            line_size: 64,
        }
    }
}

impl L1Config {
    pub fn validate(&self) -> Result<(), String> {
        if !self.sets.is_power_of_two() {
            return Err(format!("sets = {} is not a power of two", self.sets));
        }
        if !self.line_size.is_power_of_two() {
            return Err(format!("line_size = {} is not a power of two", self.line_size));
        }
        Ok(())
    }

    /// Virtual set index before any obfuscation.
    pub fn index(&self, vaddr: u64) -> usize {
        ((vaddr / self.line_size) % self.sets as u64) as usize
    }
}

/// Virtually indexed L1 d-cache. Only set selection is modeled; the trigger
/// taps the write bus of one physical set.
#[derive(Debug, Clone)]
pub struct L1Cache {
    pub config: L1Config,
    obfuscation: Option<ObfuscationMap>,
}

impl L1Cache {
    pub fn new(config: L1Config, obfuscation: Option<ObfuscationMap>) -> Self {
        Self { config, obfuscation }
    }

    pub fn index(&self, vaddr: u64) -> usize {
        self.config.index(vaddr)
    }

    /// Set that actually receives the write.
    pub fn physical_set(&self, vaddr: u64) -> usize {
        let i = self.index(vaddr);
        self.obfuscation.as_ref().map_or(i, |m| m.apply(i))
    }

    pub fn obfuscation(&self) -> Option<&ObfuscationMap> {
        self.obfuscation.as_ref()
    }
}
