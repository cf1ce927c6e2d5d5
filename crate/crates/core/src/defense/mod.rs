// SPDX-License-Identifier: Apache-2.0

//! Countermeasures: multi-port read verification, a PUF-keyed hash shadow
//! store for control/segment registers, and per-boot L1 set-index
//! obfuscation.

mod hash;
mod obfuscation;
mod puf;
mod verify;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::regfile::Word;

pub use hash::{digest, HashShadowStore, TagMismatch};
pub use obfuscation::{obfuscate_index, ObfuscationMap};
pub use puf::{puf_response, PufModel};
pub use verify::{schedulable_ports, verified_read, VerifyConfig, VerifyMode, VerifyOutcome};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DefenseError {
    #[error("protected entry {0} read before any tagged write")]
    MissingTag(usize),
    #[error("challenge {challenge:#x} does not fit in {width} bits")]
    ChallengeWidth { challenge: u64, width: u32 },
    #[error("{0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum DetectionKind {
    #[serde(rename = "RF_READ_MISMATCH")]
    RfReadMismatch,
    #[serde(rename = "REGISTER_HASH_MISMATCH")]
    RegisterHashMismatch,
}

impl fmt::Display for DetectionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DetectionKind::RfReadMismatch => "RF_READ_MISMATCH",
            DetectionKind::RegisterHashMismatch => "REGISTER_HASH_MISMATCH",
        })
    }
}

/// A countermeasure flagged a read. `observed` is what the primary port
/// returned; `reference` is the verifying port's word or the stored tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DetectionEvent {
    pub kind: DetectionKind,
    pub cycle: u64,
    pub entry: usize,
    pub port: usize,
    pub verify_port: Option<usize>,
    pub observed: u64,
    pub reference: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HashConfig {
    pub enabled: bool,
    /// Falls back to a value derived from the scenario seed.
    pub puf_seed: Option<u64>,
    pub response_width: u32,
}

impl Default for HashConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            puf_seed: None,
            response_width: 32,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObfuscationConfig {
    pub enabled: bool,
    /// Per-boot seed; falls back to a value derived from the scenario seed.
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DefenseConfig {
    pub verify: VerifyConfig,
    pub hash: HashConfig,
    pub obfuscation: ObfuscationConfig,
}

impl DefenseConfig {
    pub fn validate(&self, read_ports: usize) -> Result<(), DefenseError> {
        self.verify.validate(read_ports)?;
        if self.hash.response_width == 0 || self.hash.response_width > 64 {
            return Err(DefenseError::Config(format!(
                "response_width {} must be in 1..=64",
                self.hash.response_width
            )));
        }
        Ok(())
    }

    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        match self.verify.mode {
            VerifyMode::Off => {}
            VerifyMode::Dedicated => parts.push("verify-dedicated"),
            VerifyMode::Opportunistic => parts.push("verify-opportunistic"),
        }
        if self.hash.enabled {
            parts.push("puf-hash");
        }
        if self.obfuscation.enabled {
            parts.push("obfuscation");
        }
        if parts.is_empty() {
            "none".into()
        } else {
            parts.join("+")
        }
    }
}

/// Word-level data passed between the read path and the checks.
pub(crate) fn widen(w: Word) -> u64 {
    u64::from(w)
}
