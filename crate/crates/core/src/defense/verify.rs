// SPDX-License-Identifier: Apache-2.0

use serde::{Deserialize, Serialize};

use super::{widen, DefenseError, DetectionEvent, DetectionKind};
use crate::regfile::{PortRead, ReadFilter, RegisterFile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum VerifyMode {
    #[default]
    Off,
    /// A reserved port re-reads every verified entry in the same cycle.
    Dedicated,
    /// Any idle port re-reads; with no idle port the check is skipped.
    Opportunistic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    pub mode: VerifyMode,
    pub reserved_port: usize,
    /// Probability that a read port is occupied by unrelated traffic in any
    /// cycle. Only affects opportunistic verification.
    pub port_load: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            mode: VerifyMode::Off,
            reserved_port: 3,
            port_load: 0.0,
        }
    }
}

impl VerifyConfig {
    pub fn validate(&self, read_ports: usize) -> Result<(), DefenseError> {
        if self.mode == VerifyMode::Dedicated && self.reserved_port >= read_ports {
            return Err(DefenseError::Config(format!(
                "reserved_port {} outside {read_ports} read ports",
                self.reserved_port
            )));
        }
        if self.mode == VerifyMode::Dedicated && read_ports < 2 {
            return Err(DefenseError::Config(
                "dedicated verification needs at least two read ports".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.port_load) {
            return Err(DefenseError::Config(format!(
                "port_load {} must be in [0, 1]",
                self.port_load
            )));
        }
        Ok(())
    }
}

/// Read ports available to ordinary traffic.
pub fn schedulable_ports(config: &VerifyConfig, read_ports: usize) -> Vec<usize> {
    (0..read_ports)
        .filter(|&p| !(config.mode == VerifyMode::Dedicated && p == config.reserved_port))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VerifyOutcome {
    Agreed { verify_port: usize },
    Mismatch(DetectionEvent),
    Skipped,
}

/// Reads `entry` on `primary_port` and re-reads it on a verification port.
///
/// `busy[p]` marks ports already occupied this cycle; the port picked for
/// opportunistic verification is marked busy on return.
pub fn verified_read(
    rf: &RegisterFile,
    filter: &dyn ReadFilter,
    config: &VerifyConfig,
    primary_port: usize,
    entry: usize,
    busy: &mut [bool],
) -> (PortRead, Option<VerifyOutcome>) {
    let primary = rf
        .read(primary_port, entry, filter)
        .expect("caller validated port and entry");
    let verify_port = match config.mode {
        VerifyMode::Off => return (primary, None),
        VerifyMode::Dedicated => config.reserved_port,
        VerifyMode::Opportunistic => {
            match (0..busy.len()).find(|&p| p != primary_port && !busy[p]) {
                Some(p) => {
                    busy[p] = true;
                    p
                }
                None => return (primary, Some(VerifyOutcome::Skipped)),
            }
        }
    };
    let check = rf
        .read(verify_port, entry, filter)
        .expect("verify port validated");
    let outcome = if check.value == primary.value {
        VerifyOutcome::Agreed { verify_port }
    } else {
        VerifyOutcome::Mismatch(DetectionEvent {
            kind: DetectionKind::RfReadMismatch,
            cycle: rf.cycle(),
            entry,
            port: primary_port,
            verify_port: Some(verify_port),
            observed: widen(primary.value),
            reference: widen(check.value),
        })
    };
    (primary, Some(outcome))
}
