// SPDX-License-Identifier: Apache-2.0

//! Capacitor-based Trojan trigger.
//!
//! The trigger watches the L1 write bus. Every cycle in which the monitored
//! line is written with data matching the SET pattern pumps a fixed amount of
//! charge onto the hidden storage node; every other cycle leaks a fixed amount.
//! When the node voltage reaches the threshold the SR latch asserts and stays
//! asserted until a reset event.
//!
//! Charge growth is linear per hammer. The only published anchor is the
//! endpoint (1837 consecutive hammers to reach ~0.5 V), so the per-hammer
//! step is `v_threshold / n_set`. Leakage is calibrated so a 30 % hammer duty
//! cycle still makes net progress while lower duty cycles drift back to zero.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative slack used when comparing accumulated charge against a threshold.
/// Summing `n` equal steps in floating point can land a few ulps short.
const THRESHOLD_SLACK: f64 = 1e-9;

pub const DEFAULT_N_SET: u32 = 1837;
pub const DEFAULT_N_RESET: u32 = 92;
pub const DEFAULT_V_MAX: f64 = 1.0;
pub const DEFAULT_V_THRESHOLD: f64 = 0.5;
pub const DEFAULT_EPSILON: f64 = 0.05;
/// Minimum hammer duty cycle (ON / (ON + OFF)) that still triggers.
pub const MIN_DUTY_CYCLE: f64 = 0.30;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TriggerError {
    #[error("pattern bus width must be between 1 and 64 bits, got {0}")]
    BusWidth(u32),
    #[error("pattern has no terms")]
    EmptyPattern,
    #[error("pattern bit {bit} is outside the {bus_width}-bit bus")]
    BitOutOfRange { bit: u32, bus_width: u32 },
    #[error("pattern constrains bit {0} more than once")]
    DuplicateBit(u32),
    #[error("n_set must be at least 1")]
    ZeroHammerCount,
    #[error("n_reset must be at least 1")]
    ZeroResetCount,
    #[error("threshold {v_threshold} V must lie in (0, {v_max}]")]
    Threshold { v_threshold: f64, v_max: f64 },
    #[error("epsilon {0} must lie in [0, 1)")]
    Epsilon(f64),
}

/// One constrained bit of a bus pattern.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatternTerm {
    pub bit: u32,
    pub value: bool,
}

/// A conjunction of fixed bit values on the data bus (P_SET / P_RESET).
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(into = "PatternDef")]
pub struct PatternSpec {
    bus_width: u32,
    terms: Vec<PatternTerm>,
}

impl PatternSpec {
    pub fn new(bus_width: u32, terms: Vec<PatternTerm>) -> Result<Self, TriggerError> {
        if bus_width == 0 || bus_width > 64 {
            return Err(TriggerError::BusWidth(bus_width));
        }
        if terms.is_empty() {
            return Err(TriggerError::EmptyPattern);
        }
        let mut seen = 0u64;
        for term in &terms {
            if term.bit >= bus_width {
                return Err(TriggerError::BitOutOfRange {
                    bit: term.bit,
                    bus_width,
                });
            }
            if seen & (1 << term.bit) != 0 {
                return Err(TriggerError::DuplicateBit(term.bit));
            }
            seen |= 1 << term.bit;
        }
        Ok(Self { bus_width, terms })
    }

    /// Builds a pattern from `(bit, value)` pairs.
    pub fn from_bits(bus_width: u32, bits: &[(u32, bool)]) -> Result<Self, TriggerError> {
        Self::new(
            bus_width,
            bits.iter()
                .map(|&(bit, value)| PatternTerm { bit, value })
                .collect(),
        )
    }

    pub fn bus_width(&self) -> u32 {
        self.bus_width
    }

    pub fn terms(&self) -> &[PatternTerm] {
        &self.terms
    }

    /// Bits constrained by the pattern.
    pub fn care_mask(&self) -> u64 {
        self.terms.iter().fold(0, |m, t| m | 1 << t.bit)
    }

    /// Required values of the constrained bits.
    pub fn required_bits(&self) -> u64 {
        self.terms
            .iter()
            .filter(|t| t.value)
            .fold(0, |m, t| m | 1 << t.bit)
    }

    pub fn matches(&self, data: u64) -> bool {
        data & self.care_mask() == self.required_bits()
    }

    /// True if some data word satisfies both patterns.
    pub fn overlaps(&self, other: &PatternSpec) -> bool {
        let common = self.care_mask() & other.care_mask();
        self.required_bits() & common == other.required_bits() & common
    }

    /// Smallest word that matches the pattern (all free bits zero).
    pub fn example_word(&self) -> u64 {
        self.required_bits()
    }
}

/// Unvalidated pattern as written in a scenario file:
/// `{ bus_width = 32, terms = [[1, 1], [0, 0]] }`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatternDef {
    #[serde(default = "default_bus_width")]
    pub bus_width: u32,
    pub terms: Vec<(u32, u8)>,
}

fn default_bus_width() -> u32 {
    32
}

impl PatternDef {
    pub fn build(&self) -> Result<PatternSpec, TriggerError> {
        let terms = self
            .terms
            .iter()
            .map(|&(bit, value)| PatternTerm {
                bit,
                value: value != 0,
            })
            .collect();
        PatternSpec::new(self.bus_width, terms)
    }
}

impl From<PatternSpec> for PatternDef {
    fn from(spec: PatternSpec) -> Self {
        PatternDef {
            bus_width: spec.bus_width,
            terms: spec
                .terms
                .into_iter()
                .map(|t| (t.bit, t.value as u8))
                .collect(),
        }
    }
}

/// True iff every term of `spec` holds in `data`.
pub fn match_pattern(spec: &PatternSpec, data: u64) -> bool {
    spec.matches(data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ResetMode {
    /// A second, smaller accumulator must see `n_reset` qualifying writes.
    #[default]
    Counted,
    /// The address/pattern AND gate resets the latch on the first write.
    Immediate,
}

/// Per-hammer charge step and per-idle-cycle leak, in volts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Calibration {
    pub delta_per_hammer: f64,
    pub leak_per_idle_cycle: f64,
}

impl Calibration {
    /// Leak-to-charge ratio; periodic schedules with hammer fraction `f`
    /// make net progress iff `f / (1 - f) > ratio`.
    pub fn leak_ratio(&self) -> f64 {
        self.leak_per_idle_cycle / self.delta_per_hammer
    }
}

/// Derives the linear charge model from the hammer-count anchor.
///
/// `leak = delta * (3/7) * (1 - epsilon)`: at a 30 % duty cycle a period of
/// 3 hammers and 7 idle cycles gains `3 * delta * epsilon`.
pub fn calibrate(
    n_set: u32,
    v_threshold: f64,
    v_max: f64,
    epsilon: f64,
) -> Result<Calibration, TriggerError> {
    if n_set == 0 {
        return Err(TriggerError::ZeroHammerCount);
    }
    if !(v_threshold > 0.0 && v_threshold <= v_max) {
        return Err(TriggerError::Threshold { v_threshold, v_max });
    }
    if !(0.0..1.0).contains(&epsilon) {
        return Err(TriggerError::Epsilon(epsilon));
    }
    let delta = v_threshold / f64::from(n_set);
    let on_off = MIN_DUTY_CYCLE / (1.0 - MIN_DUTY_CYCLE);
    Ok(Calibration {
        delta_per_hammer: delta,
        leak_per_idle_cycle: delta * on_off * (1.0 - epsilon),
    })
}

/// Validated trigger parameters.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TriggerConfig {
    pub set_address: u64,
    pub set_pattern: PatternSpec,
    pub reset_address: u64,
    pub reset_pattern: PatternSpec,
    pub v_max: f64,
    pub v_threshold: f64,
    pub n_set: u32,
    pub n_reset: u32,
    pub reset_mode: ResetMode,
    pub epsilon: f64,
}

/// Trigger address used by the reference exploit.
pub const DEFAULT_SET_ADDRESS: u64 = 0x0060_2010;
pub const DEFAULT_RESET_ADDRESS: u64 = 0x0060_3040;

/// P_SET = `10` on the two low data bits.
pub fn default_set_pattern() -> PatternSpec {
    PatternSpec::from_bits(32, &[(1, true), (0, false)]).expect("static pattern")
}
pub fn default_reset_pattern() -> PatternSpec {
    PatternSpec::from_bits(32, &[(1, false), (0, true)]).expect("static pattern")
}

impl Default for TriggerConfig {
    fn default() -> Self {
        Self {
            set_address: DEFAULT_SET_ADDRESS,
            set_pattern: default_set_pattern(),
            reset_address: DEFAULT_RESET_ADDRESS,
            reset_pattern: default_reset_pattern(),
            v_max: DEFAULT_V_MAX,
            v_threshold: DEFAULT_V_THRESHOLD,
            n_set: DEFAULT_N_SET,
            n_reset: DEFAULT_N_RESET,
            reset_mode: ResetMode::Counted,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

/// What the trigger saw on the bus this cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CycleEvent {
    HammerSet,
    HammerReset,
    Idle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TriggerTransition {
    Triggered,
    Reset,
}

/// Charge state of the trigger node plus the SR latch.
#[derive(Debug, Clone, PartialEq)]
pub struct TriggerCell {
    pub set_address: u64,
    pub set_pattern: PatternSpec,
    pub reset_address: u64,
    pub reset_pattern: PatternSpec,
    pub reset_mode: ResetMode,
    pub v_max: f64,
    pub v_threshold: f64,
    pub n_set: u32,
    pub n_reset: u32,
    pub calibration: Calibration,
    charge_v: f64,
    reset_charge_v: f64,
    latched: bool,
    /// Qualifying SET hammers observed since construction or last reset.
    hammers: u64,
    max_charge_v: f64,
}

impl TriggerCell {
    pub fn new(config: &TriggerConfig) -> Result<Self, TriggerError> {
        if config.n_reset == 0 {
            return Err(TriggerError::ZeroResetCount);
        }
        let calibration = calibrate(
            config.n_set,
            config.v_threshold,
            config.v_max,
            config.epsilon,
        )?;
        Ok(Self {
            set_address: config.set_address,
            set_pattern: config.set_pattern.clone(),
            reset_address: config.reset_address,
            reset_pattern: config.reset_pattern.clone(),
            reset_mode: config.reset_mode,
            v_max: config.v_max,
            v_threshold: config.v_threshold,
            n_set: config.n_set,
            n_reset: config.n_reset,
            calibration,
            charge_v: 0.0,
            reset_charge_v: 0.0,
            latched: false,
            hammers: 0,
            max_charge_v: 0.0,
        })
    }

    pub fn charge_v(&self) -> f64 {
        self.charge_v
    }

    pub fn reset_charge_v(&self) -> f64 {
        self.reset_charge_v
    }

    pub fn latched(&self) -> bool {
        self.latched
    }

    pub fn hammers(&self) -> u64 {
        self.hammers
    }

    /// Highest node voltage seen so far.
    pub fn max_charge_v(&self) -> f64 {
        self.max_charge_v
    }

    fn reaches(value: f64, threshold: f64) -> bool {
        value >= threshold * (1.0 - THRESHOLD_SLACK)
    }

    /// Advances the cell by one cycle.
    pub fn observe_cycle(&mut self, event: CycleEvent, _cycle: u64) -> Option<TriggerTransition> {
        match event {
            CycleEvent::HammerSet => {
                self.hammers += 1;
                self.charge_v = (self.charge_v + self.calibration.delta_per_hammer).min(self.v_max);
                self.max_charge_v = self.max_charge_v.max(self.charge_v);
                if !self.latched && Self::reaches(self.charge_v, self.v_threshold) {
                    self.latched = true;
                    return Some(TriggerTransition::Triggered);
                }
                None
            }
            CycleEvent::Idle => {
                self.charge_v = (self.charge_v - self.calibration.leak_per_idle_cycle).max(0.0);
                None
            }
            CycleEvent::HammerReset => match self.reset_mode {
                ResetMode::Immediate => {
                    self.clear();
                    Some(TriggerTransition::Reset)
                }
                ResetMode::Counted => {
                    self.reset_charge_v += self.v_threshold / f64::from(self.n_reset);
                    if Self::reaches(self.reset_charge_v, self.v_threshold) {
                        self.clear();
                        Some(TriggerTransition::Reset)
                    } else {
                        None
                    }
                }
            },
        }
    }

    fn clear(&mut self) {
        self.latched = false;
        self.charge_v = 0.0;
        self.reset_charge_v = 0.0;
        self.hammers = 0;
    }
}
