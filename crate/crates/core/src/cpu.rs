//! Branch prediction, the speculation-window model, and the mispredict
//! performance counter.
//!
//! Prediction uses a pattern history table (PHT) of k-bit saturating
//! counters. Speculation depth is modeled as a window in cycles: the
//! latency of the unresolved guard-operand load, reduced by however much
//! unresolved backlog earlier speculation has piled up. A transient load
//! completes (and leaves microarchitectural traces) only if its latency
//! fits inside the effective window.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::Cycles;

/// Resolved direction of a conditional branch. For the bounds-check victim,
/// `Taken` is the in-bounds path (the body executes).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    Taken,
    NotTaken,
}

/// PHT shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictorConfig {
    /// Saturating-counter width in bits.
    pub counter_bits: u8,
    /// Number of PHT entries; must be a power of two.
    pub entries: usize,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        PredictorConfig {
            counter_bits: 3,
            entries: 256,
        }
    }
}

impl PredictorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.counter_bits == 0 || self.counter_bits > 8 {
            return Err(SimError::InvalidConfig(
                "predictor counter width must be 1..=8 bits".into(),
            ));
        }
        if !self.entries.is_power_of_two() {
            return Err(SimError::InvalidConfig(
                "PHT entry count must be a power of two".into(),
            ));
        }
        Ok(())
    }

    /// Saturation ceiling `2^k - 1`.
    pub fn max_counter(&self) -> u8 {
        ((1u16 << self.counter_bits) - 1) as u8
    }

    /// Predict-taken boundary `2^(k-1)`.
    pub fn taken_threshold(&self) -> u8 {
        1 << (self.counter_bits - 1)
    }
}

/// Minimal number of taken-outcome updates that move a k-bit counter from
/// its initial 0 to the predict-taken region: exactly `2^(k-1)`.
pub fn minimal_trainings(counter_bits: u8) -> u32 {
    1 << (counter_bits - 1)
}

/// Pattern history table of k-bit saturating counters, all starting at 0
/// (strongly not-taken).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredictorState {
    config: PredictorConfig,
    table: Vec<u8>,
}

impl PredictorState {
    pub fn new(config: PredictorConfig) -> Result<Self> {
        config.validate()?;
        Ok(PredictorState {
            table: vec![0; config.entries],
            config,
        })
    }

    pub fn config(&self) -> &PredictorConfig {
        &self.config
    }

    fn slot(&self, branch: u64) -> usize {
        (branch as usize) & (self.config.entries - 1)
    }

    pub fn counter(&self, branch: u64) -> u8 {
        self.table[self.slot(branch)]
    }

    /// Direction the PHT currently predicts for `branch`.
    pub fn predict(&self, branch: u64) -> Outcome {
        if self.counter(branch) >= self.config.taken_threshold() {
            Outcome::Taken
        } else {
            Outcome::NotTaken
        }
    }

    /// Feeds the resolved `outcome` back into the PHT (saturating +/-1) and
    /// returns the prediction that was in effect when the branch executed,
    /// so callers can account mispredictions.
    pub fn update(&mut self, branch: u64, outcome: Outcome) -> Outcome {
        let prediction = self.predict(branch);
        let slot = self.slot(branch);
        match outcome {
            Outcome::Taken => {
                if self.table[slot] < self.config.max_counter() {
                    self.table[slot] += 1;
                }
            }
            Outcome::NotTaken => {
                self.table[slot] = self.table[slot].saturating_sub(1);
            }
        }
        prediction
    }
}

/// Speculation depth available to a transient load.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpeculationContext {
    /// Latency of the unresolved guard-operand load opening this window.
    pub base_window: Cycles,
    /// Cycles of backlog from earlier, still-unresolved speculation nested
    /// around this one.
    pub pending_resolution: Cycles,
}

impl SpeculationContext {
    /// Window actually usable by the innermost transient load.
    pub fn effective_window(&self) -> Cycles {
        self.base_window.saturating_sub(self.pending_resolution)
    }

    /// Whether a transient load of the given latency completes before the
    /// guard resolves and the pipeline squashes.
    pub fn admits(&self, transient_load_latency: Cycles) -> bool {
        transient_load_latency <= self.effective_window()
    }
}

/// Backlog bookkeeping shared by successive speculation windows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpeculationState {
    /// Unresolved-speculation backlog in cycles.
    pub pending_resolution: Cycles,
    /// Backlog added per attack-loop iteration by the enclosing loop branch
    /// whose condition operand is itself uncached (defaults to the DRAM
    /// row-miss latency).
    pub backlog_accrual: Cycles,
    /// Counterfactual switch: when true, memory fences clear the backlog.
    /// Real fences order memory operations without resolving branches, so
    /// the default is false.
    pub fence_drains: bool,
}

impl Default for SpeculationState {
    fn default() -> Self {
        SpeculationState {
            pending_resolution: 0,
            backlog_accrual: 280,
            fence_drains: false,
        }
    }
}

impl SpeculationState {
    /// Charges one iteration's worth of unresolved outer-branch backlog.
    pub fn accrue(&mut self) {
        self.pending_resolution += self.backlog_accrual;
    }

    /// Retires `n` loop iterations' worth of backlog.
    pub fn reduce(&mut self, n: Cycles) {
        self.pending_resolution = self.pending_resolution.saturating_sub(n);
    }

    /// Serializing drain: everything pending resolves.
    pub fn clear(&mut self) {
        self.pending_resolution = 0;
    }

    /// Window for a guard load of the given latency under the current
    /// backlog.
    pub fn context(&self, base_window: Cycles) -> SpeculationContext {
        SpeculationContext {
            base_window,
            pending_resolution: self.pending_resolution,
        }
    }
}

/// Reading of the mispredict counter: deltas since the last reset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PmcReading {
    pub mispredicted_taken_conditional: u64,
    pub cycles: Cycles,
}

/// Performance-counter model. `mispredicted_taken_conditional` counts
/// conditional branches that executed speculatively down the taken path
/// and were then found mispredicted — exactly the event a transiently
/// executed bounds-check bypass produces once per round.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PmcState {
    total_events: u64,
    events_at_reset: u64,
    cycle_at_reset: Cycles,
}

impl PmcState {
    /// Accounts one resolved branch.
    pub fn record(&mut self, prediction: Outcome, outcome: Outcome) {
        if prediction == Outcome::Taken && outcome != prediction {
            self.total_events += 1;
        }
    }

    pub fn read(&self, now: Cycles) -> PmcReading {
        PmcReading {
            mispredicted_taken_conditional: self.total_events - self.events_at_reset,
            cycles: now.saturating_sub(self.cycle_at_reset),
        }
    }

    pub fn reset(&mut self, now: Cycles) {
        self.events_at_reset = self.total_events;
        self.cycle_at_reset = now;
    }
}
