//! Latency model for every timed micro-event in the simulator.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::Cycles;

/// Latency (in cycles) assigned to each class of micro-event, plus an
/// optional bounded per-round measurement jitter.
///
/// The defaults encode the timing separation the whole pipeline relies on:
/// a cache hit resolves well under the 100-cycle probe threshold while any
/// DRAM access lands well above it, and a `clflush` is cheap enough (< 200)
/// that flush-based hammering stays within the flip-rate budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimingModel {
    /// Latency of a load served by the cache.
    pub cache_hit: Cycles,
    /// Latency of a DRAM access that hits the open row in the row buffer.
    pub rowbuf_hit: Cycles,
    /// Latency of a DRAM access that must open (activate) its row.
    pub rowbuf_miss: Cycles,
    /// Cost of one `clflush`.
    pub clflush_cost: Cycles,
    /// Cost of one ALU op (also one iteration of the empty drain loop).
    pub alu_op: Cycles,
    /// Cost of a syscall used as a serializing backlog drain.
    pub syscall_cost: Cycles,
    /// Upper bound of the uniform per-round jitter term; 0 disables jitter.
    pub jitter_bound: Cycles,
}

/// Probe latencies below this threshold classify as cache hits.
pub const LATENCY_THRESHOLD: Cycles = 100;

impl Default for TimingModel {
    fn default() -> Self {
        TimingModel {
            cache_hit: 40,
            rowbuf_hit: 180,
            rowbuf_miss: 280,
            clflush_cost: 150,
            alu_op: 1,
            syscall_cost: 2000,
            jitter_bound: 0,
        }
    }
}

impl TimingModel {
    /// Validates the structural constraints the rest of the simulator
    /// assumes: `cache_hit < 100 < rowbuf_hit < rowbuf_miss` and
    /// `clflush_cost < 200`.
    pub fn validate(&self) -> Result<()> {
        if self.cache_hit >= LATENCY_THRESHOLD {
            return Err(SimError::InvalidConfig(format!(
                "cache_hit ({}) must be below the {LATENCY_THRESHOLD}-cycle probe threshold",
                self.cache_hit
            )));
        }
        if self.rowbuf_hit <= LATENCY_THRESHOLD {
            return Err(SimError::InvalidConfig(format!(
                "rowbuf_hit ({}) must be above the {LATENCY_THRESHOLD}-cycle probe threshold",
                self.rowbuf_hit
            )));
        }
        if self.rowbuf_miss <= self.rowbuf_hit {
            return Err(SimError::InvalidConfig(format!(
                "rowbuf_miss ({}) must exceed rowbuf_hit ({})",
                self.rowbuf_miss, self.rowbuf_hit
            )));
        }
        if self.clflush_cost >= 200 {
            return Err(SimError::InvalidConfig(format!(
                "clflush_cost ({}) must stay below 200 cycles",
                self.clflush_cost
            )));
        }
        if self.alu_op == 0 {
            return Err(SimError::InvalidConfig("alu_op must be nonzero".into()));
        }
        Ok(())
    }

    /// True when no jitter is applied anywhere.
    pub fn noise_free(&self) -> bool {
        self.jitter_bound == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_model_is_valid() {
        TimingModel::default().validate().unwrap();
    }

    #[test]
    fn default_separation_brackets_threshold() {
        let t = TimingModel::default();
        assert!(t.cache_hit < LATENCY_THRESHOLD);
        assert!(t.rowbuf_hit > LATENCY_THRESHOLD);
        assert!(t.rowbuf_miss > t.rowbuf_hit);
        assert!(t.clflush_cost < 200);
    }

    #[test]
    fn rejects_slow_cache_hit() {
        let t = TimingModel {
            cache_hit: 120,
            ..TimingModel::default()
        };
        assert!(matches!(t.validate(), Err(SimError::InvalidConfig(_))));
    }

    #[test]
    fn rejects_fast_rowbuf_hit() {
        let t = TimingModel {
            rowbuf_hit: 90,
            ..TimingModel::default()
        };
        assert!(t.validate().is_err());
    }

    #[test]
    fn rejects_expensive_clflush() {
        let t = TimingModel {
            clflush_cost: 250,
            ..TimingModel::default()
        };
        assert!(t.validate().is_err());
    }

    #[test]
    fn rejects_inverted_dram_latencies() {
        let t = TimingModel {
            rowbuf_hit: 280,
            rowbuf_miss: 180,
            ..TimingModel::default()
        };
        assert!(t.validate().is_err());
    }
}
