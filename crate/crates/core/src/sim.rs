//! The simulator proper: a virtual clock driving cache, DRAM, and the
//! speculation machinery as one deterministic state machine.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cache::{CacheConfig, CacheState};
use crate::cpu::{Outcome, PmcReading, PmcState, PredictorConfig, PredictorState, SpeculationState};
use crate::dram::{DramConfig, DramState, FlipEvent};
use crate::error::{Result, SimError};
use crate::mapping::{AddressSpace, MappingMode};
use crate::timing::TimingModel;
use crate::Cycles;

/// Everything needed to construct a [`Simulator`]. Identical configs with
/// identical seeds produce identical event streams.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimConfig {
    pub timing: TimingModel,
    pub dram: DramConfig,
    pub cache: CacheConfig,
    pub predictor: PredictorConfig,
    /// Backlog added per attack-loop iteration by the unresolved enclosing
    /// loop branch. Defaults to the row-miss latency.
    pub backlog_accrual: Cycles,
    /// Counterfactual: let memory fences drain speculation backlog.
    pub fence_drains: bool,
    pub mapping: MappingMode,
    /// Whether attack logic is allowed to inspect the page map.
    pub knows_physical: bool,
    /// Clock frequency used to convert cycles to seconds in reports.
    pub clock_hz: u64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        let timing = TimingModel::default();
        SimConfig {
            backlog_accrual: timing.rowbuf_miss,
            timing,
            dram: DramConfig::default(),
            cache: CacheConfig::default(),
            predictor: PredictorConfig::default(),
            fence_drains: false,
            mapping: MappingMode::Identity,
            knows_physical: true,
            clock_hz: 2_600_000_000,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        self.timing.validate()?;
        self.cache.validate()?;
        self.predictor.validate()?;
        self.dram.geometry.validate()?;
        if self.timing.syscall_cost < 1000 {
            return Err(SimError::InvalidConfig(
                "syscall_cost must be at least 1000 cycles".into(),
            ));
        }
        if self.clock_hz == 0 {
            return Err(SimError::InvalidConfig("clock_hz must be nonzero".into()));
        }
        Ok(())
    }
}

/// Outcome of an architectural, timed memory access.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AccessResult {
    pub latency: Cycles,
    pub cache_hit: bool,
    /// Whether the access activated a DRAM row (always false on cache hits).
    pub opened_row: bool,
}

/// Outcome of a transient (speculative) load attempt.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpeculativeLoad {
    /// Whether the load completed inside the speculation window. If false,
    /// the pipeline squashed it before any side effect.
    pub executed: bool,
    /// Latency the load needed.
    pub transient_latency: Cycles,
    /// Window that was available to it.
    pub effective_window: Cycles,
}

/// Deterministic composition of clock, cache, DRAM, predictor, speculation
/// backlog, performance counter, and address space.
#[derive(Debug, Clone)]
pub struct Simulator {
    config: SimConfig,
    clock: Cycles,
    timing: TimingModel,
    dram: DramState,
    cache: CacheState,
    predictor: PredictorState,
    speculation: SpeculationState,
    pmc: PmcState,
    space: AddressSpace,
    rng: ChaCha8Rng,
}

impl Simulator {
    pub fn new(config: SimConfig) -> Result<Self> {
        config.validate()?;
        let dram = DramState::new(config.dram.clone())?;
        let cache = CacheState::new(config.cache)?;
        let predictor = PredictorState::new(config.predictor)?;
        let space = AddressSpace::new(
            config.mapping,
            config.knows_physical,
            config.dram.geometry.capacity(),
            config.seed,
        )?;
        let speculation = SpeculationState {
            pending_resolution: 0,
            backlog_accrual: config.backlog_accrual,
            fence_drains: config.fence_drains,
        };
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Simulator {
            timing: config.timing,
            clock: 0,
            dram,
            cache,
            predictor,
            speculation,
            pmc: PmcState::default(),
            space,
            rng,
            config,
        })
    }

    /// A brand-new simulator with the same configuration and seed.
    /// Calibration searches use this to evaluate candidates from identical
    /// cold state.
    pub fn fresh_clone(&self) -> Simulator {
        Simulator::new(self.config.clone()).expect("config validated at construction")
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn timing(&self) -> &TimingModel {
        &self.timing
    }

    pub fn now(&self) -> Cycles {
        self.clock
    }

    pub fn seconds(&self, cycles: Cycles) -> f64 {
        cycles as f64 / self.config.clock_hz as f64
    }

    pub fn advance(&mut self, cycles: Cycles) {
        self.clock += cycles;
    }

    // ----- architectural memory operations -------------------------------

    /// Performs a load through the cache, advancing the clock by its
    /// latency.
    pub fn timed_access(&mut self, va: u64) -> Result<AccessResult> {
        let pa = self.space.translate(va)?;
        if self.cache.lookup(pa) {
            self.advance(self.timing.cache_hit);
            return Ok(AccessResult {
                latency: self.timing.cache_hit,
                cache_hit: true,
                opened_row: false,
            });
        }
        let acc = self.dram.access(pa, &self.timing, self.clock)?;
        self.cache.install(pa);
        self.advance(acc.latency);
        Ok(AccessResult {
            latency: acc.latency,
            cache_hit: false,
            opened_row: acc.opened,
        })
    }

    /// Flushes the line holding `va`, advancing the clock by the flush
    /// cost. Idempotent with respect to cache state.
    pub fn flush(&mut self, va: u64) -> Result<()> {
        let pa = self.space.translate(va)?;
        self.cache.flush(pa);
        self.advance(self.timing.clflush_cost);
        Ok(())
    }

    /// Evicts the line holding `va` by touching `set_size` congruent lines,
    /// for environments without a flush instruction. Every touch is a real
    /// timed access with full cache and DRAM side effects, so this is both
    /// slower than `clflush` and noisier toward the row buffers. Requires
    /// the identity mapping: a virtual-stride set is only physically
    /// congruent there.
    pub fn evict_line(&mut self, va: u64, set_size: usize) -> Result<()> {
        if self.config.mapping != MappingMode::Identity {
            return Err(SimError::InvalidConfig(
                "eviction-set flushing requires identity-mapped memory".into(),
            ));
        }
        let pa = self.space.translate(va)?;
        let lines =
            self.cache
                .build_eviction_set(pa, set_size, self.config.dram.geometry.capacity())?;
        for line in lines {
            self.timed_access(line)?;
        }
        Ok(())
    }

    /// One ALU operation.
    pub fn alu_op(&mut self) {
        self.advance(self.timing.alu_op);
    }

    /// Architectural write used for setup and restoration; not timed.
    pub fn write_byte(&mut self, va: u64, value: u8) -> Result<()> {
        let pa = self.space.translate(va)?;
        self.dram.write_byte(pa, value)
    }

    pub fn read_byte(&self, va: u64) -> Result<u8> {
        let pa = self.space.translate(va)?;
        self.dram.read_byte(pa)
    }

    // ----- speculation ----------------------------------------------------

    /// Charges the per-iteration backlog of the unresolved enclosing loop
    /// branch.
    pub fn accrue_backlog(&mut self) {
        self.speculation.accrue();
    }

    /// Runs `n` iterations of the empty drain loop: retires `n` cycles of
    /// backlog and advances the clock by `n` ALU ops.
    pub fn drain(&mut self, n: Cycles) {
        self.speculation.reduce(n);
        self.advance(n * self.timing.alu_op);
    }

    /// Memory fence. Orders memory operations but does not resolve
    /// branches, so the backlog is untouched unless the counterfactual
    /// `fence_drains` switch is set.
    pub fn fence(&mut self) {
        if self.speculation.fence_drains {
            self.speculation.clear();
        }
        self.advance(self.timing.alu_op);
    }

    /// Serializing syscall: clears the backlog at a cost of at least 1000
    /// cycles.
    pub fn syscall(&mut self) {
        self.speculation.clear();
        self.advance(self.timing.syscall_cost);
    }

    pub fn pending_resolution(&self) -> Cycles {
        self.speculation.pending_resolution
    }

    /// Attempts a transient load of `va` under a window opened by a guard
    /// load of `base_window` cycles. If the load fits the effective window
    /// it leaves full microarchitectural traces (cache fill, row
    /// activation, disturbance) but consumes no architectural time — it
    /// overlaps the guard stall. If it does not fit, nothing changes.
    pub fn speculative_load(&mut self, va: u64, base_window: Cycles) -> Result<SpeculativeLoad> {
        let pa = self.space.translate(va)?;
        let transient_latency = if self.cache.contains(pa) {
            self.timing.cache_hit
        } else {
            self.dram.peek_latency(pa, &self.timing, self.clock)?
        };
        let ctx = self.speculation.context(base_window);
        let executed = ctx.admits(transient_latency);
        if executed {
            if self.cache.lookup(pa) {
                // Hit: the only trace is the LRU promotion done by lookup.
            } else {
                self.dram.access(pa, &self.timing, self.clock)?;
                self.cache.install(pa);
            }
        }
        Ok(SpeculativeLoad {
            executed,
            transient_latency,
            effective_window: ctx.effective_window(),
        })
    }

    // ----- branches and counters -----------------------------------------

    pub fn predict(&self, branch: u64) -> Outcome {
        self.predictor.predict(branch)
    }

    /// Resolves a conditional branch: updates the PHT and accounts the
    /// misprediction counter. Returns the prediction that was in effect.
    pub fn resolve_branch(&mut self, branch: u64, outcome: Outcome) -> Outcome {
        let prediction = self.predictor.update(branch, outcome);
        self.pmc.record(prediction, outcome);
        prediction
    }

    pub fn pmc_read(&self) -> PmcReading {
        self.pmc.read(self.clock)
    }

    pub fn pmc_reset(&mut self) {
        self.pmc.reset(self.clock);
    }

    // ----- DRAM plumbing --------------------------------------------------

    pub fn dram(&self) -> &DramState {
        &self.dram
    }

    pub fn flip_log(&self) -> &[FlipEvent] {
        self.dram.flip_log()
    }

    /// Advances the clock to the next refresh boundary (unless already
    /// sitting on one) and applies the refresh: counters reset, rows close.
    pub fn align_to_refresh(&mut self) {
        if self.clock > self.dram.window_start() {
            self.clock = self.dram.next_window_boundary();
        }
        self.dram.refresh_tick(self.clock);
    }

    /// Cache-state probe used by tests and diagnostics.
    pub fn is_cached(&self, va: u64) -> Result<bool> {
        Ok(self.cache.contains(self.space.translate(va)?))
    }

    pub fn cache(&self) -> &CacheState {
        &self.cache
    }

    // ----- attacker's address-space view ---------------------------------

    pub fn address_space(&self) -> &AddressSpace {
        &self.space
    }

    /// Attacker introspection of the page map (counted; requires physical
    /// knowledge).
    pub fn inspect_physical(&mut self, va: u64) -> Result<u64> {
        self.space.inspect_physical(va)
    }

    /// Physical address behind `va` via the MMU path (engine-internal, not
    /// an attacker inspection).
    pub fn pa_of_va(&self, va: u64) -> Result<u64> {
        self.space.translate(va)
    }

    /// Virtual address that reaches physical address `pa`. Free knowledge
    /// under the identity mapping; under randomized pages it reads the page
    /// map and therefore counts as an attacker inspection.
    pub fn va_of_pa(&mut self, pa: u64) -> Result<u64> {
        match self.space.mode() {
            MappingMode::Identity => {
                self.space.translate(pa)?; // bounds check only
                Ok(pa)
            }
            MappingMode::RandomizedPages => self.space.inspect_va_of(pa),
        }
    }

    // ----- jitter ---------------------------------------------------------

    /// Draws one bounded round-jitter term and advances the clock by it.
    /// Returns the drawn value (0 when jitter is disabled).
    pub fn apply_round_jitter(&mut self) -> Cycles {
        if self.timing.jitter_bound == 0 {
            return 0;
        }
        let j = self.rng.gen_range(0..=self.timing.jitter_bound);
        self.advance(j);
        j
    }
}
