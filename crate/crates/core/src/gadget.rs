//! The bounds-check victim gadget and the verified speculative access
//! round built on it.
//!
//! One round performs: flush the probe target, mistrain the guard branch
//! with in-bounds calls, flush the bound variable, drain the speculation
//! backlog, invoke the victim with an out-of-bounds index (the transient
//! access), and probe the target's latency. A probe under 100 cycles means
//! the transient load completed and fetched the target into the cache.
//!
//! Two calibrations recover the attack parameters: the minimal number of
//! training calls that keeps every round's branch speculatively taken
//! (observed through the mispredict counter), and the shortest drain loop
//! that makes every round's transient access complete.

use serde::{Deserialize, Serialize};

use crate::cpu::Outcome;
use crate::dram::{DramAddress, DramGeometry};
use crate::error::{Result, SimError};
use crate::sim::Simulator;
use crate::timing::LATENCY_THRESHOLD;
use crate::Cycles;

/// Probe latencies below this count as cache hits (successful rounds).
pub const PROBE_THRESHOLD: Cycles = LATENCY_THRESHOLD;

/// Layout of the victim: a small array and the separately stored bound the
/// guard branch compares against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VictimLayout {
    /// Virtual address of the array's first element (1-byte elements).
    pub array_base: u64,
    /// Number of in-bounds elements.
    pub array_size: u64,
    /// Virtual address the bound variable lives at.
    pub size_location: u64,
    /// PHT slot of the guard branch.
    pub branch_id: u64,
}

impl VictimLayout {
    /// The bound variable must be flushable independently of the array, so
    /// the two may not share a cache line.
    pub fn validate(&self, line_size: u64) -> Result<()> {
        if self.array_size == 0 {
            return Err(SimError::InvalidConfig("victim array must be non-empty".into()));
        }
        let size_line = self.size_location / line_size;
        let first = self.array_base / line_size;
        let last = (self.array_base + self.array_size - 1) / line_size;
        if (first..=last).contains(&size_line) {
            return Err(SimError::InvalidConfig(
                "array_size location shares a cache line with the victim array".into(),
            ));
        }
        Ok(())
    }

    /// True when `va` indexes inside the array.
    pub fn in_bounds_va(&self, va: u64) -> bool {
        va >= self.array_base && va < self.array_base + self.array_size
    }

    /// Index that makes `victim_function` touch `va`.
    pub fn index_of(&self, va: u64) -> u64 {
        va.wrapping_sub(self.array_base)
    }
}

/// Physical placement picked for the gadget: which rows of which bank hold
/// the bound variable, the array, and the default probe target.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GadgetPlacement {
    pub size_loc_pa: u64,
    pub array_pa: u64,
    pub probe_pa: u64,
}

/// Picks `n` rows of a bank, each at least `separation` rows away from
/// every avoided row and from each other. Scans outward from the bank's
/// middle row so placements stay deterministic.
fn pick_rows(rows_per_bank: u64, avoid: &[u64], n: usize, separation: u64) -> Result<Vec<u64>> {
    let mut picked: Vec<u64> = Vec::with_capacity(n);
    let far_enough = |row: u64, others: &[u64]| {
        others
            .iter()
            .all(|&o| row.abs_diff(o) >= separation)
    };
    let start = rows_per_bank / 2;
    for offset in 0..rows_per_bank {
        let row = (start + offset) % rows_per_bank;
        if far_enough(row, avoid) && far_enough(row, &picked) {
            picked.push(row);
            if picked.len() == n {
                return Ok(picked);
            }
        }
    }
    Err(SimError::InvalidConfig(format!(
        "bank with {rows_per_bank} rows cannot host {n} gadget rows clear of {} avoided rows",
        avoid.len()
    )))
}

/// Places the gadget inside the bank that `bank_of` names.
///
/// Both the bound variable and the array live in the *same bank* as the
/// probe target but in distant rows. That way the steady-state round keeps
/// a row-miss guard load (the previous transient access closed the bound
/// variable's row), which is what opens a window wide enough for a
/// row-missing transient load. Rows adjacent to `avoid_rows` are skipped so
/// gadget traffic cannot disturb templated victims.
pub fn place_gadget(
    geometry: &DramGeometry,
    bank_of: &DramAddress,
    avoid_rows: &[u64],
) -> Result<GadgetPlacement> {
    let rows = pick_rows(geometry.rows_per_bank, avoid_rows, 3, 3)?;
    let at_row = |row: u64| {
        geometry.physical_of(&DramAddress {
            row,
            col: 0,
            ..*bank_of
        })
    };
    Ok(GadgetPlacement {
        probe_pa: at_row(rows[0])?,
        size_loc_pa: at_row(rows[1])?,
        array_pa: at_row(rows[2])?,
    })
}

/// Default number of in-bounds elements.
pub const DEFAULT_ARRAY_SIZE: u64 = 16;

/// Builds the victim layout (and default probe target) for the bank of
/// `bank_of`, translating placement to virtual addresses through the
/// simulator's mapping.
pub fn layout_in_bank(
    sim: &mut Simulator,
    bank_of: &DramAddress,
    avoid_rows: &[u64],
) -> Result<(VictimLayout, u64)> {
    let placement = place_gadget(sim.dram().geometry(), bank_of, avoid_rows)?;
    let layout = VictimLayout {
        array_base: sim.va_of_pa(placement.array_pa)?,
        array_size: DEFAULT_ARRAY_SIZE,
        size_location: sim.va_of_pa(placement.size_loc_pa)?,
        branch_id: 0x51,
    };
    layout.validate(sim.config().cache.line_size)?;
    let probe = sim.va_of_pa(placement.probe_pa)?;
    Ok((layout, probe))
}

/// Default gadget for calibration runs: bank 0, no avoided rows.
pub fn default_layout(sim: &mut Simulator) -> Result<(VictimLayout, u64)> {
    let bank0 = DramAddress {
        channel: 0,
        dimm: 0,
        rank: 0,
        bank: 0,
        row: 0,
        col: 0,
    };
    layout_in_bank(sim, &bank0, &[])
}

/// How a round retires the speculation backlog before the attack call.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DrainMode {
    /// No drain: the plain bounds-check-bypass sequence.
    None,
    /// The finite-but-empty loop, `n` iterations.
    Loop(Cycles),
    /// A serializing syscall (correct but expensive).
    Syscall,
    /// A memory fence (orders loads/stores, does not resolve branches).
    Fence,
}

/// How a line is pushed out of the cache.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FlushMode {
    /// Direct invalidation (`clflush`).
    Clflush,
    /// Touch that many congruent lines instead, for environments without a
    /// flush instruction. Only valid under the identity mapping.
    EvictionSet { size: usize },
}

/// Flushes `va` according to `mode`.
pub fn do_flush(sim: &mut Simulator, mode: FlushMode, va: u64) -> Result<()> {
    match mode {
        FlushMode::Clflush => sim.flush(va),
        FlushMode::EvictionSet { size } => sim.evict_line(va, size),
    }
}

/// Parameters of one verified speculative access round.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoundConfig {
    /// In-bounds training calls before the out-of-bounds call.
    pub train_k: u32,
    pub drain: DrainMode,
    /// Extra no-op cycles inserted before the attack call.
    pub padding: Cycles,
    /// Set to false to reproduce the stale-probe false positive (the
    /// reason the target must be flushed every round).
    pub flush_target: bool,
    pub flush: FlushMode,
}

impl RoundConfig {
    pub fn calibrated(train_k: u32, drain_len: Cycles) -> Self {
        RoundConfig {
            train_k,
            drain: DrainMode::Loop(drain_len),
            padding: 0,
            flush_target: true,
            flush: FlushMode::Clflush,
        }
    }
}

impl Default for RoundConfig {
    fn default() -> Self {
        RoundConfig {
            train_k: 4,
            drain: DrainMode::None,
            padding: 0,
            flush_target: true,
            flush: FlushMode::Clflush,
        }
    }
}

/// Observable result of one round.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoundResult {
    /// Probe classified under the 100-cycle threshold.
    pub success: bool,
    pub probe_latency: Cycles,
    /// Virtual cycles the whole round consumed (including jitter).
    pub round_cost: Cycles,
    /// Mispredicted speculatively-taken branches this round contributed.
    pub mispredict_count_delta: u64,
    /// Ground truth: did the transient load complete? Not observable by a
    /// real attacker; kept for verifying the probe classification.
    pub speculation_executed: bool,
}

/// One invocation of the victim:
///
/// ```text
/// if index < array_size { tmp = array[index]; }
/// ```
///
/// The guard loads the bound, the comparison retires one ALU op, and the
/// body runs architecturally when in bounds or transiently when the
/// predictor says taken. Returns whether a transient body access executed.
pub fn victim_function(sim: &mut Simulator, layout: &VictimLayout, index: u64) -> Result<bool> {
    let guard = sim.timed_access(layout.size_location)?;
    sim.alu_op();
    let in_bounds = index < layout.array_size;
    let mut transient_executed = false;
    if in_bounds {
        sim.timed_access(layout.array_base + index)?;
    } else if sim.predict(layout.branch_id) == Outcome::Taken {
        let load = sim.speculative_load(layout.array_base.wrapping_add(index), guard.latency)?;
        transient_executed = load.executed;
    }
    let outcome = if in_bounds {
        Outcome::Taken
    } else {
        Outcome::NotTaken
    };
    sim.resolve_branch(layout.branch_id, outcome);
    Ok(transient_executed)
}

/// Runs one verified speculative access round against `target` (a virtual
/// address outside the victim array).
pub fn verify_round(
    sim: &mut Simulator,
    layout: &VictimLayout,
    cfg: &RoundConfig,
    target: u64,
) -> Result<RoundResult> {
    layout.validate(sim.config().cache.line_size)?;
    if layout.in_bounds_va(target) {
        return Err(SimError::Misuse(
            "round target lies inside the victim array; the access would be architectural".into(),
        ));
    }
    let pmc_before = sim.pmc_read().mispredicted_taken_conditional;
    let start = sim.now();
    // The enclosing attack loop's own branch is still unresolved; each
    // iteration deepens the backlog.
    sim.accrue_backlog();
    if cfg.flush_target {
        do_flush(sim, cfg.flush, target)?;
    }
    for i in 0..cfg.train_k {
        victim_function(sim, layout, i as u64 % layout.array_size)?;
    }
    do_flush(sim, cfg.flush, layout.size_location)?;
    match cfg.drain {
        DrainMode::None => {}
        DrainMode::Loop(n) => sim.drain(n),
        DrainMode::Syscall => sim.syscall(),
        DrainMode::Fence => sim.fence(),
    }
    if cfg.padding > 0 {
        sim.advance(cfg.padding);
    }
    let executed = victim_function(sim, layout, layout.index_of(target))?;
    let probe = sim.timed_access(target)?;
    sim.apply_round_jitter();
    Ok(RoundResult {
        success: probe.latency < PROBE_THRESHOLD,
        probe_latency: probe.latency,
        round_cost: sim.now() - start,
        mispredict_count_delta: sim.pmc_read().mispredicted_taken_conditional - pmc_before,
        speculation_executed: executed,
    })
}

/// Rounds run before any measurement so caches and row buffers reach their
/// steady state.
pub const WARMUP_ROUNDS: u32 = 2;

/// Deterministic cost of one steady-state round with the given parameters,
/// measured on a fresh simulator after warmup.
pub fn measure_round_cost(
    sim: &Simulator,
    layout: &VictimLayout,
    cfg: &RoundConfig,
    target: u64,
) -> Result<Cycles> {
    let mut probe_sim = sim.fresh_clone();
    for _ in 0..WARMUP_ROUNDS {
        verify_round(&mut probe_sim, layout, cfg, target)?;
    }
    Ok(verify_round(&mut probe_sim, layout, cfg, target)?.round_cost)
}

/// Result of the two parameter calibrations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CalibrationResult {
    pub min_training: u32,
    pub drain_len: Cycles,
    pub round_cost: Cycles,
}

/// Finds the smallest training count that still makes every round's guard
/// branch mispredict as taken, i.e. speculate down the body.
///
/// The reference count comes from a known-good baseline (five trainings,
/// as the original bounds-check-bypass demonstrations use). If the counter
/// is wide enough that five trainings never saturate it, the baseline is
/// re-established at `2^k` trainings, which always works.
pub fn calibrate_min_training(
    sim: &Simulator,
    layout: &VictimLayout,
    probe: u64,
    trials: u32,
) -> Result<u32> {
    const BASELINE_TRAININGS: u32 = 5;
    let events_with = |train_k: u32| -> Result<u64> {
        let mut trial_sim = sim.fresh_clone();
        let cfg = RoundConfig {
            train_k,
            drain: DrainMode::None,
            ..RoundConfig::default()
        };
        trial_sim.pmc_reset();
        for _ in 0..trials {
            verify_round(&mut trial_sim, layout, &cfg, probe)?;
        }
        Ok(trial_sim.pmc_read().mispredicted_taken_conditional)
    };
    let k = sim.config().predictor.counter_bits;
    let mut baseline = BASELINE_TRAININGS;
    let mut reference = events_with(baseline)?;
    if reference < trials as u64 {
        baseline = 1 << k;
        reference = events_with(baseline)?;
    }
    if reference < trials as u64 {
        return Err(SimError::CalibrationFailure(format!(
            "even {baseline} trainings leave rounds without taken-speculation ({reference}/{trials})"
        )));
    }
    let mut t = baseline;
    while t > 1 && events_with(t - 1)? == reference {
        t -= 1;
    }
    Ok(t)
}

/// Finds the shortest drain loop for which `trials` consecutive rounds all
/// succeed, searching `0..=l_max` by bisection (success is monotone in the
/// drain length: longer drains only widen the effective window).
pub fn calibrate_drain_loop(
    sim: &Simulator,
    layout: &VictimLayout,
    probe: u64,
    train_k: u32,
    trials: u32,
    l_max: Cycles,
) -> Result<Cycles> {
    let all_succeed = |drain_len: Cycles| -> Result<bool> {
        let mut trial_sim = sim.fresh_clone();
        let cfg = RoundConfig::calibrated(train_k, drain_len);
        for _ in 0..trials {
            if !verify_round(&mut trial_sim, layout, &cfg, probe)?.success {
                return Ok(false);
            }
        }
        Ok(true)
    };
    if !all_succeed(l_max)? {
        return Err(SimError::CalibrationFailure(format!(
            "no drain length up to {l_max} makes all {trials} rounds succeed"
        )));
    }
    let (mut lo, mut hi) = (0, l_max);
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if all_succeed(mid)? {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    Ok(lo)
}

/// Runs both calibrations and measures the resulting round cost.
pub fn run_full_calibration(
    sim: &Simulator,
    layout: &VictimLayout,
    probe: u64,
    trials: u32,
    l_max: Cycles,
) -> Result<CalibrationResult> {
    let min_training = calibrate_min_training(sim, layout, probe, trials)?;
    let drain_len = calibrate_drain_loop(sim, layout, probe, min_training, trials, l_max)?;
    let round_cost = measure_round_cost(
        sim,
        layout,
        &RoundConfig::calibrated(min_training, drain_len),
        probe,
    )?;
    Ok(CalibrationResult {
        min_training,
        drain_len,
        round_cost,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::SimConfig;

    fn sim() -> Simulator {
        Simulator::new(SimConfig::default()).unwrap()
    }

    fn calibrated_setup() -> (Simulator, VictimLayout, u64, RoundConfig) {
        let mut s = sim();
        let (layout, probe) = default_layout(&mut s).unwrap();
        let cfg = RoundConfig::calibrated(4, s.config().backlog_accrual);
        (s, layout, probe, cfg)
    }

    #[test]
    fn in_bounds_call_accesses_the_element() {
        let (mut s, layout, _, _) = calibrated_setup();
        victim_function(&mut s, &layout, 3).unwrap();
        assert!(s.is_cached(layout.array_base + 3).unwrap());
        assert!(s.is_cached(layout.size_location).unwrap());
    }

    #[test]
    fn untrained_oob_call_does_not_speculate() {
        let (mut s, layout, probe, _) = calibrated_setup();
        let executed = victim_function(&mut s, &layout, layout.index_of(probe)).unwrap();
        assert!(!executed);
        assert!(!s.is_cached(probe).unwrap());
    }

    #[test]
    fn trained_oob_call_speculates_within_window() {
        let (mut s, layout, probe, _) = calibrated_setup();
        for i in 0..4 {
            victim_function(&mut s, &layout, i).unwrap();
        }
        s.flush(layout.size_location).unwrap();
        let executed = victim_function(&mut s, &layout, layout.index_of(probe)).unwrap();
        assert!(executed);
        assert!(s.is_cached(probe).unwrap());
    }

    #[test]
    fn calibrated_round_succeeds_from_cold_start() {
        let (mut s, layout, probe, cfg) = calibrated_setup();
        let r = verify_round(&mut s, &layout, &cfg, probe).unwrap();
        assert!(r.success);
        assert!(r.speculation_executed);
        assert_eq!(r.probe_latency, s.timing().cache_hit);
        assert_eq!(r.mispredict_count_delta, 1);
    }

    #[test]
    fn undrained_round_fails() {
        let (mut s, layout, probe, _) = calibrated_setup();
        let cfg = RoundConfig::default(); // train 4, no drain
        let r = verify_round(&mut s, &layout, &cfg, probe).unwrap();
        assert!(!r.success);
        assert!(!r.speculation_executed);
        assert!(r.probe_latency > PROBE_THRESHOLD);
        // The mispredict event still fires: the counter only proves the
        // window existed, not that the access went through.
        assert_eq!(r.mispredict_count_delta, 1);
    }

    #[test]
    fn untrained_round_fails_without_mispredict() {
        let (mut s, layout, probe, _) = calibrated_setup();
        let cfg = RoundConfig {
            train_k: 0,
            ..RoundConfig::calibrated(4, s.config().backlog_accrual)
        };
        let r = verify_round(&mut s, &layout, &cfg, probe).unwrap();
        assert!(!r.success);
        assert_eq!(r.mispredict_count_delta, 0);
    }

    #[test]
    fn fence_drain_fails_like_no_drain() {
        let (mut s, layout, probe, _) = calibrated_setup();
        let cfg = RoundConfig {
            drain: DrainMode::Fence,
            ..RoundConfig::default()
        };
        for _ in 0..5 {
            let r = verify_round(&mut s, &layout, &cfg, probe).unwrap();
            assert!(!r.success);
        }
    }

    #[test]
    fn syscall_drain_succeeds_at_high_cost() {
        let (mut s, layout, probe, _) = calibrated_setup();
        let cfg = RoundConfig {
            drain: DrainMode::Syscall,
            ..RoundConfig::default()
        };
        let mut last = None;
        for _ in 0..5 {
            let r = verify_round(&mut s, &layout, &cfg, probe).unwrap();
            assert!(r.success);
            last = Some(r);
        }
        // The serializing drain blows the round past the flip-rate budget.
        assert!(last.unwrap().round_cost > 1500);
    }

    #[test]
    fn in_bounds_target_is_misuse() {
        let (mut s, layout, _, cfg) = calibrated_setup();
        let err = verify_round(&mut s, &layout, &cfg, layout.array_base + 1).unwrap_err();
        assert!(matches!(err, SimError::Misuse(_)));
    }

    #[test]
    fn stale_probe_is_a_false_positive_without_the_flush() {
        let (mut s, layout, probe, cfg) = calibrated_setup();
        // A successful round leaves the target cached...
        assert!(verify_round(&mut s, &layout, &cfg, probe).unwrap().success);
        // ...so a flushless round reports success even though its own
        // speculation was squashed. This is why the round flushes first.
        let broken = RoundConfig {
            flush_target: false,
            drain: DrainMode::None,
            ..cfg
        };
        let r = verify_round(&mut s, &layout, &broken, probe).unwrap();
        assert!(r.success);
        assert!(!r.speculation_executed);
    }

    #[test]
    fn steady_state_round_cost_is_pinned() {
        // flush target + flush bound (2 x 150), four trainings at
        // 40 + 1 + 40 each, a 280-iteration drain, the attack call's
        // row-missed guard (280 + 1), and a 40-cycle probe: 1225 total.
        let (s, layout, probe, cfg) = calibrated_setup();
        let cost = measure_round_cost(&s, &layout, &cfg, probe).unwrap();
        assert_eq!(cost, 1225);
        assert!((1200..=1400).contains(&cost));
    }

    #[test]
    fn round_cost_is_additive_in_padding() {
        let (s, layout, probe, cfg) = calibrated_setup();
        let base = measure_round_cost(&s, &layout, &cfg, probe).unwrap();
        for pad in [1, 37, 275] {
            let padded = RoundConfig { padding: pad, ..cfg };
            let cost = measure_round_cost(&s, &layout, &padded, probe).unwrap();
            assert_eq!(cost, base + pad);
        }
    }

    #[test]
    fn drain_never_dominates_the_round() {
        let (s, layout, probe, cfg) = calibrated_setup();
        let cost = measure_round_cost(&s, &layout, &cfg, probe).unwrap();
        let drain_share = s.config().backlog_accrual * s.timing().alu_op;
        assert!(cost > 2 * drain_share);
    }

    #[test]
    fn min_training_is_four_for_default_width() {
        let mut s = sim();
        let (layout, probe) = default_layout(&mut s).unwrap();
        assert_eq!(calibrate_min_training(&s, &layout, probe, 200).unwrap(), 4);
    }

    #[test]
    fn drain_calibration_recovers_the_accrual_exactly() {
        let mut s = sim();
        let (layout, probe) = default_layout(&mut s).unwrap();
        let l = calibrate_drain_loop(&s, &layout, probe, 4, 100, 2000).unwrap();
        assert_eq!(l, s.config().backlog_accrual);
    }

    #[test]
    fn drain_calibration_with_tiny_budget_fails() {
        let mut s = sim();
        let (layout, probe) = default_layout(&mut s).unwrap();
        let err = calibrate_drain_loop(&s, &layout, probe, 4, 50, 0).unwrap_err();
        assert!(matches!(err, SimError::CalibrationFailure(_)));
    }

    #[test]
    fn zero_backlog_calibrates_to_zero_drain() {
        let cfg = SimConfig {
            backlog_accrual: 0,
            ..SimConfig::default()
        };
        let mut s = Simulator::new(cfg).unwrap();
        let (layout, probe) = default_layout(&mut s).unwrap();
        assert_eq!(
            calibrate_drain_loop(&s, &layout, probe, 4, 100, 2000).unwrap(),
            0
        );
    }

    #[test]
    fn calibrations_are_idempotent() {
        let mut s = sim();
        let (layout, probe) = default_layout(&mut s).unwrap();
        let a = run_full_calibration(&s, &layout, probe, 100, 2000).unwrap();
        let b = run_full_calibration(&s, &layout, probe, 100, 2000).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.min_training, 4);
        assert_eq!(a.drain_len, 280);
    }

    #[test]
    fn layout_rejects_shared_line_with_bound() {
        let layout = VictimLayout {
            array_base: 0x1000,
            array_size: 16,
            size_location: 0x1008,
            branch_id: 1,
        };
        assert!(layout.validate(64).is_err());
    }
}
