//! The end-to-end attack: scanning attacker-owned memory for vulnerable
//! row pairs, then hammering a found pair through the speculative gadget
//! until a disturbance flip lands.
//!
//! Scanning is architectural — the attacker hammers its own rows directly
//! and verifies flips by reading its own bytes back. The attack phase
//! drives the aggressors through verified speculative access rounds, so
//! the hammering accesses themselves never retire.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dram::{DramAddress, FlipDirection, FlipEvent, CELL_WIDTH};
use crate::error::{Result, SimError};
use crate::gadget::{
    default_layout, do_flush, layout_in_bank, run_full_calibration, verify_round, DrainMode,
    FlushMode, RoundConfig, VictimLayout, WARMUP_ROUNDS,
};
use crate::mapping::{MappingMode, PAGE_SIZE};
use crate::sim::Simulator;
use crate::Cycles;

/// Two same-bank aggressor rows exactly two apart, enclosing one victim
/// row — the double-sided hammering configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HammerPair {
    /// Virtual address within the lower aggressor row.
    pub addr_a: u64,
    /// Virtual address within the upper aggressor row.
    pub addr_b: u64,
    pub flat_bank: u64,
    pub row_a: u64,
    pub row_b: u64,
}

impl HammerPair {
    pub const CSV_HEADER: &'static str = "addr_a,addr_b,bank,row_a,row_b,victim_row";

    /// Builds and validates a pair from two virtual addresses (in either
    /// order).
    pub fn from_vas(sim: &Simulator, addr_a: u64, addr_b: u64) -> Result<Self> {
        let g = *sim.dram().geometry();
        let a = g.map_physical(sim.pa_of_va(addr_a)?)?;
        let b = g.map_physical(sim.pa_of_va(addr_b)?)?;
        let (bank_a, bank_b) = (g.flat_bank(&a), g.flat_bank(&b));
        if bank_a != bank_b {
            return Err(SimError::Misuse(format!(
                "hammer pair spans banks {bank_a} and {bank_b}; \
                 double-sided hammering needs both aggressors in one bank"
            )));
        }
        let (lo_va, hi_va, lo, hi) = if a.row <= b.row {
            (addr_a, addr_b, a.row, b.row)
        } else {
            (addr_b, addr_a, b.row, a.row)
        };
        if hi - lo != 2 {
            return Err(SimError::Misuse(format!(
                "hammer pair rows {lo} and {hi} are not two apart; \
                 no single victim row lies between them"
            )));
        }
        Ok(HammerPair {
            addr_a: lo_va,
            addr_b: hi_va,
            flat_bank: bank_a,
            row_a: lo,
            row_b: hi,
        })
    }

    /// The enclosed victim row.
    pub fn victim_row(&self) -> u64 {
        self.row_a + 1
    }

    pub fn to_csv_row(&self) -> String {
        format!(
            "{:#x},{:#x},{},{},{},{}",
            self.addr_a,
            self.addr_b,
            self.flat_bank,
            self.row_a,
            self.row_b,
            self.victim_row()
        )
    }
}

/// Parameters of the templating scan over a region of attacker-owned
/// memory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScanConfig {
    /// First virtual address of the region (page aligned).
    pub region_start: u64,
    /// Region length in bytes (page aligned).
    pub region_len: u64,
    /// Hammer iterations per candidate pair. Each iteration activates both
    /// aggressor rows once.
    pub iterations_per_pair: u64,
    /// Extra cycles appended to every hammer step.
    pub padding: Cycles,
    /// Scan at most this many candidates; 0 means no limit.
    pub max_pairs: u64,
}

impl ScanConfig {
    pub fn validate(&self, capacity: u64) -> Result<()> {
        if !self.region_start.is_multiple_of(PAGE_SIZE) || !self.region_len.is_multiple_of(PAGE_SIZE) {
            return Err(SimError::InvalidConfig(
                "scan region must be page aligned".into(),
            ));
        }
        if self.region_len == 0 {
            return Err(SimError::InvalidConfig("scan region is empty".into()));
        }
        if self.region_start.saturating_add(self.region_len) > capacity {
            return Err(SimError::InvalidConfig(format!(
                "scan region ends beyond physical capacity {capacity:#x}"
            )));
        }
        if self.iterations_per_pair == 0 {
            return Err(SimError::InvalidConfig(
                "scan needs at least one hammer iteration per pair".into(),
            ));
        }
        Ok(())
    }
}

/// A bit flip the scanner observed in its own memory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservedFlip {
    /// Virtual address of the affected byte.
    pub va: u64,
    pub bit: u8,
    pub direction: FlipDirection,
}

/// One vulnerable pair: hammering it flipped at least one bit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScanHit {
    pub pair: HammerPair,
    pub flips: Vec<ObservedFlip>,
}

/// Result of a templating scan.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScanOutcome {
    pub hits: Vec<ScanHit>,
    /// Candidate pairs the region offered.
    pub candidates: u64,
    /// Candidates actually processed (bounded by `max_pairs`).
    pub scanned: u64,
    /// Processed candidates with no weak cell anywhere next to an
    /// aggressor, settled without hammering.
    pub skipped_empty: u64,
    /// True when `max_pairs` stopped the scan before all candidates.
    pub partial: bool,
}

/// A contiguous virtual chunk lying inside one (bank, row).
#[derive(Debug, Clone, Copy)]
struct RowChunk {
    va: u64,
    len: u64,
}

type Coverage = BTreeMap<(u64, u64), Vec<RowChunk>>;

/// Walks the region page by page and groups its bytes by the (bank, row)
/// they live in. Under the identity mapping the physical address of a page
/// is architectural knowledge; under randomized pages each page costs one
/// counted page-map inspection.
fn map_region_rows(sim: &mut Simulator, cfg: &ScanConfig) -> Result<Coverage> {
    let g = *sim.dram().geometry();
    let block = g.cols_per_row * CELL_WIDTH; // bytes per (bank, row)
    let end = cfg.region_start + cfg.region_len;
    let mut cov: Coverage = BTreeMap::new();
    let mut page = cfg.region_start;
    while page < end {
        let page_pa = match sim.address_space().mode() {
            MappingMode::Identity => page,
            MappingMode::RandomizedPages => sim.inspect_physical(page)?,
        };
        let span = PAGE_SIZE.min(end - page);
        let mut off = 0;
        while off < span {
            let pa = page_pa + off;
            let addr = g.map_physical(pa)?;
            let block_end = (pa / block + 1) * block;
            let len = (block_end - pa).min(span - off);
            cov.entry((g.flat_bank(&addr), addr.row))
                .or_default()
                .push(RowChunk {
                    va: page + off,
                    len,
                });
            off += len;
        }
        page += PAGE_SIZE;
    }
    Ok(cov)
}

/// All (row, row+2) pairs whose aggressor rows and enclosed victim row are
/// covered by the region, in (bank, row) order.
fn candidate_pairs(cov: &Coverage) -> Vec<HammerPair> {
    let mut out = Vec::new();
    for (&(bank, row), chunks) in cov.iter() {
        let upper = match cov.get(&(bank, row + 2)) {
            Some(c) => c,
            None => continue,
        };
        if !cov.contains_key(&(bank, row + 1)) {
            continue; // victim row unreadable: a flip could not be verified
        }
        out.push(HammerPair {
            addr_a: chunks[0].va,
            addr_b: upper[0].va,
            flat_bank: bank,
            row_a: row,
            row_b: row + 2,
        });
    }
    out
}

/// Rows a double-sided pair can disturb: the outer neighbors and the
/// enclosed victim.
fn disturbed_rows(pair: &HammerPair, rows_per_bank: u64) -> Vec<u64> {
    let mut rows = Vec::with_capacity(3);
    if pair.row_a > 0 {
        rows.push(pair.row_a - 1);
    }
    rows.push(pair.row_a + 1);
    if pair.row_b + 1 < rows_per_bank {
        rows.push(pair.row_b + 1);
    }
    rows
}

/// One architectural hammer step: activate the row, push the line back
/// out, idle for the padding.
fn hammer_step(sim: &mut Simulator, va: u64, padding: Cycles) -> Result<()> {
    sim.timed_access(va)?;
    sim.flush(va)?;
    if padding > 0 {
        sim.advance(padding);
    }
    Ok(())
}

/// Scans the region for vulnerable pairs: hammer each candidate, read the
/// disturbed rows back, record what flipped, then restore the bytes (which
/// also recharges the flipped cells).
///
/// Candidates with no weak cell next to either aggressor are settled
/// without simulation — hammering them could not change any byte.
pub fn scan_vulnerable_pairs(sim: &mut Simulator, cfg: &ScanConfig) -> Result<ScanOutcome> {
    cfg.validate(sim.dram().geometry().capacity())?;
    let cov = map_region_rows(sim, cfg)?;
    let cands = candidate_pairs(&cov);
    let rows_per_bank = sim.dram().geometry().rows_per_bank;
    let limit = if cfg.max_pairs == 0 {
        u64::MAX
    } else {
        cfg.max_pairs
    };
    let mut hits = Vec::new();
    let mut scanned = 0u64;
    let mut skipped_empty = 0u64;
    let mut partial = false;
    for pair in &cands {
        if scanned == limit {
            partial = true;
            break;
        }
        scanned += 1;
        let disturbed = disturbed_rows(pair, rows_per_bank);
        let template = &sim.dram().config().template;
        let any_weak = template.cells.iter().any(|c| {
            sim.dram().geometry().flat_bank(&c.victim) == pair.flat_bank
                && disturbed.contains(&c.victim.row)
        });
        if !any_weak {
            skipped_empty += 1;
            continue;
        }
        sim.align_to_refresh();
        let mut snapshot: Vec<(u64, u8)> = Vec::new();
        for row in &disturbed {
            if let Some(chunks) = cov.get(&(pair.flat_bank, *row)) {
                for chunk in chunks {
                    for i in 0..chunk.len {
                        let va = chunk.va + i;
                        snapshot.push((va, sim.read_byte(va)?));
                    }
                }
            }
        }
        for _ in 0..cfg.iterations_per_pair {
            hammer_step(sim, pair.addr_a, cfg.padding)?;
            hammer_step(sim, pair.addr_b, cfg.padding)?;
        }
        let mut flips = Vec::new();
        for (va, old) in &snapshot {
            let new = sim.read_byte(*va)?;
            if new == *old {
                continue;
            }
            for bit in 0..8u8 {
                if (old ^ new) >> bit & 1 == 1 {
                    flips.push(ObservedFlip {
                        va: *va,
                        bit,
                        direction: if old >> bit & 1 == 0 {
                            FlipDirection::ZeroToOne
                        } else {
                            FlipDirection::OneToZero
                        },
                    });
                }
            }
            sim.write_byte(*va, *old)?;
        }
        if !flips.is_empty() {
            hits.push(ScanHit { pair: *pair, flips });
        }
    }
    Ok(ScanOutcome {
        hits,
        candidates: cands.len() as u64,
        scanned,
        skipped_empty,
        partial,
    })
}

/// How the attack phase drives the aggressor pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HammerMode {
    /// Transient access to the lower aggressor, architectural access to the
    /// upper one: both rows activate every iteration.
    Hybrid,
    /// Transient accesses only. The victim row collects disturbance at half
    /// the hybrid rate, but no hammering access ever retires.
    PureSpeculative,
}

/// Result of one hammering phase.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HammerOutcome {
    pub iterations: u64,
    pub cycles: Cycles,
    /// Disturbance flips this phase produced, in event order.
    pub flips: Vec<FlipEvent>,
    pub successful_rounds: u64,
    pub failed_rounds: u64,
    /// False when the engine proved no flip could ever land at this
    /// iteration cost and skipped the loop entirely.
    pub feasible: bool,
}

impl HammerOutcome {
    fn infeasible() -> Self {
        HammerOutcome {
            iterations: 0,
            cycles: 0,
            flips: Vec::new(),
            successful_rounds: 0,
            failed_rounds: 0,
            feasible: false,
        }
    }
}

/// Deterministic steady-state cost of one hammer iteration, measured on a
/// fresh clone after warmup.
fn steady_iteration_cost(
    sim: &Simulator,
    layout: &VictimLayout,
    target: u64,
    secondary: Option<u64>,
    round: &RoundConfig,
) -> Result<Cycles> {
    let mut probe = sim.fresh_clone();
    let mut last = 0;
    for _ in 0..WARMUP_ROUNDS + 1 {
        let before = probe.now();
        verify_round(&mut probe, layout, round, target)?;
        if let Some(b) = secondary {
            probe.timed_access(b)?;
            do_flush(&mut probe, round.flush, b)?;
        }
        last = probe.now() - before;
    }
    Ok(last)
}

/// Proves, when it can, that the hammer loop cannot flip any cell: bounds
/// every touched row's activations per refresh window and compares against
/// the weakest reachable cell. Only attempted under deterministic timing
/// (no jitter) and `clflush` flushing, where the iteration cost is exact
/// and no flush traffic reaches DRAM.
fn hammering_cannot_flip(
    sim: &Simulator,
    layout: &VictimLayout,
    target: u64,
    secondary: Option<u64>,
    round: &RoundConfig,
) -> Result<bool> {
    if sim.timing().jitter_bound != 0 || round.flush != FlushMode::Clflush {
        return Ok(false);
    }
    let g = *sim.dram().geometry();
    let mut touched: Vec<(u64, u64)> = Vec::new();
    for va in [Some(target), secondary, Some(layout.size_location), Some(layout.array_base)]
        .into_iter()
        .flatten()
    {
        let addr = g.map_physical(sim.pa_of_va(va)?)?;
        touched.push((g.flat_bank(&addr), addr.row));
    }
    let cost = steady_iteration_cost(sim, layout, target, secondary, round)?;
    let per_window = sim.dram().config().refresh_interval_cycles / cost + 2;
    for (i, cell) in sim.dram().config().template.cells.iter().enumerate() {
        if sim.dram().cell_latched(i) {
            continue;
        }
        let bank = g.flat_bank(&cell.victim);
        let v = cell.victim.row;
        let gain = touched
            .iter()
            .filter(|&&(tb, tr)| tb == bank && (tr + 1 == v || v + 1 == tr))
            .count() as u64;
        if gain > 0 && gain.saturating_mul(per_window) >= cell.threshold as u64 {
            return Ok(false);
        }
    }
    Ok(true)
}

fn hammer_loop(
    sim: &mut Simulator,
    layout: &VictimLayout,
    target: u64,
    secondary: Option<u64>,
    round: &RoundConfig,
    budget: Cycles,
) -> Result<HammerOutcome> {
    if hammering_cannot_flip(sim, layout, target, secondary, round)? {
        return Ok(HammerOutcome::infeasible());
    }
    sim.align_to_refresh();
    let start = sim.now();
    let watermark = sim.flip_log().len();
    let mut iterations = 0u64;
    let mut successful_rounds = 0u64;
    let mut failed_rounds = 0u64;
    while sim.now() - start < budget {
        let r = verify_round(sim, layout, round, target)?;
        if r.success {
            successful_rounds += 1;
        } else {
            failed_rounds += 1;
        }
        if let Some(b) = secondary {
            sim.timed_access(b)?;
            do_flush(sim, round.flush, b)?;
        }
        iterations += 1;
        if sim.flip_log().len() > watermark {
            break; // first flip landed; the iteration was completed for exact accounting
        }
    }
    Ok(HammerOutcome {
        iterations,
        cycles: sim.now() - start,
        flips: sim.flip_log()[watermark..].to_vec(),
        successful_rounds,
        failed_rounds,
        feasible: true,
    })
}

/// Hammers `pair` through the speculative gadget until the first flip or
/// until `budget` virtual cycles elapse (overrun is at most one iteration:
/// a flip iteration is always completed).
pub fn speculative_hammer(
    sim: &mut Simulator,
    layout: &VictimLayout,
    pair: &HammerPair,
    round: &RoundConfig,
    mode: HammerMode,
    budget: Cycles,
) -> Result<HammerOutcome> {
    let secondary = match mode {
        HammerMode::Hybrid => Some(pair.addr_b),
        HammerMode::PureSpeculative => None,
    };
    hammer_loop(sim, layout, pair.addr_a, secondary, round, budget)
}

/// Hammers the single row of `target` through the gadget. Requires a
/// closed-page controller — with an open-page policy the row would simply
/// stay open and never re-activate.
pub fn one_location_hammer(
    sim: &mut Simulator,
    layout: &VictimLayout,
    target: u64,
    round: &RoundConfig,
    budget: Cycles,
) -> Result<HammerOutcome> {
    if !sim.dram().config().closed_page {
        return Err(SimError::InvalidConfig(
            "one-location hammering needs a closed-page memory controller".into(),
        ));
    }
    hammer_loop(sim, layout, target, None, round, budget)
}

/// Result of architecturally hammering at a fixed per-step cost.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DirectHammerOutcome {
    /// Individual row activations attempted (one per access).
    pub hammers: u64,
    pub cycles_to_flip: Option<Cycles>,
    /// False when no flip can ever land at this rate; the loop was skipped.
    pub feasible: bool,
}

impl DirectHammerOutcome {
    fn infeasible() -> Self {
        DirectHammerOutcome {
            hammers: 0,
            cycles_to_flip: None,
            feasible: false,
        }
    }
}

/// The fixed loop shared by the direct hammering entry points: cycle
/// through `targets`, one flush+access+padding step each, until the first
/// flip or the deadline.
///
/// Direct hammering never draws jitter, so every step costs the same and
/// the run is periodic with the refresh clock: the aligned first window
/// contains the maximum possible number of in-window activations. If that
/// window ends without a flip, no later window can flip either, and the
/// loop stops early regardless of the remaining budget.
fn direct_hammer_loop(
    sim: &mut Simulator,
    targets: &[u64],
    padding: Cycles,
    window_budget: u64,
) -> Result<DirectHammerOutcome> {
    sim.align_to_refresh();
    let window = sim.dram().config().refresh_interval_cycles;
    let start = sim.now();
    let deadline = start + window_budget * window;
    let watermark = sim.flip_log().len();
    let mut hammers = 0u64;
    'outer: while sim.now() < deadline && sim.now() - start < window {
        for &va in targets {
            hammer_step(sim, va, padding)?;
            hammers += 1;
            if sim.flip_log().len() > watermark {
                break 'outer;
            }
        }
    }
    Ok(DirectHammerOutcome {
        hammers,
        cycles_to_flip: if sim.flip_log().len() > watermark {
            Some(sim.now() - start)
        } else {
            None
        },
        feasible: true,
    })
}

/// True when some unlatched weak cell adjacent to one of `rows` (same
/// bank) could flip given at most `per_window` activations per refresh
/// window next to it.
fn any_cell_reachable(sim: &Simulator, bank: u64, rows: &[u64], per_window: u64) -> bool {
    let g = sim.dram().geometry();
    sim.dram()
        .config()
        .template
        .cells
        .iter()
        .enumerate()
        .any(|(i, cell)| {
            !sim.dram().cell_latched(i)
                && g.flat_bank(&cell.victim) == bank
                && rows
                    .iter()
                    .any(|&r| cell.victim.row + 1 == r || r + 1 == cell.victim.row)
                && (cell.threshold as u64) <= per_window
        })
}

/// Repeats access + flush + padding against one row until the first flip
/// or until `window_budget` refresh windows elapse. With a closed-page
/// controller every access is an activation; with open-page the row stays
/// open and nothing is disturbed after the first access.
pub fn direct_hammer_row(
    sim: &mut Simulator,
    va: u64,
    padding: Cycles,
    window_budget: u64,
) -> Result<DirectHammerOutcome> {
    let g = *sim.dram().geometry();
    let addr = g.map_physical(sim.pa_of_va(va)?)?;
    let window = sim.dram().config().refresh_interval_cycles;
    let per_window = if sim.dram().config().closed_page {
        let step = sim.timing().rowbuf_miss + sim.timing().clflush_cost + padding;
        window / step + 2
    } else {
        1 // opens once per window, stays open until the refresh closes it
    };
    if !any_cell_reachable(sim, g.flat_bank(&addr), &[addr.row], per_window) {
        return Ok(DirectHammerOutcome::infeasible());
    }
    direct_hammer_loop(sim, &[va], padding, window_budget)
}

/// Alternately activates the two rows of `pair` until the first flip or
/// until `window_budget` refresh windows elapse. Alternation forces a row
/// activation on every access under either page policy, so one hammer
/// costs exactly `rowbuf_miss + clflush + padding` cycles and the enclosed
/// victim row collects one disturbance per hammer.
pub fn direct_hammer_pair(
    sim: &mut Simulator,
    pair: &HammerPair,
    padding: Cycles,
    window_budget: u64,
) -> Result<DirectHammerOutcome> {
    let window = sim.dram().config().refresh_interval_cycles;
    let step = sim.timing().rowbuf_miss + sim.timing().clflush_cost + padding;
    // Upper bound on activations next to any cell per window; outer
    // neighbors really see only half of this, which errs on the side of
    // simulating.
    let per_window = window / step + 2;
    if !any_cell_reachable(sim, pair.flat_bank, &[pair.row_a, pair.row_b], per_window) {
        return Ok(DirectHammerOutcome::infeasible());
    }
    direct_hammer_loop(sim, &[pair.addr_a, pair.addr_b], padding, window_budget)
}

/// Places the gadget for hammering `pair`: same bank, rows well clear of
/// the pair and its victims so gadget traffic cannot contaminate the
/// disturbance counts being attacked.
pub fn layout_for_pair(sim: &mut Simulator, pair: &HammerPair) -> Result<(VictimLayout, u64)> {
    let g = *sim.dram().geometry();
    let bank_addr = g.map_physical(sim.pa_of_va(pair.addr_a)?)?;
    let lo = pair.row_a.saturating_sub(2);
    let hi = (pair.row_b + 2).min(g.rows_per_bank - 1);
    let avoid: Vec<u64> = (lo..=hi).collect();
    layout_in_bank(
        sim,
        &DramAddress {
            row: 0,
            col: 0,
            ..bank_addr
        },
        &avoid,
    )
}

/// Parameters of the full pipeline.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackConfig {
    pub scan: ScanConfig,
    /// Training calls per round; None = calibrate first.
    pub train_k: Option<u32>,
    /// Drain-loop length; None = calibrate first.
    pub drain_len: Option<Cycles>,
    pub calibration_trials: u32,
    pub drain_search_max: Cycles,
    /// Virtual-cycle budget for the hammering phase.
    pub hammer_budget: Cycles,
    /// Extra cycles inserted into every round.
    pub padding: Cycles,
    pub flush: FlushMode,
    pub mode: HammerMode,
}

/// Everything the pipeline learned and did, serializable for reports.
/// Wall-clock time deliberately stays out so identical runs serialize
/// identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlipReport {
    pub pair: HammerPair,
    pub min_training: u32,
    pub drain_len: Cycles,
    /// Hammer iterations across all attempted pairs.
    pub iterations: u64,
    pub hammer_cycles: Cycles,
    pub hammer_seconds: f64,
    /// Virtual cycles of the whole pipeline (scan included).
    pub total_cycles: Cycles,
    pub scanned_pairs: u64,
    pub scan_hits: u64,
    pub successful_rounds: u64,
    pub failed_rounds: u64,
    pub flips: Vec<FlipEvent>,
}

/// Outcome of the full pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum AttackOutcome {
    /// At least one disturbance flip landed.
    Flipped(FlipReport),
    /// The scan found no vulnerable pair in the region.
    NoVulnerableRows { scanned_pairs: u64 },
    /// Vulnerable pairs existed but no flip landed within the budget.
    BudgetExhausted(FlipReport),
}

fn resolve_parameters(sim: &mut Simulator, cfg: &AttackConfig) -> Result<(u32, Cycles)> {
    if let (Some(t), Some(d)) = (cfg.train_k, cfg.drain_len) {
        return Ok((t, d));
    }
    let (layout, probe) = default_layout(sim)?;
    let calib = run_full_calibration(
        sim,
        &layout,
        probe,
        cfg.calibration_trials,
        cfg.drain_search_max,
    )?;
    Ok((
        cfg.train_k.unwrap_or(calib.min_training),
        cfg.drain_len.unwrap_or(calib.drain_len),
    ))
}

/// Runs the whole pipeline: calibrate (unless parameters are pinned), scan
/// the region, then hammer discovered pairs in scan order until the first
/// flip or until the budget runs out.
pub fn full_attack(sim: &mut Simulator, cfg: &AttackConfig) -> Result<AttackOutcome> {
    let pipeline_start = sim.now();
    let (train_k, drain_len) = resolve_parameters(sim, cfg)?;
    let round = RoundConfig {
        train_k,
        drain: DrainMode::Loop(drain_len),
        padding: cfg.padding,
        flush_target: true,
        flush: cfg.flush,
    };
    let scan = scan_vulnerable_pairs(sim, &cfg.scan)?;
    if scan.hits.is_empty() {
        return Ok(AttackOutcome::NoVulnerableRows {
            scanned_pairs: scan.scanned,
        });
    }
    let mut remaining = cfg.hammer_budget;
    let mut iterations = 0u64;
    let mut hammer_cycles = 0u64;
    let mut successful_rounds = 0u64;
    let mut failed_rounds = 0u64;
    let mut attempted = scan.hits[0].pair;
    for hit in &scan.hits {
        if remaining == 0 {
            break;
        }
        attempted = hit.pair;
        let (layout, _) = layout_for_pair(sim, &hit.pair)?;
        let out = speculative_hammer(sim, &layout, &hit.pair, &round, cfg.mode, remaining)?;
        iterations += out.iterations;
        hammer_cycles += out.cycles;
        successful_rounds += out.successful_rounds;
        failed_rounds += out.failed_rounds;
        remaining = remaining.saturating_sub(out.cycles);
        let report = FlipReport {
            pair: hit.pair,
            min_training: train_k,
            drain_len,
            iterations,
            hammer_cycles,
            hammer_seconds: sim.seconds(hammer_cycles),
            total_cycles: sim.now() - pipeline_start,
            scanned_pairs: scan.scanned,
            scan_hits: scan.hits.len() as u64,
            successful_rounds,
            failed_rounds,
            flips: out.flips,
        };
        if !report.flips.is_empty() {
            return Ok(AttackOutcome::Flipped(report));
        }
    }
    Ok(AttackOutcome::BudgetExhausted(FlipReport {
        pair: attempted,
        min_training: train_k,
        drain_len,
        iterations,
        hammer_cycles,
        hammer_seconds: sim.seconds(hammer_cycles),
        total_cycles: sim.now() - pipeline_start,
        scanned_pairs: scan.scanned,
        scan_hits: scan.hits.len() as u64,
        successful_rounds,
        failed_rounds,
        flips: Vec::new(),
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dram::{DramConfig, DramGeometry, FlipTemplate, TemplateCell};
    use crate::sim::SimConfig;

    /// 2 banks x 32 rows x 64 cols: 32 KiB of memory, 512-byte rows.
    fn small_geometry() -> DramGeometry {
        DramGeometry {
            channels: 1,
            dimms_per_channel: 1,
            ranks_per_dimm: 1,
            banks_per_rank: 2,
            rows_per_bank: 32,
            cols_per_row: 64,
        }
    }

    fn cell(bank: u64, row: u64, col: u64, threshold: u32) -> TemplateCell {
        TemplateCell {
            victim: DramAddress {
                channel: 0,
                dimm: 0,
                rank: 0,
                bank,
                row,
                col,
            },
            bit: 2,
            direction: FlipDirection::ZeroToOne,
            threshold,
        }
    }

    fn small_config(cells: Vec<TemplateCell>) -> SimConfig {
        SimConfig {
            dram: DramConfig {
                geometry: small_geometry(),
                refresh_interval_cycles: 1_000_000,
                closed_page: false,
                fill_byte: 0,
                template: FlipTemplate { cells },
            },
            ..SimConfig::default()
        }
    }

    fn whole_region_scan(iterations: u64) -> ScanConfig {
        ScanConfig {
            region_start: 0,
            region_len: small_geometry().capacity(),
            iterations_per_pair: iterations,
            padding: 0,
            max_pairs: 0,
        }
    }

    /// Virtual address of (bank, row, col 0) under the identity mapping.
    fn va_of(bank: u64, row: u64) -> u64 {
        let g = small_geometry();
        g.physical_of(&DramAddress {
            channel: 0,
            dimm: 0,
            rank: 0,
            bank,
            row,
            col: 0,
        })
        .unwrap()
    }

    #[test]
    fn pair_construction_normalizes_order() {
        let sim = Simulator::new(small_config(vec![])).unwrap();
        let p = HammerPair::from_vas(&sim, va_of(0, 12), va_of(0, 10)).unwrap();
        assert_eq!((p.row_a, p.row_b), (10, 12));
        assert_eq!(p.victim_row(), 11);
        assert_eq!(p.addr_a, va_of(0, 10));
    }

    #[test]
    fn cross_bank_pair_is_misuse() {
        let sim = Simulator::new(small_config(vec![])).unwrap();
        let err = HammerPair::from_vas(&sim, va_of(0, 10), va_of(1, 12)).unwrap_err();
        assert!(matches!(err, SimError::Misuse(_)));
    }

    #[test]
    fn wrong_row_spacing_is_misuse() {
        let sim = Simulator::new(small_config(vec![])).unwrap();
        for other in [10, 11, 13, 15] {
            let err = HammerPair::from_vas(&sim, va_of(0, 10), va_of(0, other)).unwrap_err();
            assert!(matches!(err, SimError::Misuse(_)), "row {other}");
        }
    }

    #[test]
    fn region_coverage_is_complete_and_exact() {
        let mut sim = Simulator::new(small_config(vec![])).unwrap();
        let cov = map_region_rows(&mut sim, &whole_region_scan(1)).unwrap();
        // Every (bank, row) appears, each covered by exactly its 512 bytes.
        assert_eq!(cov.len(), 64);
        for ((bank, row), chunks) in &cov {
            let total: u64 = chunks.iter().map(|c| c.len).sum();
            assert_eq!(total, 512, "bank {bank} row {row}");
            for c in chunks {
                assert_eq!(c.va, va_of(*bank, *row) + (c.va % 512));
            }
        }
    }

    #[test]
    fn scan_results_match_hand_worked_template() {
        // S = 50 iterations: enclosed victims collect 100 activations,
        // outer neighbors 50.
        let cells = vec![
            cell(0, 11, 3, 100), // enclosed by (10,12): 100 >= 100, flips
            cell(0, 11, 7, 101), // just out of reach: 100 < 101
            cell(1, 5, 0, 40),   // flips for (4,6) enclosed and (2,4)/(6,8) outer
        ];
        let mut sim = Simulator::new(small_config(cells)).unwrap();
        let out = scan_vulnerable_pairs(&mut sim, &whole_region_scan(50)).unwrap();
        assert_eq!(out.candidates, 60); // 30 pairs per bank
        assert_eq!(out.scanned, 60);
        assert!(!out.partial);
        let found: Vec<(u64, u64, usize)> = out
            .hits
            .iter()
            .map(|h| (h.pair.flat_bank, h.pair.row_a, h.flips.len()))
            .collect();
        assert_eq!(found, vec![(0, 10, 1), (1, 2, 1), (1, 4, 1), (1, 6, 1)]);
        // Only pairs with a weak cell next to an aggressor were simulated.
        assert_eq!(out.skipped_empty, 60 - 6);
        // The hit against the bank-0 cell names the right byte and bit.
        let hit = &out.hits[0];
        assert_eq!(hit.flips[0].va, va_of(0, 11) + 3 * CELL_WIDTH);
        assert_eq!(hit.flips[0].bit, 2);
        assert_eq!(hit.flips[0].direction, FlipDirection::ZeroToOne);
    }

    #[test]
    fn scan_restores_memory_and_recharges_cells() {
        let cells = vec![cell(0, 11, 3, 100)];
        let mut sim = Simulator::new(small_config(cells)).unwrap();
        let out = scan_vulnerable_pairs(&mut sim, &whole_region_scan(50)).unwrap();
        assert_eq!(out.hits.len(), 1);
        assert_eq!(sim.flip_log().len(), 1, "the flip really happened");
        // Every byte reads as the fill pattern again and the cell can flip
        // anew.
        for va in (0..small_geometry().capacity()).step_by(64) {
            assert_eq!(sim.read_byte(va).unwrap(), 0);
        }
        assert!(!sim.dram().cell_latched(0));
    }

    #[test]
    fn empty_template_scans_to_no_hits_without_hammering() {
        let mut sim = Simulator::new(small_config(vec![])).unwrap();
        let before = sim.now();
        let out = scan_vulnerable_pairs(&mut sim, &whole_region_scan(1000)).unwrap();
        assert!(out.hits.is_empty());
        assert_eq!(out.skipped_empty, out.scanned);
        assert_eq!(sim.now(), before, "settled analytically, no time spent");
    }

    #[test]
    fn max_pairs_limits_the_scan() {
        let mut sim = Simulator::new(small_config(vec![])).unwrap();
        let cfg = ScanConfig {
            max_pairs: 10,
            ..whole_region_scan(10)
        };
        let out = scan_vulnerable_pairs(&mut sim, &cfg).unwrap();
        assert_eq!(out.scanned, 10);
        assert_eq!(out.candidates, 60);
        assert!(out.partial);
    }

    #[test]
    fn randomized_mapping_finds_the_same_physical_flips() {
        let cells = vec![cell(0, 11, 3, 100), cell(1, 5, 0, 40)];
        let physical_hits = |mapping: MappingMode| -> (Vec<(u64, u8)>, u64) {
            let mut cfg = small_config(cells.clone());
            cfg.mapping = mapping;
            cfg.seed = 77;
            let mut sim = Simulator::new(cfg).unwrap();
            let out = scan_vulnerable_pairs(&mut sim, &whole_region_scan(50)).unwrap();
            let mut flips: Vec<(u64, u8)> = out
                .hits
                .iter()
                .flat_map(|h| h.flips.iter())
                .map(|f| (sim.pa_of_va(f.va).unwrap(), f.bit))
                .collect();
            flips.sort_unstable();
            flips.dedup();
            (flips, sim.address_space().inspect_queries())
        };
        let (identity, identity_queries) = physical_hits(MappingMode::Identity);
        let (randomized, randomized_queries) = physical_hits(MappingMode::RandomizedPages);
        assert_eq!(identity, randomized);
        assert!(!identity.is_empty());
        assert_eq!(identity_queries, 0, "identity scan never reads the page map");
        assert!(randomized_queries > 0, "randomized scan must inspect pages");
    }

    #[test]
    fn randomized_scan_without_physical_knowledge_is_refused() {
        let mut cfg = small_config(vec![cell(0, 11, 3, 100)]);
        cfg.mapping = MappingMode::RandomizedPages;
        cfg.knows_physical = false;
        let mut sim = Simulator::new(cfg).unwrap();
        let err = scan_vulnerable_pairs(&mut sim, &whole_region_scan(50)).unwrap_err();
        assert!(matches!(err, SimError::Misuse(_)));
    }

    fn hammer_setup(
        cells: Vec<TemplateCell>,
    ) -> (Simulator, HammerPair, VictimLayout, RoundConfig) {
        let mut sim = Simulator::new(small_config(cells)).unwrap();
        let pair = HammerPair::from_vas(&sim, va_of(0, 10), va_of(0, 12)).unwrap();
        let (layout, _) = layout_for_pair(&mut sim, &pair).unwrap();
        let round = RoundConfig::calibrated(4, sim.config().backlog_accrual);
        (sim, pair, layout, round)
    }

    #[test]
    fn hybrid_hammer_flips_with_exact_accounting() {
        // Threshold 120 over two activations per iteration: the flip lands
        // on the upper-aggressor access of iteration 60. The cold first
        // iteration costs 2135 (cold row buffers and caches), the steady
        // ones 1655 each.
        let (mut sim, pair, layout, round) = hammer_setup(vec![cell(0, 11, 3, 120)]);
        let out =
            speculative_hammer(&mut sim, &layout, &pair, &round, HammerMode::Hybrid, 1_000_000)
                .unwrap();
        assert!(out.feasible);
        assert_eq!(out.iterations, 60);
        assert_eq!(out.cycles, 2135 + 59 * 1655);
        assert_eq!(out.successful_rounds, 60);
        assert_eq!(out.failed_rounds, 0);
        assert_eq!(out.flips.len(), 1);
        assert_eq!(out.flips[0].addr.row, 11);
        assert_eq!(out.flips[0].direction, FlipDirection::ZeroToOne);
    }

    #[test]
    fn pure_speculative_hammers_at_half_rate() {
        let (mut sim, pair, layout, round) = hammer_setup(vec![cell(0, 11, 3, 120)]);
        let hybrid_cycles = {
            let (mut s2, p2, l2, r2) = hammer_setup(vec![cell(0, 11, 3, 120)]);
            speculative_hammer(&mut s2, &l2, &p2, &r2, HammerMode::Hybrid, 1_000_000)
                .unwrap()
                .cycles
        };
        let out = speculative_hammer(
            &mut sim,
            &layout,
            &pair,
            &round,
            HammerMode::PureSpeculative,
            1_000_000,
        )
        .unwrap();
        assert_eq!(out.iterations, 120, "single-aggressor disturbance");
        assert!(out.flips.len() == 1);
        assert!(out.cycles > hybrid_cycles, "stealth costs time");
        // The upper aggressor was never touched.
        let b_addr = sim
            .dram()
            .geometry()
            .map_physical(pair.addr_b)
            .unwrap();
        assert_eq!(sim.dram().activations_in_window(&b_addr), 0);
    }

    #[test]
    fn hopeless_hammering_is_settled_without_simulation() {
        // Threshold far beyond one refresh window of iterations.
        let (mut sim, pair, layout, round) = hammer_setup(vec![cell(0, 11, 3, 10_000)]);
        let before = sim.now();
        let out =
            speculative_hammer(&mut sim, &layout, &pair, &round, HammerMode::Hybrid, 1_000_000)
                .unwrap();
        assert!(!out.feasible);
        assert_eq!(out.iterations, 0);
        assert_eq!(sim.now(), before);
    }

    #[test]
    fn budget_bounds_the_hammer_phase() {
        let (mut sim, pair, layout, round) = hammer_setup(vec![cell(0, 11, 3, 120)]);
        let out = speculative_hammer(&mut sim, &layout, &pair, &round, HammerMode::Hybrid, 5000)
            .unwrap();
        assert!(out.flips.is_empty());
        assert_eq!(out.iterations, 3); // 2135 + 1655 < 5000 <= 2135 + 2*1655
        assert_eq!(out.cycles, 2135 + 2 * 1655);
    }

    #[test]
    fn one_location_needs_closed_page() {
        let (mut sim, pair, layout, round) = hammer_setup(vec![cell(0, 11, 3, 80)]);
        let err =
            one_location_hammer(&mut sim, &layout, pair.addr_a, &round, 1_000_000).unwrap_err();
        assert!(matches!(err, SimError::InvalidConfig(_)));
    }

    #[test]
    fn one_location_flips_under_closed_page() {
        let mut cfg = small_config(vec![cell(0, 11, 3, 80)]);
        cfg.dram.closed_page = true;
        let mut sim = Simulator::new(cfg).unwrap();
        let pair = HammerPair::from_vas(&sim, va_of(0, 10), va_of(0, 12)).unwrap();
        let (layout, _) = layout_for_pair(&mut sim, &pair).unwrap();
        let round = RoundConfig::calibrated(4, sim.config().backlog_accrual);
        let out = one_location_hammer(&mut sim, &layout, pair.addr_a, &round, 1_000_000).unwrap();
        assert!(out.feasible);
        assert_eq!(out.iterations, 80, "one activation per round");
        assert_eq!(out.flips.len(), 1);
        assert_eq!(out.flips[0].addr.row, 11);
    }

    #[test]
    fn direct_pair_flip_boundary_is_exact_to_one_cycle() {
        // Threshold 1000 in a 1,000,000-cycle window. The enclosed victim
        // collects one disturbance per hammer and the aligned first window
        // holds ceil(window / step) hammers, so step 1001 (padding 571)
        // reaches 1000 activations and step 1002 (padding 572) stops at
        // 999.
        for (padding, flips) in [(0, true), (571, true), (572, false), (573, false)] {
            let mut sim = Simulator::new(small_config(vec![cell(0, 11, 3, 1000)])).unwrap();
            let pair = HammerPair::from_vas(&sim, va_of(0, 10), va_of(0, 12)).unwrap();
            let out = direct_hammer_pair(&mut sim, &pair, padding, 10).unwrap();
            assert_eq!(out.cycles_to_flip.is_some(), flips, "padding {padding}");
            if flips {
                // The flip lands on the 1000th hammer exactly.
                assert_eq!(out.hammers, 1000);
                assert_eq!(out.cycles_to_flip, Some(1000 * (430 + padding)));
            }
        }
    }

    #[test]
    fn hopeless_direct_pair_is_settled_analytically_near_the_boundary() {
        // padding 572 is unreachable but within the overestimate's slack:
        // it must really simulate (one window, then stop). padding 573 is
        // provably hopeless and must not touch the clock at all.
        let mut sim = Simulator::new(small_config(vec![cell(0, 11, 3, 1000)])).unwrap();
        let pair = HammerPair::from_vas(&sim, va_of(0, 10), va_of(0, 12)).unwrap();
        let simulated = direct_hammer_pair(&mut sim, &pair, 572, 1000).unwrap();
        assert!(simulated.feasible);
        assert!(simulated.hammers > 0);
        assert!(
            sim.now() < 2_100_000,
            "a fruitless window must stop the loop early, budget notwithstanding"
        );
        let mut sim2 = Simulator::new(small_config(vec![cell(0, 11, 3, 1000)])).unwrap();
        let pair2 = HammerPair::from_vas(&sim2, va_of(0, 10), va_of(0, 12)).unwrap();
        let skipped = direct_hammer_pair(&mut sim2, &pair2, 573, 1000).unwrap();
        assert!(!skipped.feasible);
        assert_eq!(skipped.hammers, 0);
        assert_eq!(sim2.now(), 0);
    }

    #[test]
    fn direct_single_row_hammering_is_inert_under_open_page() {
        let mut sim = Simulator::new(small_config(vec![cell(0, 11, 3, 80)])).unwrap();
        let out = direct_hammer_row(&mut sim, va_of(0, 10), 0, 2).unwrap();
        assert!(!out.feasible, "open-page rows stay open; nothing activates");
        assert_eq!(out.hammers, 0);
    }

    #[test]
    fn direct_single_row_hammering_flips_under_closed_page() {
        let mut cfg = small_config(vec![cell(0, 11, 3, 80)]);
        cfg.dram.closed_page = true;
        let mut sim = Simulator::new(cfg).unwrap();
        let out = direct_hammer_row(&mut sim, va_of(0, 10), 0, 2).unwrap();
        assert_eq!(out.hammers, 80);
        // Each step costs exactly rowbuf_miss + clflush = 430.
        assert_eq!(out.cycles_to_flip, Some(80 * 430));
    }

    #[test]
    fn eviction_set_flushing_also_carries_the_attack() {
        // Default (large) geometry so congruent lines exist; the walk's own
        // DRAM traffic makes rounds slower but speculation still fires.
        let mut cfg = SimConfig::default();
        cfg.dram.template = FlipTemplate {
            cells: vec![TemplateCell {
                victim: DramAddress {
                    channel: 0,
                    dimm: 0,
                    rank: 0,
                    bank: 0,
                    row: 101,
                    col: 0,
                },
                bit: 0,
                direction: FlipDirection::ZeroToOne,
                threshold: 500,
            }],
        };
        let mut sim = Simulator::new(cfg).unwrap();
        let g = *sim.dram().geometry();
        let pa = |row: u64| {
            g.physical_of(&DramAddress {
                channel: 0,
                dimm: 0,
                rank: 0,
                bank: 0,
                row,
                col: 0,
            })
            .unwrap()
        };
        let pair = HammerPair::from_vas(&sim, pa(100), pa(102)).unwrap();
        let (layout, _) = layout_for_pair(&mut sim, &pair).unwrap();
        let round = RoundConfig {
            flush: FlushMode::EvictionSet { size: 8 },
            ..RoundConfig::calibrated(4, sim.config().backlog_accrual)
        };
        let out = speculative_hammer(
            &mut sim,
            &layout,
            &pair,
            &round,
            HammerMode::Hybrid,
            100_000_000,
        )
        .unwrap();
        assert_eq!(out.flips.len(), 1);
        assert_eq!(out.flips[0].addr.row, 101);
        assert_eq!(out.failed_rounds, 0, "speculation must survive eviction flushing");
        // Same attack with clflush for comparison: eviction flushing pays
        // real DRAM latency per walk and must be slower per iteration.
        let mut sim2 = Simulator::new(SimConfig {
            dram: sim.config().dram.clone(),
            ..SimConfig::default()
        })
        .unwrap();
        let (layout2, _) = layout_for_pair(&mut sim2, &pair).unwrap();
        let round2 = RoundConfig::calibrated(4, sim2.config().backlog_accrual);
        let out2 = speculative_hammer(
            &mut sim2,
            &layout2,
            &pair,
            &round2,
            HammerMode::Hybrid,
            100_000_000,
        )
        .unwrap();
        assert!(out.cycles / out.iterations > out2.cycles / out2.iterations);
    }

    #[test]
    fn full_attack_flips_the_templated_cell() {
        let cells = vec![cell(1, 5, 0, 120)];
        let mut sim = Simulator::new(small_config(cells)).unwrap();
        let cfg = AttackConfig {
            scan: whole_region_scan(100),
            train_k: None,
            drain_len: None,
            calibration_trials: 50,
            drain_search_max: 2000,
            hammer_budget: 1_000_000,
            padding: 0,
            flush: FlushMode::Clflush,
            mode: HammerMode::Hybrid,
        };
        let outcome = full_attack(&mut sim, &cfg).unwrap();
        let report = match outcome {
            AttackOutcome::Flipped(r) => r,
            other => panic!("expected a flip, got {other:?}"),
        };
        assert_eq!(report.min_training, 4);
        assert_eq!(report.drain_len, 280);
        assert_eq!((report.pair.flat_bank, report.pair.row_a), (1, 4));
        assert_eq!(report.iterations, 60);
        assert_eq!(report.hammer_cycles, 2135 + 59 * 1655);
        assert_eq!(report.scan_hits, 1);
        assert_eq!(report.scanned_pairs, 60);
        assert_eq!(report.flips[0].addr.row, 5);
        assert_eq!(report.successful_rounds, 60);
    }

    #[test]
    fn full_attack_reports_no_vulnerable_rows_for_empty_template() {
        let mut sim = Simulator::new(small_config(vec![])).unwrap();
        let cfg = AttackConfig {
            scan: whole_region_scan(100),
            train_k: Some(4),
            drain_len: Some(280),
            calibration_trials: 50,
            drain_search_max: 2000,
            hammer_budget: 1_000_000,
            padding: 0,
            flush: FlushMode::Clflush,
            mode: HammerMode::Hybrid,
        };
        match full_attack(&mut sim, &cfg).unwrap() {
            AttackOutcome::NoVulnerableRows { scanned_pairs } => assert_eq!(scanned_pairs, 60),
            other => panic!("expected no vulnerable rows, got {other:?}"),
        }
    }

    #[test]
    fn full_attack_without_page_map_stays_inspection_free() {
        // Identity-mapped memory (hugepage-like contiguity): the attacker
        // never needs the page map, and the instrumentation counter proves
        // it.
        let mut cfg_sim = small_config(vec![cell(1, 5, 0, 120)]);
        cfg_sim.knows_physical = false;
        let mut sim = Simulator::new(cfg_sim).unwrap();
        let cfg = AttackConfig {
            scan: whole_region_scan(100),
            train_k: Some(4),
            drain_len: Some(280),
            calibration_trials: 50,
            drain_search_max: 2000,
            hammer_budget: 1_000_000,
            padding: 0,
            flush: FlushMode::Clflush,
            mode: HammerMode::Hybrid,
        };
        let outcome = full_attack(&mut sim, &cfg).unwrap();
        assert!(matches!(outcome, AttackOutcome::Flipped(_)));
        assert_eq!(sim.address_space().inspect_queries(), 0);
    }

    #[test]
    fn every_flip_lands_next_to_a_hammered_row() {
        // Whatever the template, disturbance only reaches rows adjacent to
        // rows the attack actually activated: the aggressors and the
        // gadget's own rows.
        use rand::{Rng, SeedableRng};
        for seed in 0..8u64 {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let cells: Vec<TemplateCell> = (0..6)
                .map(|_| TemplateCell {
                    victim: DramAddress {
                        channel: 0,
                        dimm: 0,
                        rank: 0,
                        bank: rng.gen_range(0..2),
                        row: rng.gen_range(0..32),
                        col: rng.gen_range(0..64),
                    },
                    bit: rng.gen_range(0..8),
                    direction: FlipDirection::ZeroToOne,
                    threshold: rng.gen_range(1..400),
                })
                .collect();
            let mut sim = Simulator::new(small_config(cells)).unwrap();
            let row_a = rng.gen_range(0..28);
            let pair =
                HammerPair::from_vas(&sim, va_of(0, row_a), va_of(0, row_a + 2)).unwrap();
            let (layout, _) = layout_for_pair(&mut sim, &pair).unwrap();
            let round = RoundConfig::calibrated(4, sim.config().backlog_accrual);
            let out = speculative_hammer(
                &mut sim,
                &layout,
                &pair,
                &round,
                HammerMode::Hybrid,
                1_000_000,
            )
            .unwrap();
            let g = *sim.dram().geometry();
            let mut hammered: Vec<(u64, u64)> = vec![
                (pair.flat_bank, pair.row_a),
                (pair.flat_bank, pair.row_b),
            ];
            for va in [layout.size_location, layout.array_base] {
                let addr = g.map_physical(sim.pa_of_va(va).unwrap()).unwrap();
                hammered.push((g.flat_bank(&addr), addr.row));
            }
            for flip in &out.flips {
                let bank = g.flat_bank(&flip.addr);
                let near = hammered
                    .iter()
                    .any(|&(hb, hr)| hb == bank && flip.addr.row.abs_diff(hr) == 1);
                assert!(near, "seed {seed}: flip at row {} not adjacent", flip.addr.row);
            }
        }
    }
}
