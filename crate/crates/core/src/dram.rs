//! DRAM organization, row-buffer behavior, and disturbance accounting.
//!
//! The model tracks, per bank, which row the row buffer currently holds and
//! how many times each row was activated (opened) since the last refresh.
//! A flip template lists the physically weak cells; a templated cell flips
//! once the combined activations of its two neighbor rows reach the cell's
//! threshold inside a single refresh window.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::timing::TimingModel;
use crate::Cycles;

/// Bytes per addressable DRAM cell (one column).
pub const CELL_WIDTH: u64 = 8;

/// Default refresh window: 64 ms at 2.6 GHz.
pub const DEFAULT_REFRESH_INTERVAL: Cycles = 166_400_000;

/// Default activation threshold of a templated weak cell, chosen so that a
/// hammer stream costing 1500 cycles per activation just saturates one
/// refresh window: `166_400_000 / 1500 = 110_933`.
pub const DEFAULT_CELL_THRESHOLD: u32 = 110_933;

/// Physical organization of the memory system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DramGeometry {
    pub channels: u64,
    pub dimms_per_channel: u64,
    pub ranks_per_dimm: u64,
    pub banks_per_rank: u64,
    pub rows_per_bank: u64,
    pub cols_per_row: u64,
}

impl DramGeometry {
    /// Total capacity in bytes.
    pub fn capacity(&self) -> u64 {
        self.channels
            * self.dimms_per_channel
            * self.ranks_per_dimm
            * self.banks_per_rank
            * self.rows_per_bank
            * self.cols_per_row
            * CELL_WIDTH
    }

    /// Number of independent banks (each with its own row buffer).
    pub fn total_banks(&self) -> u64 {
        self.channels * self.dimms_per_channel * self.ranks_per_dimm * self.banks_per_rank
    }

    /// Physical-address distance between vertically adjacent rows of the
    /// same bank under the linear slicing of [`DramGeometry::map_physical`].
    pub fn row_stride(&self) -> u64 {
        CELL_WIDTH * self.cols_per_row * self.banks_per_rank
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("channels", self.channels),
            ("dimms_per_channel", self.dimms_per_channel),
            ("ranks_per_dimm", self.ranks_per_dimm),
            ("banks_per_rank", self.banks_per_rank),
            ("cols_per_row", self.cols_per_row),
        ] {
            if v == 0 {
                return Err(SimError::InvalidConfig(format!("{name} must be >= 1")));
            }
        }
        if self.rows_per_bank < 3 {
            return Err(SimError::InvalidConfig(
                "rows_per_bank must be >= 3 so a row can have two neighbors".into(),
            ));
        }
        // A cache line (64 bytes) must not straddle rows, so a row must hold
        // at least 8 cells.
        if self.cols_per_row < 8 {
            return Err(SimError::InvalidConfig(
                "cols_per_row must be >= 8 (one cache line per row minimum)".into(),
            ));
        }
        Ok(())
    }

    /// Splits a physical address into DRAM coordinates. The slicing is
    /// linear from the least significant end: cell offset, column, bank,
    /// row, rank, DIMM, channel.
    pub fn map_physical(&self, pa: u64) -> Result<DramAddress> {
        if pa >= self.capacity() {
            return Err(SimError::AddressOutOfRange {
                pa,
                capacity: self.capacity(),
            });
        }
        let mut idx = pa / CELL_WIDTH;
        let col = idx % self.cols_per_row;
        idx /= self.cols_per_row;
        let bank = idx % self.banks_per_rank;
        idx /= self.banks_per_rank;
        let row = idx % self.rows_per_bank;
        idx /= self.rows_per_bank;
        let rank = idx % self.ranks_per_dimm;
        idx /= self.ranks_per_dimm;
        let dimm = idx % self.dimms_per_channel;
        idx /= self.dimms_per_channel;
        let channel = idx;
        Ok(DramAddress {
            channel,
            dimm,
            rank,
            bank,
            row,
            col,
        })
    }

    /// Inverse of [`DramGeometry::map_physical`].
    pub fn physical_of(&self, addr: &DramAddress) -> Result<u64> {
        self.check_address(addr)?;
        let mut idx = addr.channel;
        idx = idx * self.dimms_per_channel + addr.dimm;
        idx = idx * self.ranks_per_dimm + addr.rank;
        idx = idx * self.rows_per_bank + addr.row;
        idx = idx * self.banks_per_rank + addr.bank;
        idx = idx * self.cols_per_row + addr.col;
        Ok(idx * CELL_WIDTH)
    }

    /// Index of the bank `addr` belongs to, counting across channels, DIMMs
    /// and ranks.
    pub fn flat_bank(&self, addr: &DramAddress) -> u64 {
        ((addr.channel * self.dimms_per_channel + addr.dimm) * self.ranks_per_dimm + addr.rank)
            * self.banks_per_rank
            + addr.bank
    }

    pub fn check_address(&self, addr: &DramAddress) -> Result<()> {
        if addr.channel >= self.channels
            || addr.dimm >= self.dimms_per_channel
            || addr.rank >= self.ranks_per_dimm
            || addr.bank >= self.banks_per_rank
            || addr.row >= self.rows_per_bank
            || addr.col >= self.cols_per_row
        {
            return Err(SimError::BadDramAddress(format!("{addr:?}")));
        }
        Ok(())
    }
}

impl Default for DramGeometry {
    /// Geometry of the reference laptop target: 8 GiB of DDR3 as two DIMMs
    /// of two ranks with eight banks each.
    fn default() -> Self {
        DramGeometry {
            channels: 1,
            dimms_per_channel: 2,
            ranks_per_dimm: 2,
            banks_per_rank: 8,
            rows_per_bank: 32768,
            cols_per_row: 1024,
        }
    }
}

/// Full DRAM coordinates of one cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DramAddress {
    pub channel: u64,
    pub dimm: u64,
    pub rank: u64,
    pub bank: u64,
    pub row: u64,
    pub col: u64,
}

/// Direction in which a weak cell flips.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FlipDirection {
    ZeroToOne,
    OneToZero,
}

impl FlipDirection {
    /// Compact form used in CSV exports.
    pub fn as_str(&self) -> &'static str {
        match self {
            FlipDirection::ZeroToOne => "0to1",
            FlipDirection::OneToZero => "1to0",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "0to1" => Ok(FlipDirection::ZeroToOne),
            "1to0" => Ok(FlipDirection::OneToZero),
            other => Err(SimError::InvalidConfig(format!(
                "unknown flip direction {other:?} (expected 0to1 or 1to0)"
            ))),
        }
    }
}

/// One physically weak cell: where it lives, which bit flips, in which
/// direction, and how many neighbor-row activations it takes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateCell {
    pub victim: DramAddress,
    pub bit: u8,
    pub direction: FlipDirection,
    pub threshold: u32,
}

/// Ground truth of which cells are vulnerable, typically obtained by a
/// prior profiling run of the machine being modeled.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlipTemplate {
    pub cells: Vec<TemplateCell>,
}

impl FlipTemplate {
    pub fn validate(&self, geometry: &DramGeometry) -> Result<()> {
        for cell in &self.cells {
            geometry.check_address(&cell.victim)?;
            if cell.bit >= 8 {
                return Err(SimError::InvalidConfig(format!(
                    "template bit {} out of range 0..8",
                    cell.bit
                )));
            }
            if cell.threshold == 0 {
                return Err(SimError::InvalidConfig(
                    "template cell threshold must be nonzero".into(),
                ));
            }
        }
        Ok(())
    }
}

/// A disturbance-induced bit flip that became architecturally visible.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlipEvent {
    pub cycle: Cycles,
    pub addr: DramAddress,
    pub bit: u8,
    pub direction: FlipDirection,
}

impl FlipEvent {
    pub const CSV_HEADER: &'static str = "cycle,channel,dimm,rank,bank,row,col,bit,direction";

    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.cycle,
            self.addr.channel,
            self.addr.dimm,
            self.addr.rank,
            self.addr.bank,
            self.addr.row,
            self.addr.col,
            self.bit,
            self.direction.as_str()
        )
    }
}

/// DRAM-side configuration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DramConfig {
    pub geometry: DramGeometry,
    /// Length of one refresh window in cycles.
    pub refresh_interval_cycles: Cycles,
    /// Closed-page controller policy: every access activates its row and
    /// the row buffer is cleared immediately afterwards.
    pub closed_page: bool,
    /// Byte value unwritten memory reads as.
    pub fill_byte: u8,
    pub template: FlipTemplate,
}

impl Default for DramConfig {
    fn default() -> Self {
        DramConfig {
            geometry: DramGeometry::default(),
            refresh_interval_cycles: DEFAULT_REFRESH_INTERVAL,
            closed_page: false,
            fill_byte: 0,
            template: FlipTemplate::default(),
        }
    }
}

/// Result of one DRAM access.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DramAccess {
    pub latency: Cycles,
    /// Whether this access activated (opened) its row.
    pub opened: bool,
}

/// Per-bank row buffer: the row currently held open, if any.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RowBuffer {
    pub open_row: Option<u64>,
}

/// Per-row activation counters within the current refresh window.
///
/// Counters are epoch-tagged instead of being bulk-zeroed so that a refresh
/// costs O(1) regardless of geometry.
#[derive(Debug, Clone)]
pub struct DisturbanceState {
    counts: Vec<u32>,
    epochs: Vec<u32>,
    current_epoch: u32,
    rows_per_bank: u64,
}

impl DisturbanceState {
    fn new(total_banks: u64, rows_per_bank: u64) -> Self {
        let n = (total_banks * rows_per_bank) as usize;
        DisturbanceState {
            counts: vec![0; n],
            epochs: vec![0; n],
            current_epoch: 1,
            rows_per_bank,
        }
    }

    fn index(&self, flat_bank: u64, row: u64) -> usize {
        (flat_bank * self.rows_per_bank + row) as usize
    }

    fn get(&self, flat_bank: u64, row: u64) -> u32 {
        let i = self.index(flat_bank, row);
        if self.epochs[i] == self.current_epoch {
            self.counts[i]
        } else {
            0
        }
    }

    fn bump(&mut self, flat_bank: u64, row: u64) -> u32 {
        let i = self.index(flat_bank, row);
        if self.epochs[i] != self.current_epoch {
            self.epochs[i] = self.current_epoch;
            self.counts[i] = 0;
        }
        self.counts[i] += 1;
        self.counts[i]
    }

    fn reset_all(&mut self) {
        self.current_epoch += 1;
    }
}

/// The complete DRAM model: row buffers, activation counters, refresh
/// bookkeeping, sparse memory contents, and the flip template with its
/// latch state.
#[derive(Debug, Clone)]
pub struct DramState {
    config: DramConfig,
    row_buffers: Vec<RowBuffer>,
    disturbance: DisturbanceState,
    /// Start cycle of the refresh window currently in effect.
    window_start: Cycles,
    memory: HashMap<u64, u8>,
    /// Latch per template cell: once flipped, a cell stays flipped until
    /// its byte is explicitly rewritten.
    flipped: Vec<bool>,
    /// Aggressor index: (flat bank, row) -> template cells disturbed when
    /// that row is activated.
    aggressors: HashMap<(u64, u64), Vec<usize>>,
    /// Victim index: physical byte address -> template cells in that byte.
    victims_by_pa: HashMap<u64, Vec<usize>>,
    flip_log: Vec<FlipEvent>,
}

impl DramState {
    pub fn new(config: DramConfig) -> Result<Self> {
        config.geometry.validate()?;
        config.template.validate(&config.geometry)?;
        if config.refresh_interval_cycles == 0 {
            return Err(SimError::InvalidConfig(
                "refresh_interval_cycles must be nonzero".into(),
            ));
        }
        let geometry = config.geometry;
        let mut aggressors: HashMap<(u64, u64), Vec<usize>> = HashMap::new();
        let mut victims_by_pa: HashMap<u64, Vec<usize>> = HashMap::new();
        for (i, cell) in config.template.cells.iter().enumerate() {
            let bank = geometry.flat_bank(&cell.victim);
            let v = cell.victim.row;
            if v > 0 {
                aggressors.entry((bank, v - 1)).or_default().push(i);
            }
            if v + 1 < geometry.rows_per_bank {
                aggressors.entry((bank, v + 1)).or_default().push(i);
            }
            victims_by_pa
                .entry(geometry.physical_of(&cell.victim)?)
                .or_default()
                .push(i);
        }
        let n_cells = config.template.cells.len();
        Ok(DramState {
            row_buffers: vec![RowBuffer::default(); geometry.total_banks() as usize],
            disturbance: DisturbanceState::new(geometry.total_banks(), geometry.rows_per_bank),
            window_start: 0,
            memory: HashMap::new(),
            flipped: vec![false; n_cells],
            aggressors,
            victims_by_pa,
            flip_log: Vec::new(),
            config,
        })
    }

    pub fn config(&self) -> &DramConfig {
        &self.config
    }

    pub fn geometry(&self) -> &DramGeometry {
        &self.config.geometry
    }

    /// Applies any refresh window boundary at or before `now`: all
    /// activation counters reset and every row buffer is precharged.
    pub fn refresh_tick(&mut self, now: Cycles) {
        let interval = self.config.refresh_interval_cycles;
        if now >= self.window_start + interval {
            let elapsed = now - self.window_start;
            self.window_start = now - (elapsed % interval);
            self.disturbance.reset_all();
            for rb in &mut self.row_buffers {
                rb.open_row = None;
            }
        }
    }

    /// Start cycle of the refresh window in effect after `refresh_tick`.
    pub fn window_start(&self) -> Cycles {
        self.window_start
    }

    /// First cycle of the next refresh window given the current one.
    pub fn next_window_boundary(&self) -> Cycles {
        self.window_start + self.config.refresh_interval_cycles
    }

    /// Performs one DRAM access at virtual time `now`, returning its
    /// latency and whether it activated the row. Disturbance checks run
    /// after every activation.
    pub fn access(&mut self, pa: u64, timing: &TimingModel, now: Cycles) -> Result<DramAccess> {
        let addr = self.config.geometry.map_physical(pa)?;
        self.refresh_tick(now);
        let bank = self.config.geometry.flat_bank(&addr) as usize;
        let opened = if self.config.closed_page {
            // The controller precharges after every access, so each access
            // re-activates its row.
            self.row_buffers[bank].open_row = None;
            true
        } else if self.row_buffers[bank].open_row == Some(addr.row) {
            false
        } else {
            self.row_buffers[bank].open_row = Some(addr.row);
            true
        };
        if opened {
            self.disturbance.bump(bank as u64, addr.row);
            self.disturb_neighbors(bank as u64, addr.row, now);
        }
        let latency = if opened {
            timing.rowbuf_miss
        } else {
            timing.rowbuf_hit
        };
        Ok(DramAccess { latency, opened })
    }

    /// Latency the access would take at `now`, without performing it.
    pub fn peek_latency(&self, pa: u64, timing: &TimingModel, now: Cycles) -> Result<Cycles> {
        let addr = self.config.geometry.map_physical(pa)?;
        let refreshed = now >= self.window_start + self.config.refresh_interval_cycles;
        let bank = self.config.geometry.flat_bank(&addr) as usize;
        let hit = !self.config.closed_page
            && !refreshed
            && self.row_buffers[bank].open_row == Some(addr.row);
        Ok(if hit {
            timing.rowbuf_hit
        } else {
            timing.rowbuf_miss
        })
    }

    fn disturb_neighbors(&mut self, bank: u64, row: u64, now: Cycles) {
        let Some(cells) = self.aggressors.get(&(bank, row)) else {
            return;
        };
        // Collect first: applying a flip mutates `memory` and the latches.
        let due: Vec<usize> = cells
            .iter()
            .copied()
            .filter(|&i| !self.flipped[i] && self.cell_sum(i) >= self.config.template.cells[i].threshold)
            .collect();
        for i in due {
            self.apply_flip(i, now);
        }
    }

    /// Combined neighbor-row activations currently charged against cell `i`.
    fn cell_sum(&self, i: usize) -> u32 {
        let cell = &self.config.template.cells[i];
        let bank = self.config.geometry.flat_bank(&cell.victim);
        let v = cell.victim.row;
        let below = if v > 0 {
            self.disturbance.get(bank, v - 1)
        } else {
            0
        };
        let above = if v + 1 < self.config.geometry.rows_per_bank {
            self.disturbance.get(bank, v + 1)
        } else {
            0
        };
        below.saturating_add(above)
    }

    fn apply_flip(&mut self, i: usize, now: Cycles) {
        let cell = self.config.template.cells[i];
        let pa = self
            .config
            .geometry
            .physical_of(&cell.victim)
            .expect("validated template cell");
        let old = self.read_byte_unchecked(pa);
        let new = match cell.direction {
            FlipDirection::ZeroToOne => old | (1 << cell.bit),
            FlipDirection::OneToZero => old & !(1 << cell.bit),
        };
        self.memory.insert(pa, new);
        self.flipped[i] = true;
        self.flip_log.push(FlipEvent {
            cycle: now,
            addr: cell.victim,
            bit: cell.bit,
            direction: cell.direction,
        });
    }

    /// Re-examines every template cell against the current counters and
    /// applies any flips that are due. Returns the newly applied events.
    pub fn check_flips(&mut self, now: Cycles) -> Vec<FlipEvent> {
        self.refresh_tick(now);
        let before = self.flip_log.len();
        let due: Vec<usize> = (0..self.config.template.cells.len())
            .filter(|&i| !self.flipped[i] && self.cell_sum(i) >= self.config.template.cells[i].threshold)
            .collect();
        for i in due {
            self.apply_flip(i, now);
        }
        self.flip_log[before..].to_vec()
    }

    /// All flips observed since construction, in event order.
    pub fn flip_log(&self) -> &[FlipEvent] {
        &self.flip_log
    }

    /// Latch state of template cell `i`: true while flipped and not yet
    /// rewritten.
    pub fn cell_latched(&self, i: usize) -> bool {
        self.flipped[i]
    }

    /// Activations charged to `(bank, row)` in the current window.
    pub fn activations_in_window(&self, addr: &DramAddress) -> u32 {
        self.disturbance
            .get(self.config.geometry.flat_bank(addr), addr.row)
    }

    pub fn open_row(&self, flat_bank: u64) -> Option<u64> {
        self.row_buffers[flat_bank as usize].open_row
    }

    fn read_byte_unchecked(&self, pa: u64) -> u8 {
        *self.memory.get(&pa).unwrap_or(&self.config.fill_byte)
    }

    pub fn read_byte(&self, pa: u64) -> Result<u8> {
        if pa >= self.config.geometry.capacity() {
            return Err(SimError::AddressOutOfRange {
                pa,
                capacity: self.config.geometry.capacity(),
            });
        }
        Ok(self.read_byte_unchecked(pa))
    }

    /// Architectural write. Rewriting a flipped template cell's byte
    /// recharges the cell: its latch clears and it can flip again later.
    pub fn write_byte(&mut self, pa: u64, value: u8) -> Result<()> {
        if pa >= self.config.geometry.capacity() {
            return Err(SimError::AddressOutOfRange {
                pa,
                capacity: self.config.geometry.capacity(),
            });
        }
        self.memory.insert(pa, value);
        if let Some(cells) = self.victims_by_pa.get(&pa) {
            for &i in cells {
                self.flipped[i] = false;
            }
        }
        Ok(())
    }

    /// Snapshot of every byte that differs from the fill pattern.
    pub fn memory_snapshot(&self) -> HashMap<u64, u8> {
        self.memory.clone()
    }
}
