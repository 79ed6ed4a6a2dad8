//! Deterministic, cycle-approximate simulator of speculative hammering:
//! DRAM disturbance (rowhammer) driven through transient out-of-bounds
//! loads instead of architectural accesses.
//!
//! The crate is organized around a single [`Simulator`] that owns a virtual
//! clock together with the DRAM, cache, and speculation state machines:
//!
//! * [`dram`] — banks, row buffers, per-row activation counters within a
//!   refresh window, and a flip template that decides which cells are
//!   physically weak.
//! * [`cache`] — a set-associative LRU cache providing the timing channel
//!   (hit vs. DRAM latency) and `clflush`/eviction-set control.
//! * [`cpu`] — pattern history table of k-bit saturating counters, the
//!   speculation-window model (base window minus unresolved backlog), and a
//!   mispredict performance counter.
//! * [`gadget`] — the bounds-check victim function, the verified speculative
//!   access round, and the training/drain calibrations.
//! * [`attack`] — template scanning, hybrid speculative+direct hammering,
//!   one-location hammering, and the end-to-end pipeline.
//!
//! Everything is single-threaded per instance and fully seeded: the same
//! configuration and seed reproduce the same event stream bit for bit.

pub mod attack;
pub mod cache;
pub mod cpu;
pub mod dram;
pub mod error;
pub mod gadget;
pub mod mapping;
pub mod sim;
pub mod timing;

pub use attack::{
    AttackConfig, AttackOutcome, DirectHammerOutcome, FlipReport, HammerMode, HammerOutcome,
    HammerPair, ObservedFlip, ScanConfig, ScanHit, ScanOutcome,
};
pub use cache::{CacheConfig, CacheState};
pub use cpu::{Outcome, PmcReading, PmcState, PredictorConfig, PredictorState, SpeculationContext};
pub use dram::{
    DramAddress, DramConfig, DramGeometry, FlipDirection, FlipEvent, FlipTemplate, TemplateCell,
};
pub use error::SimError;
pub use gadget::{
    CalibrationResult, DrainMode, FlushMode, RoundConfig, RoundResult, VictimLayout,
    PROBE_THRESHOLD,
};
pub use mapping::{AddressSpace, MappingMode};
pub use sim::{SimConfig, Simulator};
pub use timing::TimingModel;

/// Virtual CPU cycles. All simulator time is expressed in these units.
pub type Cycles = u64;
