//! Error type shared by every simulator module.

use std::fmt;

/// Errors surfaced by simulator operations.
///
/// Misuse of an operation (violating a documented precondition) is reported
/// as an error rather than silently producing nonsense.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SimError {
    /// A physical address fell outside the configured DRAM capacity.
    AddressOutOfRange { pa: u64, capacity: u64 },
    /// A DRAM coordinate (rank/bank/row/...) fell outside the geometry.
    BadDramAddress(String),
    /// A configuration value violates a structural invariant.
    InvalidConfig(String),
    /// An eviction set of the requested size cannot exist for this cache.
    InsufficientEvictionSet { requested: usize, ways: usize },
    /// An operation was invoked in a state its contract forbids.
    Misuse(String),
    /// A calibration search exhausted its budget without converging.
    CalibrationFailure(String),
}

impl fmt::Display for SimError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SimError::AddressOutOfRange { pa, capacity } => {
                write!(f, "physical address {pa:#x} outside capacity {capacity:#x}")
            }
            SimError::BadDramAddress(msg) => write!(f, "bad DRAM address: {msg}"),
            SimError::InvalidConfig(msg) => write!(f, "invalid configuration: {msg}"),
            SimError::InsufficientEvictionSet { requested, ways } => write!(
                f,
                "eviction set of {requested} lines cannot evict a {ways}-way set"
            ),
            SimError::Misuse(msg) => write!(f, "operation misuse: {msg}"),
            SimError::CalibrationFailure(msg) => write!(f, "calibration failed: {msg}"),
        }
    }
}

impl std::error::Error for SimError {}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, SimError>;
