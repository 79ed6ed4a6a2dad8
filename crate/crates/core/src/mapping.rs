//! Virtual-to-physical page mapping and the attacker's view of it.
//!
//! The simulator distinguishes the MMU path (`translate`, used internally
//! by every memory access) from the attacker introspection path
//! (`inspect_physical`). Threat-model experiments forbid attack logic from
//! inspecting the page map; an instrumentation counter records every
//! inspection so tests can prove no query happened.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

/// How virtual pages map onto physical ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MappingMode {
    /// Virtual address == physical address.
    Identity,
    /// A seeded random permutation of 4 KiB pages.
    RandomizedPages,
}

pub const PAGE_SIZE: u64 = 4096;

/// The address space the attacker operates in.
#[derive(Debug, Clone)]
pub struct AddressSpace {
    mode: MappingMode,
    knows_physical: bool,
    capacity: u64,
    /// Physical page per virtual page; empty in identity mode.
    forward: Vec<u64>,
    inspect_queries: u64,
}

impl AddressSpace {
    pub fn new(mode: MappingMode, knows_physical: bool, capacity: u64, seed: u64) -> Result<Self> {
        let forward = match mode {
            MappingMode::Identity => Vec::new(),
            MappingMode::RandomizedPages => {
                if !capacity.is_multiple_of(PAGE_SIZE) || capacity == 0 {
                    return Err(SimError::InvalidConfig(format!(
                        "randomized-page mapping needs a capacity that is a multiple of {PAGE_SIZE}"
                    )));
                }
                let n = capacity / PAGE_SIZE;
                let mut pages: Vec<u64> = (0..n).collect();
                // Sub-seed so the page map is independent of jitter draws.
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x70616765_6d617073);
                pages.shuffle(&mut rng);
                pages
            }
        };
        Ok(AddressSpace {
            mode,
            knows_physical,
            capacity,
            forward,
            inspect_queries: 0,
        })
    }

    pub fn mode(&self) -> MappingMode {
        self.mode
    }

    pub fn knows_physical(&self) -> bool {
        self.knows_physical
    }

    /// MMU translation. Not visible to the attacker and therefore not
    /// counted as an inspection.
    pub fn translate(&self, va: u64) -> Result<u64> {
        if va >= self.capacity {
            return Err(SimError::AddressOutOfRange {
                pa: va,
                capacity: self.capacity,
            });
        }
        Ok(match self.mode {
            MappingMode::Identity => va,
            MappingMode::RandomizedPages => {
                self.forward[(va / PAGE_SIZE) as usize] * PAGE_SIZE + va % PAGE_SIZE
            }
        })
    }

    /// Attacker introspection of the page map, as a pagemap-style interface
    /// would provide. Requires physical knowledge; every call is counted.
    pub fn inspect_physical(&mut self, va: u64) -> Result<u64> {
        self.inspect_queries += 1;
        if !self.knows_physical {
            return Err(SimError::Misuse(
                "attack logic queried the page map without physical knowledge".into(),
            ));
        }
        self.translate(va)
    }

    /// Inverse lookup: which virtual address maps onto `pa`. Like
    /// [`inspect_physical`](Self::inspect_physical) this reads the page map,
    /// so it requires physical knowledge and is counted.
    pub fn inspect_va_of(&mut self, pa: u64) -> Result<u64> {
        self.inspect_queries += 1;
        if !self.knows_physical {
            return Err(SimError::Misuse(
                "attack logic queried the page map without physical knowledge".into(),
            ));
        }
        if pa >= self.capacity {
            return Err(SimError::AddressOutOfRange {
                pa,
                capacity: self.capacity,
            });
        }
        Ok(match self.mode {
            MappingMode::Identity => pa,
            MappingMode::RandomizedPages => {
                let phys_page = pa / PAGE_SIZE;
                let virt_page = self
                    .forward
                    .iter()
                    .position(|&p| p == phys_page)
                    .expect("forward map is a permutation") as u64;
                virt_page * PAGE_SIZE + pa % PAGE_SIZE
            }
        })
    }

    /// Number of `inspect_physical` calls so far (including rejected ones).
    pub fn inspect_queries(&self) -> u64 {
        self.inspect_queries
    }
}
