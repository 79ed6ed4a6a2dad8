//! Set-associative LRU cache state.
//!
//! The cache provides the timing channel: a hit resolves in
//! `cache_hit` cycles while a miss is served at DRAM latency. Composition
//! with DRAM (fill latency, activations) happens in [`crate::sim`]; this
//! module keeps the pure lookup/install/flush state machine so it can be
//! checked against a reference model in isolation.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

/// Cache shape. Replacement is always LRU.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheConfig {
    pub sets: usize,
    pub ways: usize,
    pub line_size: u64,
}

impl Default for CacheConfig {
    fn default() -> Self {
        CacheConfig {
            sets: 512,
            ways: 8,
            line_size: 64,
        }
    }
}

impl CacheConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sets == 0 || self.ways == 0 {
            return Err(SimError::InvalidConfig(
                "cache sets and ways must be >= 1".into(),
            ));
        }
        if !self.line_size.is_power_of_two() {
            return Err(SimError::InvalidConfig(
                "cache line size must be a power of two".into(),
            ));
        }
        Ok(())
    }

    /// Line number containing `pa`.
    pub fn line_of(&self, pa: u64) -> u64 {
        pa / self.line_size
    }

    /// Set index `pa` maps to.
    pub fn set_index(&self, pa: u64) -> usize {
        (self.line_of(pa) % self.sets as u64) as usize
    }
}

/// Tag state of every set, most recently used first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CacheState {
    config: CacheConfig,
    /// Per set: resident line numbers in MRU -> LRU order.
    sets: Vec<Vec<u64>>,
}

impl CacheState {
    pub fn new(config: CacheConfig) -> Result<Self> {
        config.validate()?;
        Ok(CacheState {
            sets: vec![Vec::with_capacity(config.ways); config.sets],
            config,
        })
    }

    pub fn config(&self) -> &CacheConfig {
        &self.config
    }

    /// True when the line holding `pa` is resident.
    pub fn contains(&self, pa: u64) -> bool {
        let line = self.config.line_of(pa);
        self.sets[self.config.set_index(pa)].contains(&line)
    }

    /// Looks up `pa`; on a hit the line moves to MRU position.
    pub fn lookup(&mut self, pa: u64) -> bool {
        let line = self.config.line_of(pa);
        let set = &mut self.sets[self.config.set_index(pa)];
        if let Some(pos) = set.iter().position(|&l| l == line) {
            let l = set.remove(pos);
            set.insert(0, l);
            true
        } else {
            false
        }
    }

    /// Installs the line holding `pa` at MRU position, evicting the LRU
    /// line if the set is full. Returns the evicted line number, if any.
    pub fn install(&mut self, pa: u64) -> Option<u64> {
        let line = self.config.line_of(pa);
        let set = &mut self.sets[self.config.set_index(pa)];
        debug_assert!(!set.contains(&line), "install of a resident line");
        let evicted = if set.len() == self.config.ways {
            set.pop()
        } else {
            None
        };
        set.insert(0, line);
        evicted
    }

    /// Removes the line holding `pa` if resident. Idempotent.
    pub fn flush(&mut self, pa: u64) -> bool {
        let line = self.config.line_of(pa);
        let set = &mut self.sets[self.config.set_index(pa)];
        if let Some(pos) = set.iter().position(|&l| l == line) {
            set.remove(pos);
            true
        } else {
            false
        }
    }

    /// Number of resident lines in the set `pa` maps to.
    pub fn set_occupancy(&self, pa: u64) -> usize {
        self.sets[self.config.set_index(pa)].len()
    }

    /// Builds a flush-free eviction set for `target`: `size` distinct
    /// addresses, none sharing the target's line, all congruent with it
    /// (same set index), and all within `capacity`.
    ///
    /// Accessing all of them forces the target's line out of its set, which
    /// requires at least `ways` addresses.
    pub fn build_eviction_set(&self, target: u64, size: usize, capacity: u64) -> Result<Vec<u64>> {
        if size < self.config.ways {
            return Err(SimError::InsufficientEvictionSet {
                requested: size,
                ways: self.config.ways,
            });
        }
        let stride = self.config.line_size * self.config.sets as u64;
        if capacity < stride * (size as u64 + 1) {
            return Err(SimError::InvalidConfig(format!(
                "capacity {capacity:#x} too small for an eviction set of {size} lines"
            )));
        }
        let target_line_base = self.config.line_of(target) * self.config.line_size;
        let mut out = Vec::with_capacity(size);
        let mut candidate = target_line_base;
        while out.len() < size {
            candidate = (candidate + stride) % (capacity - capacity % stride);
            if self.config.line_of(candidate) != self.config.line_of(target) {
                out.push(candidate);
            }
        }
        Ok(out)
    }
}
