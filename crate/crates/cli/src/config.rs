//! Plain-text experiment configuration.
//!
//! The format is one `key = value` pair per line, `#` starts a comment,
//! and `include = <name-or-path>` splices another file in place. Built-in
//! presets (`t420`, `desk`) resolve by name; anything else is a path
//! relative to the including file. Later assignments override earlier
//! ones, so a run config usually starts from a preset and overrides a few
//! keys:
//!
//! ```text
//! include = desk
//! seed    = 7
//! jitter  = 190
//! ```
//!
//! `template_cell` is the one repeatable key — each occurrence appends a
//! weak cell — and `template = none` clears the list accumulated so far.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use simhammer_core::gadget::FlushMode;
use simhammer_core::{
    AttackConfig, DramAddress, FlipDirection, HammerMode, MappingMode, ScanConfig, SimConfig,
    TemplateCell,
};

/// Full-scale machine model (2.6 GHz clock, 8 GiB of DDR3, 64 ms refresh).
pub const PRESET_T420: &str = include_str!("../presets/t420.conf");
/// Scaled-down model: 1 MiB of DRAM and weak cells that flip after 1000
/// activations, for sub-second experiment runs.
pub const PRESET_DESK: &str = include_str!("../presets/desk.conf");

const MAX_INCLUDE_DEPTH: u32 = 16;

/// Looks a built-in preset up by name.
pub fn builtin_preset(name: &str) -> Option<&'static str> {
    match name {
        "t420" => Some(PRESET_T420),
        "desk" => Some(PRESET_DESK),
        _ => None,
    }
}

#[derive(Debug)]
pub enum ConfigError {
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    /// A line that is not `key = value`.
    Syntax { location: String, message: String },
    BadValue {
        location: String,
        key: String,
        message: String,
    },
    UnknownKey { location: String, key: String },
    IncludeDepth { location: String },
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::Io { path, source } => {
                write!(f, "cannot read {}: {source}", path.display())
            }
            ConfigError::Syntax { location, message } => write!(f, "{location}: {message}"),
            ConfigError::BadValue {
                location,
                key,
                message,
            } => write!(f, "{location}: bad value for `{key}`: {message}"),
            ConfigError::UnknownKey { location, key } => {
                write!(f, "{location}: unknown key `{key}`")
            }
            ConfigError::IncludeDepth { location } => {
                write!(f, "{location}: includes nested deeper than {MAX_INCLUDE_DEPTH}")
            }
        }
    }
}

impl std::error::Error for ConfigError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            ConfigError::Io { source, .. } => Some(source),
            _ => None,
        }
    }
}

/// Everything a run needs: the machine model plus per-experiment knobs.
/// One config and one seed fully determine every output byte.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub sim: SimConfig,
    pub attack: AttackConfig,
    pub fig2_trials: u64,
    /// Padding values (extra cycles per hammer) swept by the flip-boundary
    /// experiment.
    pub fig3a_paddings: Vec<u64>,
    /// Refresh windows of budget per padding value before giving up.
    pub fig3a_window_budget: u64,
    pub fig3b_samples: u64,
    pub fig3b_warmup: u64,
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut raw = RawConfig::default();
        parse_into(
            &mut raw,
            &text,
            &path.display().to_string(),
            path.parent(),
            0,
        )?;
        raw.build()
    }

    /// Parses config text directly; `origin` labels error locations.
    pub fn from_text(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let mut raw = RawConfig::default();
        parse_into(&mut raw, text, origin, None, 0)?;
        raw.build()
    }
}

#[derive(Debug, Clone)]
struct Spanned {
    value: String,
    location: String,
}

#[derive(Debug, Default)]
struct RawConfig {
    scalars: BTreeMap<String, Spanned>,
    cells: Vec<Spanned>,
}

fn parse_into(
    raw: &mut RawConfig,
    text: &str,
    origin: &str,
    dir: Option<&Path>,
    depth: u32,
) -> Result<(), ConfigError> {
    for (i, full_line) in text.lines().enumerate() {
        let line = full_line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let location = format!("{origin}:{}", i + 1);
        let Some((key, value)) = line.split_once('=') else {
            return Err(ConfigError::Syntax {
                location,
                message: format!("expected `key = value`, got {line:?}"),
            });
        };
        let (key, value) = (key.trim(), value.trim());
        if value.is_empty() {
            return Err(ConfigError::Syntax {
                location,
                message: format!("`{key}` has no value"),
            });
        }
        match key {
            "include" => {
                if depth >= MAX_INCLUDE_DEPTH {
                    return Err(ConfigError::IncludeDepth { location });
                }
                if let Some(preset) = builtin_preset(value) {
                    parse_into(raw, preset, &format!("<{value}>"), None, depth + 1)?;
                } else {
                    let path = match dir {
                        Some(d) => d.join(value),
                        None => PathBuf::from(value),
                    };
                    let included =
                        fs::read_to_string(&path).map_err(|source| ConfigError::Io {
                            path: path.clone(),
                            source,
                        })?;
                    parse_into(
                        raw,
                        &included,
                        &path.display().to_string(),
                        path.parent(),
                        depth + 1,
                    )?;
                }
            }
            "template_cell" => raw.cells.push(Spanned {
                value: value.to_string(),
                location,
            }),
            "template" => {
                if value == "none" {
                    raw.cells.clear();
                } else {
                    return Err(ConfigError::BadValue {
                        location,
                        key: key.into(),
                        message: "only `template = none` (clear the cell list) is supported"
                            .into(),
                    });
                }
            }
            _ => {
                raw.scalars.insert(
                    key.to_string(),
                    Spanned {
                        value: value.to_string(),
                        location,
                    },
                );
            }
        }
    }
    Ok(())
}

fn bad(sp: &Spanned, key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::BadValue {
        location: sp.location.clone(),
        key: key.into(),
        message: message.into(),
    }
}

/// Integers accept `_` separators and a `0x` prefix.
fn parse_u64(sp: &Spanned, key: &str) -> Result<u64, ConfigError> {
    let s = sp.value.replace('_', "");
    let parsed = match s.strip_prefix("0x") {
        Some(hex) => u64::from_str_radix(hex, 16),
        None => s.parse(),
    };
    parsed.map_err(|_| bad(sp, key, format!("{:?} is not an integer", sp.value)))
}

fn parse_bool(sp: &Spanned, key: &str) -> Result<bool, ConfigError> {
    match sp.value.as_str() {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(bad(sp, key, format!("{other:?} is not true/false"))),
    }
}

/// Comma-separated integers; `a..b` expands to the inclusive range.
fn parse_u64_list(sp: &Spanned, key: &str) -> Result<Vec<u64>, ConfigError> {
    let mut out = Vec::new();
    for item in sp.value.split(',') {
        let item = item.trim();
        if let Some((a, b)) = item.split_once("..") {
            let single = |s: &str| {
                let sub = Spanned {
                    value: s.trim().to_string(),
                    location: sp.location.clone(),
                };
                parse_u64(&sub, key)
            };
            let (lo, hi) = (single(a)?, single(b)?);
            if lo > hi {
                return Err(bad(sp, key, format!("range {item:?} runs backwards")));
            }
            out.extend(lo..=hi);
        } else {
            let sub = Spanned {
                value: item.to_string(),
                location: sp.location.clone(),
            };
            out.push(parse_u64(&sub, key)?);
        }
    }
    Ok(out)
}

fn parse_template_cell(sp: &Spanned) -> Result<TemplateCell, ConfigError> {
    let key = "template_cell";
    let parts: Vec<&str> = sp.value.split(':').map(str::trim).collect();
    if parts.len() != 9 {
        return Err(bad(
            sp,
            key,
            "expected channel:dimm:rank:bank:row:col:bit:direction:threshold",
        ));
    }
    let num = |s: &str| {
        let sub = Spanned {
            value: s.to_string(),
            location: sp.location.clone(),
        };
        parse_u64(&sub, key)
    };
    let bit = num(parts[6])?;
    if bit > 7 {
        return Err(bad(sp, key, "bit must be 0-7"));
    }
    let direction = FlipDirection::parse(parts[7]).map_err(|e| bad(sp, key, e.to_string()))?;
    let threshold = num(parts[8])?;
    let threshold = u32::try_from(threshold)
        .map_err(|_| bad(sp, key, "threshold does not fit in 32 bits"))?;
    Ok(TemplateCell {
        victim: DramAddress {
            channel: num(parts[0])?,
            dimm: num(parts[1])?,
            rank: num(parts[2])?,
            bank: num(parts[3])?,
            row: num(parts[4])?,
            col: num(parts[5])?,
        },
        bit: bit as u8,
        direction,
        threshold,
    })
}

impl RawConfig {
    fn build(self) -> Result<ExperimentConfig, ConfigError> {
        let mut sim = SimConfig::default();
        // Option = "not set in the file"; geometry-dependent defaults are
        // resolved after the scalar pass.
        let mut scan_start = None;
        let mut scan_len = None;
        let mut scan_iterations = None;
        let mut scan_padding = 0;
        let mut scan_max_pairs = 0;
        let mut train_k = None;
        let mut drain_len = None;
        let mut calibration_trials = 64u32;
        let mut drain_search_max = 4096;
        let mut hammer_budget = None;
        let mut attack_padding = 0;
        let mut flush = FlushMode::Clflush;
        let mut mode = HammerMode::Hybrid;
        let mut fig2_trials = 1000;
        let mut fig3a_paddings = vec![0];
        let mut fig3a_window_budget = None;
        let mut fig3b_samples = 10_000;
        let mut fig3b_warmup = 2;

        for (key, sp) in &self.scalars {
            match key.as_str() {
                "cache_hit" => sim.timing.cache_hit = parse_u64(sp, key)?,
                "rowbuf_hit" => sim.timing.rowbuf_hit = parse_u64(sp, key)?,
                "rowbuf_miss" => sim.timing.rowbuf_miss = parse_u64(sp, key)?,
                "clflush" => sim.timing.clflush_cost = parse_u64(sp, key)?,
                "alu" => sim.timing.alu_op = parse_u64(sp, key)?,
                "syscall" => sim.timing.syscall_cost = parse_u64(sp, key)?,
                "jitter" => sim.timing.jitter_bound = parse_u64(sp, key)?,
                "counter_bits" => {
                    sim.predictor.counter_bits = u8::try_from(parse_u64(sp, key)?)
                        .map_err(|_| bad(sp, key, "counter width does not fit in 8 bits"))?
                }
                "pht_entries" => {
                    sim.predictor.entries = usize::try_from(parse_u64(sp, key)?).unwrap()
                }
                "cache_sets" => sim.cache.sets = usize::try_from(parse_u64(sp, key)?).unwrap(),
                "cache_ways" => sim.cache.ways = usize::try_from(parse_u64(sp, key)?).unwrap(),
                "line_size" => sim.cache.line_size = parse_u64(sp, key)?,
                "backlog_accrual" => sim.backlog_accrual = parse_u64(sp, key)?,
                "fence_drains" => sim.fence_drains = parse_bool(sp, key)?,
                "clock_hz" => sim.clock_hz = parse_u64(sp, key)?,
                "seed" => sim.seed = parse_u64(sp, key)?,
                "channels" => sim.dram.geometry.channels = parse_u64(sp, key)?,
                "dimms" => sim.dram.geometry.dimms_per_channel = parse_u64(sp, key)?,
                "ranks" => sim.dram.geometry.ranks_per_dimm = parse_u64(sp, key)?,
                "banks" => sim.dram.geometry.banks_per_rank = parse_u64(sp, key)?,
                "rows" => sim.dram.geometry.rows_per_bank = parse_u64(sp, key)?,
                "cols" => sim.dram.geometry.cols_per_row = parse_u64(sp, key)?,
                "refresh_interval" => sim.dram.refresh_interval_cycles = parse_u64(sp, key)?,
                "closed_page" => sim.dram.closed_page = parse_bool(sp, key)?,
                "fill_byte" => {
                    sim.dram.fill_byte = u8::try_from(parse_u64(sp, key)?)
                        .map_err(|_| bad(sp, key, "fill byte must be 0-255"))?
                }
                "mapping" => {
                    sim.mapping = match sp.value.as_str() {
                        "identity" => MappingMode::Identity,
                        "randomized" => MappingMode::RandomizedPages,
                        other => {
                            return Err(bad(
                                sp,
                                key,
                                format!("{other:?} is not identity|randomized"),
                            ))
                        }
                    }
                }
                "knows_physical" => sim.knows_physical = parse_bool(sp, key)?,
                "scan_start" => scan_start = Some(parse_u64(sp, key)?),
                "scan_len" => scan_len = Some(parse_u64(sp, key)?),
                "scan_iterations" => scan_iterations = Some(parse_u64(sp, key)?),
                "scan_padding" => scan_padding = parse_u64(sp, key)?,
                "scan_max_pairs" => scan_max_pairs = parse_u64(sp, key)?,
                "train_k" => {
                    if sp.value != "auto" {
                        train_k = Some(
                            u32::try_from(parse_u64(sp, key)?)
                                .map_err(|_| bad(sp, key, "training count too large"))?,
                        );
                    }
                }
                "drain_len" => {
                    if sp.value != "auto" {
                        drain_len = Some(parse_u64(sp, key)?);
                    }
                }
                "calibration_trials" => {
                    calibration_trials = u32::try_from(parse_u64(sp, key)?)
                        .map_err(|_| bad(sp, key, "trial count too large"))?
                }
                "drain_search_max" => drain_search_max = parse_u64(sp, key)?,
                "hammer_budget" => hammer_budget = Some(parse_u64(sp, key)?),
                "attack_padding" => attack_padding = parse_u64(sp, key)?,
                "flush" => {
                    flush = match sp.value.as_str() {
                        "clflush" => FlushMode::Clflush,
                        other => match other.strip_prefix("evict:") {
                            Some(n) => {
                                let sub = Spanned {
                                    value: n.to_string(),
                                    location: sp.location.clone(),
                                };
                                FlushMode::EvictionSet {
                                    size: usize::try_from(parse_u64(&sub, key)?).unwrap(),
                                }
                            }
                            None => {
                                return Err(bad(
                                    sp,
                                    key,
                                    format!("{other:?} is not clflush|evict:<n>"),
                                ))
                            }
                        },
                    }
                }
                "hammer_mode" => {
                    mode = match sp.value.as_str() {
                        "hybrid" => HammerMode::Hybrid,
                        "speculative" => HammerMode::PureSpeculative,
                        other => {
                            return Err(bad(
                                sp,
                                key,
                                format!("{other:?} is not hybrid|speculative"),
                            ))
                        }
                    }
                }
                "fig2_trials" => fig2_trials = parse_u64(sp, key)?,
                "fig3a_paddings" => fig3a_paddings = parse_u64_list(sp, key)?,
                "fig3a_window_budget" => fig3a_window_budget = Some(parse_u64(sp, key)?),
                "fig3b_samples" => fig3b_samples = parse_u64(sp, key)?,
                "fig3b_warmup" => fig3b_warmup = parse_u64(sp, key)?,
                _ => {
                    return Err(ConfigError::UnknownKey {
                        location: sp.location.clone(),
                        key: key.clone(),
                    })
                }
            }
        }

        sim.dram.template.cells = self
            .cells
            .iter()
            .map(parse_template_cell)
            .collect::<Result<_, _>>()?;

        let capacity = sim.dram.geometry.capacity();
        let attack = AttackConfig {
            scan: ScanConfig {
                region_start: scan_start.unwrap_or(0),
                region_len: scan_len.unwrap_or(capacity),
                iterations_per_pair: scan_iterations.unwrap_or(1000),
                padding: scan_padding,
                max_pairs: scan_max_pairs,
            },
            train_k,
            drain_len,
            calibration_trials,
            drain_search_max,
            hammer_budget: hammer_budget.unwrap_or(sim.dram.refresh_interval_cycles * 100),
            padding: attack_padding,
            flush,
            mode,
        };
        // Default experiment budget: the two-hour-equivalent number of
        // refresh windows at the configured clock.
        let two_hours = (7200 * sim.clock_hz).div_ceil(sim.dram.refresh_interval_cycles.max(1));
        Ok(ExperimentConfig {
            sim,
            attack,
            fig2_trials,
            fig3a_paddings,
            fig3a_window_budget: fig3a_window_budget.unwrap_or(two_hours),
            fig3b_samples,
            fig3b_warmup,
        })
    }
}
