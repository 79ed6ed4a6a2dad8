//! Experiment harness for the speculative-hammering simulator: plain-text
//! configuration with presets, and the figure/attack commands behind the
//! `simhammer` binary.

pub mod config;
pub mod experiments;
