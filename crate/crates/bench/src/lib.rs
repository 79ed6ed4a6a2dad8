//! Benchmark-only crate; see `benches/simulator.rs` for the criterion
//! harness covering the hot paths of the simulator.
