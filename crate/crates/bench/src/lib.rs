//! Benchmark-only crate; see `benches/purifiers.rs`.
