//! Benchmark-only crate; see `benches/protection.rs`.
