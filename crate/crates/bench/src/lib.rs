//! Benchmark-only crate; the benchmarks live in `benches/hotpaths.rs`.
