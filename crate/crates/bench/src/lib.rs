//! Criterion benchmarks for `decoy-core`; see `benches/`.
