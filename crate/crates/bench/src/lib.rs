//! Criterion benchmarks for the solver and selectors; see `benches/`.
