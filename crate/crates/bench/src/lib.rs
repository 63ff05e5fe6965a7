//! Criterion benchmarks for the numeric kernels and fault injectors; see
//! `benches/`.
