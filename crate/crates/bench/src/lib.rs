//! Criterion benchmarks for the skewlab kernels live under `benches/`.
