//! Criterion benchmarks for the wnorm derivative kernels; see `benches/`.
