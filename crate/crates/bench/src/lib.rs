//! Criterion benchmarks for the hot kernels in `fgdata-core`; see `benches/`.
