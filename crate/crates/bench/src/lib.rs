//! Criterion benchmarks for `mdmfed-core`; see `benches/`.
