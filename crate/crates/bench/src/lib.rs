//! Criterion benchmarks for the hot loops of `predlab`; see `benches/`.
