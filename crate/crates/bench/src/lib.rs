//! Criterion benchmarks for parse-dfl; see `benches/`.
