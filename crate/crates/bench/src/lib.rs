//! Criterion benchmarks for the tracking hot paths live in `benches/`;
//! this crate intentionally exports nothing.
