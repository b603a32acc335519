//! Benchmarks live in `benches/`; run with `cargo bench -p motion-energy-bench`.
