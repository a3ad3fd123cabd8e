//! Benchmarks for the roofseg kernels and scheduler; see `benches/`.
