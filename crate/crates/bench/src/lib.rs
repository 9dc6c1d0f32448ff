//! Criterion benchmarks for the solver live in `benches/solver.rs`:
//! a 1D solve, one 2D sweep with and without cached stencils, envelope
//! evaluation and 4D interpolation.
//!
//! Run with `cargo bench -p pe-decomp-bench`.
