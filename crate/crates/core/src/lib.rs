//! Joint magnetometer and gyroscope calibration.
//!
//! The estimate (soft-iron, hard-iron, gyroscope bias) comes from a single
//! variable node with two unary factors per averaged sample, solved in batch
//! ([`solver::optimize_batch`]) or incrementally
//! ([`solver::optimize_incremental`]). See the guide in `book/` for the
//! model and a walk-through.

pub mod bench_ellipsoid;
pub mod calmodel;
pub mod cli;
pub mod error;
pub mod eval;
pub mod io;
pub mod preprocess;
pub mod sim;
pub mod solver;

// Compiles and runs every code block of the guide as a doctest.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/preprocessing.md")]
    mod preprocessing {}
    #[doc = include_str!("../../../book/src/solver.md")]
    mod solver {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/ellipsoid.md")]
    mod ellipsoid {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
