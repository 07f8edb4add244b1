//! Structure-preserving finite-difference solver and certificate engine for
//! a coupled incompressible-flow / phase-field / heat system.
//!
//! The library is organized around four jobs:
//! - `grid` + `solver`: a cell-centered scheme whose difference operators
//!   satisfy exact summation-by-parts identities, so the semi-implicit
//!   splitting conserves phase mass to round-off and dissipates a discrete
//!   energy up to O(dt) with certified sign structure;
//! - `ledger`: per-step energy/entropy bookkeeping and the pass/fail
//!   certificates built from it;
//! - `relenergy`: a relative-energy (weak-strong) verifier that checks a
//!   Gronwall inequality between two trajectories;
//! - `generic`: dense assembly of the reversible/irreversible bracket pair on
//!   small grids with degeneracy and sign checks;
//! - `thermo`: caloric closures shared by all of the above plus a
//!   property-lemma suite for the scalar inequalities the estimates rest on.

pub mod config;
pub mod generic;
pub mod grid;
pub mod ledger;
pub mod relenergy;
pub mod rng;
pub mod solver;
pub mod thermo;

/// Unified error type. Solver failures (no convergence, positivity loss) are
/// kept distinct from configuration problems so the CLI can map them to
/// different exit codes.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{context}: no convergence after {iters} iterations (relative residual {relres:.3e})")]
    NoConvergence {
        context: &'static str,
        relres: f64,
        iters: usize,
    },
    #[error("Neumann problem has incompatible right-hand side (mean {mean:.3e})")]
    IncompatibleRhs { mean: f64 },
    #[error("temperature positivity lost at step {step} (min theta {min_theta:.3e})")]
    PositivityLoss { min_theta: f64, step: usize },
    #[error("grids are not compatible (extent or refinement ratio mismatch)")]
    GridMismatch,
    #[error("trajectories are not time-aligned")]
    TimeMismatch,
    #[error("dense bracket assembly refused for {nx}x{ny} (limit 16x16)")]
    BudgetExceeded { nx: usize, ny: usize },
    #[error("configuration: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}
