//! Pursuit-evasion games with many pursuers, solved by target decomposition.
//!
//! The capture set of an `m`-pursuer game is the union of per-pursuer
//! capture sets. Each per-pursuer game is solved on a low-dimensional grid
//! and the value of the full game is recovered as the pointwise minimum of
//! the sub-values, whenever the Hamiltonian satisfies a convexity condition
//! along the active gradients (checked numerically by [`decomp`]).
//!
//! Module map:
//!
//! - [`fields`]: coefficient fields from a small expression language
//! - [`model`]: game specification, dynamics, pursuer-advantage check
//! - [`grid`]: tensor grids, value fields, interpolation and dumps
//! - [`solver`]: Hamiltonian and semi-Lagrangian value iteration
//! - [`decomp`]: sub-games, lower envelope, convexity-condition checker
//! - [`strategy`]: state-feedback controls from value gradients
//! - [`sim`]: closed-loop simulation and capture times

pub mod decomp;
pub mod fields;
pub mod grid;
pub mod model;
pub mod sampling;
pub mod sim;
pub mod solver;
pub mod strategy;

pub use decomp::{
    check_condition_c, decompose, envelope, solve_decomposed, ConditionCReport, DecomposedSolution,
    EnvelopeValue, SubProblem,
};
pub use fields::{ScalarField, parse_field, eval_field};
pub use grid::{Axis, TensorGrid, ValueField};
pub use model::{ControlPair, CoordinateMode, GameDefinition, GameSpec, TargetSelect};
pub use sampling::StateBox;
pub use solver::{solve_hji, solve_within_budget, SolveParams, SolveReport, Solved};
pub use sim::{simulate, SimParams, Termination, Trajectory};
pub use strategy::{FeedbackStrategy, ValueSource};
