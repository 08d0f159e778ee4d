//! Small semidefinite programming layer for problems over Hermitian PSD
//! blocks and nonnegative scalars.
//!
//! Problems are assembled with [`ConicProblem`] and solved by the
//! interior-point method in [`solver`]. Coefficients that are rank one
//! (`c · v vᴴ`) stay factored all the way into the Schur complement.

pub mod embed;
pub mod problem;
pub mod solver;

pub use problem::{
    BlockId, BlockTerm, BlockVar, ConicProblem, ConicValues, Constraint, HermitianTerm,
    LinearExpr, ScalarId, ScalarVar, Sense,
};
pub use solver::{solve, solve_with, ConicSolution, SolveStatus, SolverSettings, SolverStats};

#[derive(Debug, thiserror::Error)]
pub enum ConicError {
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}
