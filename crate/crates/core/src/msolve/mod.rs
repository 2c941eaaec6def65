//! Newton–Krylov–multigrid solvers.

mod gmres;
mod lu;
mod multigrid;
mod newton;
mod ns;
mod vanka;

pub use gmres::{gmres, GmresSettings, GmresStats};
pub use lu::DenseLu;
pub use multigrid::{MgLevel, MgSettings, Multigrid};
pub use newton::{newton_solve, NewtonSettings, NewtonStats, NonlinearProblem};
pub use ns::{NsLevelSolver, SolverSettings, StepStats};
pub use vanka::Vanka;

#[cfg(test)]
mod tests;
