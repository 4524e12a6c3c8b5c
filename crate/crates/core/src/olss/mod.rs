//! Least-squares skip estimation, step-path search and the trained scheduler.

mod design;
mod residual;
mod scheduler;
mod search;

pub use design::{
    coefficient_residual, ddim_coefficients, naive_skip_estimate, solve_step_weights, stack_basis, stack_design,
    stack_outputs, stack_states, NaiveEstimate, StepFit,
};
pub use residual::{ResidualFn, TrajectoryResidual};
pub use scheduler::{train, train_detailed, OlssScheduler, TrainMode, TrainOutcome, WeightMatrix};
pub use search::{
    find_next_step, find_next_step_above, find_next_step_exhaustive, find_path, find_path_with,
    monotonicity_violations, optimize_path, optimize_path_with, path_residuals, OptimizedPath, SearchStrategy,
    Tolerance,
};
