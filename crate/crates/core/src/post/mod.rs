//! Post-processing: obstacle forces, error norms, lift spectrum and
//! summary statistics.

mod functionals;
mod series;

pub use functionals::{coefficients, drag_lift, obstacle_force, surface_force, ForceTerms};
pub use series::{
    block_norms, lift_spectrum, relative_errors, summarize, summarize_window, time_integrated_error,
    FunctionalSeries, Summary,
};
