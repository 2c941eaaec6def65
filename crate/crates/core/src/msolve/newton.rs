use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{norm2, Real};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NewtonSettings {
    /// Re-assemble the Jacobian when `‖r_{j+1}‖/‖r_j‖` exceeds this.
    pub rho_max: f64,
    pub tol_rel: f64,
    pub tol_abs: f64,
    pub max_iter: usize,
    /// Number of halvings tried in the line search.
    pub backtrack_depth: usize,
    /// Assemble a fresh Jacobian in every iteration.
    pub always_reassemble: bool,
}

impl Default for NewtonSettings {
    fn default() -> Self {
        Self {
            rho_max: 0.1,
            tol_rel: 1e-8,
            tol_abs: 1e-12,
            max_iter: 20,
            backtrack_depth: 5,
            always_reassemble: false,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct NewtonStats {
    pub iterations: usize,
    pub residuals: Vec<f64>,
    pub jacobian_assemblies: usize,
    pub linear_iterations: usize,
}

/// A nonlinear system `r(x) = b − A(x) = 0` with a (possibly stale)
/// Jacobian and a linear solver for `J δ = r`.
pub trait NonlinearProblem<T> {
    fn residual(&mut self, x: &[T]) -> Result<Vec<T>>;
    fn has_jacobian(&self) -> bool;
    fn assemble_jacobian(&mut self, x: &[T]) -> Result<()>;
    /// Returns `δ` and the number of linear iterations.
    fn solve_linear(&mut self, r: &[T]) -> Result<(Vec<T>, usize)>;
}

/// Damped Newton iteration with Jacobian reuse.
pub fn newton_solve<T: Real>(
    problem: &mut impl NonlinearProblem<T>,
    x: &mut [T],
    settings: &NewtonSettings,
    step: Option<usize>,
) -> Result<NewtonStats> {
    let mut stats = NewtonStats::default();
    let mut r = problem.residual(x)?;
    let mut rn = norm2(&r).f64();
    stats.residuals.push(rn);
    let target = (settings.tol_rel * rn).max(settings.tol_abs);
    if !rn.is_finite() {
        return Err(Error::Nonconvergence {
            step,
            iterations: 0,
            history: stats.residuals,
        });
    }
    let mut fresh = false;
    while rn > target {
        if stats.iterations >= settings.max_iter {
            return Err(Error::Nonconvergence {
                step,
                iterations: stats.iterations,
                history: stats.residuals,
            });
        }
        if !problem.has_jacobian() || settings.always_reassemble {
            problem.assemble_jacobian(x)?;
            stats.jacobian_assemblies += 1;
            fresh = true;
        }
        let (dx, lin) = problem.solve_linear(&r)?;
        stats.linear_iterations += lin;
        let mut eps = T::one();
        let mut accepted = None;
        let mut last = None;
        for _ in 0..=settings.backtrack_depth {
            let trial: Vec<T> = x.iter().zip(&dx).map(|(&xi, &di)| xi + eps * di).collect();
            let rt = problem.residual(&trial)?;
            let nt = norm2(&rt).f64();
            if nt < rn {
                accepted = Some((trial, rt, nt));
                break;
            }
            last = Some((trial, rt, nt));
            eps *= T::c(0.5);
        }
        let (trial, rt, nt) = match accepted {
            Some(a) => a,
            None if !fresh => {
                // stale Jacobian gave no descent: refresh and retry
                problem.assemble_jacobian(x)?;
                stats.jacobian_assemblies += 1;
                fresh = true;
                continue;
            }
            None => last.unwrap(),
        };
        x.copy_from_slice(&trial);
        stats.iterations += 1;
        let rho = nt / rn;
        r = rt;
        rn = nt;
        stats.residuals.push(rn);
        if !rn.is_finite() {
            return Err(Error::Nonconvergence {
                step,
                iterations: stats.iterations,
                history: stats.residuals,
            });
        }
        fresh = false;
        if rho > settings.rho_max && rn > target {
            problem.assemble_jacobian(x)?;
            stats.jacobian_assemblies += 1;
            fresh = true;
        }
    }
    Ok(stats)
}
