use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::gmres::{gmres, GmresSettings};
use super::multigrid::{MgSettings, Multigrid};
use super::newton::{newton_solve, NewtonSettings, NewtonStats, NonlinearProblem};
use crate::assembly::{FlowParams, NsAssembler};
use crate::error::{Error, Result};
use crate::mesh::MeshHierarchy;
use crate::scalar::Real;
use crate::space::{FeSpace, Prolongation};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSettings {
    pub newton: NewtonSettings,
    pub gmres: GmresSettings,
    pub mg: MgSettings,
    /// Evaluate the stabilization parameters once per solve, at the initial
    /// guess, so that the Jacobian is exact. By default they follow the
    /// Newton iterate and their derivative is left out of the Jacobian.
    pub freeze_stabilization: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepStats {
    pub newton: NewtonStats,
    pub seconds: f64,
}

/// Navier–Stokes solver on level `top` of a hierarchy, preconditioned by
/// multigrid over levels `0..=top`. The Jacobian persists between calls.
pub struct NsLevelSolver<T> {
    pub assemblers: Vec<NsAssembler<T>>,
    pub transfers: Vec<Prolongation<T>>,
    pub settings: SolverSettings,
    rhs: Vec<T>,
    mg: Option<Multigrid<T>>,
    frozen_stab: Option<Vec<[T; 2]>>,
    anchor: Option<Vec<T>>,
}

impl<T: Real> NsLevelSolver<T> {
    pub fn new(
        h: &MeshHierarchy<T>,
        top: usize,
        params: FlowParams<T>,
        quad_order: usize,
        settings: SolverSettings,
    ) -> Result<Self> {
        if top >= h.n_levels() {
            return Err(Error::InvalidInput(format!(
                "level {top} requested, hierarchy has {}",
                h.n_levels()
            )));
        }
        let assemblers: Vec<NsAssembler<T>> = (0..=top)
            .map(|l| NsAssembler::new(FeSpace::new(h.level(l), l, quad_order), params))
            .collect();
        let transfers = (0..top).map(|l| Prolongation::new(h, l)).collect();
        let n = assemblers[top].n_dofs();
        Ok(Self {
            assemblers,
            transfers,
            settings,
            rhs: vec![T::zero(); n],
            mg: None,
            frozen_stab: None,
            anchor: None,
        })
    }

    pub fn top(&self) -> &NsAssembler<T> {
        self.assemblers.last().unwrap()
    }

    pub fn space(&self) -> &FeSpace<T> {
        &self.top().space
    }

    pub fn n_dofs(&self) -> usize {
        self.top().n_dofs()
    }

    pub fn rhs(&self) -> &[T] {
        &self.rhs
    }

    pub fn set_rhs(&mut self, b: Vec<T>) -> Result<()> {
        if b.len() != self.n_dofs() {
            return Err(Error::DimensionMismatch {
                context: "solver right-hand side",
                expected: self.n_dofs(),
                got: b.len(),
            });
        }
        self.rhs = b;
        Ok(())
    }

    pub fn invalidate_jacobian(&mut self) {
        self.mg = None;
        self.anchor = None;
    }

    /// State at which the current Jacobian was assembled.
    pub fn jacobian_anchor(&self) -> Option<&[T]> {
        self.anchor.as_deref()
    }

    /// Re-assembles the Jacobian at a stored anchor state.
    pub fn restore_anchor(&mut self, anchor: Option<Vec<T>>) -> Result<()> {
        match anchor {
            Some(a) => self.assemble_jacobian(&a),
            None => {
                self.invalidate_jacobian();
                Ok(())
            }
        }
    }

    pub fn multigrid(&self) -> Option<&Multigrid<T>> {
        self.mg.as_ref()
    }

    /// Solves `A(x) = b` for the stored right-hand side, starting at `x`.
    pub fn solve(&mut self, x: &mut [T], step: Option<usize>) -> Result<StepStats> {
        let t0 = Instant::now();
        let settings = self.settings.newton;
        self.frozen_stab = self.settings.freeze_stabilization.then(|| self.top().cell_stab(x));
        let newton = newton_solve(self, x, &settings, step)?;
        self.space().normalize_pressure(x);
        Ok(StepStats {
            newton,
            seconds: t0.elapsed().as_secs_f64(),
        })
    }
}

impl<T: Real> NonlinearProblem<T> for NsLevelSolver<T> {
    fn residual(&mut self, x: &[T]) -> Result<Vec<T>> {
        match &self.frozen_stab {
            Some(stab) => self.top().residual_with(x, &self.rhs, stab),
            None => self.top().residual(x, &self.rhs),
        }
    }

    fn has_jacobian(&self) -> bool {
        self.mg.is_some()
    }

    fn assemble_jacobian(&mut self, x: &[T]) -> Result<()> {
        let top = self.assemblers.len() - 1;
        let mats = self
            .assemblers
            .iter()
            .enumerate()
            .map(|(l, a)| {
                // nested node numbering: the coarse state is a prefix
                let xl = &x[..a.n_dofs()];
                let m = match (&self.frozen_stab, l == top) {
                    (Some(stab), true) => a.jacobian_with(xl, stab),
                    _ => a.jacobian(xl),
                };
                (m, a.mask.clone())
            })
            .collect();
        let floating = self.space().pressure_floating;
        self.mg = Some(Multigrid::new(
            mats,
            self.transfers.clone(),
            self.settings.mg,
            floating,
        ));
        self.anchor = Some(x.to_vec());
        Ok(())
    }

    fn solve_linear(&mut self, r: &[T]) -> Result<(Vec<T>, usize)> {
        let mg = self.mg.as_ref().expect("Jacobian assembled");
        let top = mg.top();
        let jac = &mg.levels[top].matrix;
        let mut dx = vec![T::zero(); r.len()];
        let st = gmres(|v| jac.apply(v), |v| mg.apply(v), r, &mut dx, &self.settings.gmres)?;
        self.space().normalize_pressure(&mut dx);
        Ok((dx, st.iterations))
    }
}
