//! Time stepping: pure multigrid on one level and the hybrid scheme with a
//! patch-network correction on level `L+J`.

mod run;

pub use run::{
    build_hierarchy, compare_runs, export_training_data, flow_params, inflow_profile, recompute_functionals, run_simulation,
    train_from_config, CompareReport, ExportReport,
    RunOptions, RunSummary,
};

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::assembly::{FlowParams, NsAssembler};
use crate::error::{Error, Result};
use crate::io::{Checkpoint, WarmStart};
use crate::mesh::MeshHierarchy;
use crate::msolve::{NsLevelSolver, SolverSettings, StepStats};
use crate::net::Mlp;
use crate::patch_ops::PatchSet;
use crate::post::{obstacle_force, ForceTerms};
use crate::scalar::Real;
use crate::space::{BoundaryData, FeSpace, InflowProfile, TransferChain};

/// Accumulated wall time per phase, in seconds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub steps: usize,
    pub coarse_solve: f64,
    pub prolongation: f64,
    pub residual: f64,
    /// Network correction, including the input assembly.
    pub network: f64,
    pub rhs: f64,
    pub functionals: f64,
    pub total: f64,
}

impl Timings {
    pub fn per_step(&self) -> f64 {
        self.total / self.steps.max(1) as f64
    }
}

/// Data of one completed step.
#[derive(Clone, Debug, Default)]
pub struct StepReport {
    pub step: usize,
    pub time: f64,
    pub solver: StepStats,
    /// Force on the obstacles, if the mesh has any.
    pub force: Option<[f64; 3]>,
}

/// Fine-level bookkeeping of the hybrid scheme.
pub struct FineStage<T> {
    pub assembler: NsAssembler<T>,
    pub chain: TransferChain<T>,
    pub patches: PatchSet<T>,
    /// `None` runs the scheme with a zero correction.
    pub model: Option<Mlp<T>>,
    /// Fine right-hand side for the coming step.
    pub b_fine: Vec<T>,
    /// Prolongated coarse state `x̃` of the last step.
    pub x_tilde: Vec<T>,
    /// Fine residual of the last step.
    pub residual: Vec<T>,
    /// Corrected state `x̃ + d` of the last step.
    pub x_corr: Vec<T>,
}

pub struct TimeLoop<T> {
    pub step: usize,
    pub k: f64,
    pub solver: NsLevelSolver<T>,
    /// Solution on the solver level.
    pub x: Vec<T>,
    pub inflow: InflowProfile,
    pub fine: Option<FineStage<T>>,
    pub warm_start: WarmStart,
    /// Output state of the previous step, for the time derivative in the
    /// force evaluation.
    prev_out: Vec<T>,
    has_obstacle: bool,
    pub timings: Timings,
    pub network_evaluations: usize,
}

impl<T: Real> TimeLoop<T> {
    /// Pure multigrid on `level`.
    pub fn new_mg(
        h: &MeshHierarchy<T>,
        level: usize,
        params: FlowParams<T>,
        quad_order: usize,
        settings: SolverSettings,
        inflow: InflowProfile,
    ) -> Result<Self> {
        let solver = NsLevelSolver::new(h, level, params, quad_order, settings)?;
        let mut x = vec![T::zero(); solver.n_dofs()];
        solver.space().apply_dirichlet(&mut x, &inflow, T::zero());
        let b = solver.top().rhs(&x, None, None)?;
        let mut s = Self::assemble(solver, x, inflow, None, h);
        s.solver.set_rhs(b)?;
        Ok(s)
    }

    /// Hybrid scheme: coarse solve on `coarse`, correction on `coarse + j`.
    #[allow(clippy::too_many_arguments)]
    pub fn new_dnnmg(
        h: &MeshHierarchy<T>,
        coarse: usize,
        j: usize,
        params: FlowParams<T>,
        quad_order: usize,
        settings: SolverSettings,
        inflow: InflowProfile,
        model: Option<Mlp<T>>,
    ) -> Result<Self> {
        if j == 0 {
            return Err(Error::InvalidInput("the hybrid scheme needs at least one predicted level".into()));
        }
        let solver = NsLevelSolver::new(h, coarse, params, quad_order, settings)?;
        let patches = PatchSet::new(h, coarse, j)?;
        if let Some(m) = &model {
            patches.check_model(m)?;
        }
        let assembler = NsAssembler::new(FeSpace::new(h.level(coarse + j), coarse + j, quad_order), params);
        let chain = TransferChain::new(h, coarse, coarse + j);
        let b = h.dim + 1;
        let mut x = vec![T::zero(); solver.n_dofs()];
        solver.space().apply_dirichlet(&mut x, &inflow, T::zero());
        let mut x_corr = chain.prolongate(&x, b);
        assembler.space.apply_dirichlet(&mut x_corr, &inflow, T::zero());
        let b_fine = assembler.rhs(&x_corr, None, None)?;
        let b_coarse = chain.restrict(&b_fine, b);
        let n_fine = assembler.n_dofs();
        let fine = FineStage {
            assembler,
            chain,
            patches,
            model,
            b_fine,
            x_tilde: x_corr.clone(),
            residual: vec![T::zero(); n_fine],
            x_corr,
        };
        let mut s = Self::assemble(solver, x, inflow, Some(fine), h);
        s.solver.set_rhs(b_coarse)?;
        Ok(s)
    }

    fn assemble(solver: NsLevelSolver<T>, x: Vec<T>, inflow: InflowProfile, fine: Option<FineStage<T>>, h: &MeshHierarchy<T>) -> Self {
        let k = solver.top().params.k.f64();
        let mut s = Self {
            step: 0,
            k,
            solver,
            x,
            inflow,
            fine,
            warm_start: WarmStart::Previous,
            prev_out: Vec::new(),
            has_obstacle: !h.obstacles.is_empty(),
            timings: Timings::default(),
            network_evaluations: 0,
        };
        s.prev_out = s.output_state().to_vec();
        s
    }

    pub fn time(&self) -> f64 {
        self.step as f64 * self.k
    }

    /// Solution used for output and functionals: the corrected fine state
    /// in the hybrid scheme, the level solution otherwise.
    pub fn output_state(&self) -> &[T] {
        match &self.fine {
            Some(f) => &f.x_corr,
            None => &self.x,
        }
    }

    pub fn output_space(&self) -> &FeSpace<T> {
        match &self.fine {
            Some(f) => &f.assembler.space,
            None => self.solver.space(),
        }
    }

    pub fn output_level(&self) -> usize {
        self.output_space().level
    }

    pub fn nu(&self) -> T {
        self.solver.top().params.nu
    }

    /// Advances one time step.
    pub fn advance(&mut self) -> Result<StepReport> {
        let t_start = Instant::now();
        let n = self.step + 1;
        let t_next = T::c(n as f64 * self.k);
        let b = self.solver.space().dim + 1;

        if self.warm_start == WarmStart::Corrected {
            if let Some(f) = &self.fine {
                self.x = f.x_corr[..self.x.len()].to_vec();
            }
        }
        let t0 = Instant::now();
        self.solver.space().apply_dirichlet(&mut self.x, &self.inflow, t_next);
        let stats = self.solver.solve(&mut self.x, Some(n))?;
        self.timings.coarse_solve += t0.elapsed().as_secs_f64();

        match self.fine.as_mut() {
            None => {
                let t0 = Instant::now();
                let rhs = self.solver.top().rhs(&self.x, None, None)?;
                self.solver.set_rhs(rhs)?;
                self.timings.rhs += t0.elapsed().as_secs_f64();
            }
            Some(f) => {
                let t0 = Instant::now();
                let mut xt = f.chain.prolongate(&self.x, b);
                f.assembler.space.apply_dirichlet(&mut xt, &self.inflow, t_next);
                self.timings.prolongation += t0.elapsed().as_secs_f64();

                let t0 = Instant::now();
                let r = f.assembler.residual(&xt, &f.b_fine)?;
                self.timings.residual += t0.elapsed().as_secs_f64();

                let t0 = Instant::now();
                let mut x_corr = xt.clone();
                if let Some(model) = &f.model {
                    let mut d = f.patches.predict_correction(model, &xt, &r)?;
                    f.assembler.space.zero_dirichlet(&mut d, &f.assembler.mask);
                    for (xc, di) in x_corr.iter_mut().zip(&d) {
                        *xc += *di;
                    }
                    self.network_evaluations += 1;
                }
                self.timings.network += t0.elapsed().as_secs_f64();

                let t0 = Instant::now();
                f.b_fine = f.assembler.rhs(&x_corr, None, None)?;
                let bc = f.chain.restrict(&f.b_fine, b);
                self.solver.set_rhs(bc)?;
                self.timings.rhs += t0.elapsed().as_secs_f64();
                f.x_tilde = xt;
                f.residual = r;
                f.x_corr = x_corr;
            }
        }
        self.step = n;

        let t0 = Instant::now();
        let force = if self.has_obstacle { Some(self.force()?) } else { None };
        self.prev_out = self.output_state().to_vec();
        self.timings.functionals += t0.elapsed().as_secs_f64();
        self.timings.steps += 1;
        self.timings.total += t_start.elapsed().as_secs_f64();
        Ok(StepReport {
            step: n,
            time: n as f64 * self.k,
            solver: stats,
            force,
        })
    }

    /// Force on the obstacles for the current output state, including the
    /// discrete time derivative.
    pub fn force(&self) -> Result<[f64; 3]> {
        let terms = ForceTerms {
            forcing: None,
            previous: Some((&self.prev_out, T::c(self.k))),
        };
        let f = obstacle_force(self.output_space(), self.output_state(), self.nu(), &terms)?;
        Ok([f[0].f64(), f[1].f64(), f[2].f64()])
    }

    /// Replaces the fine history by a given fine state: the coming step
    /// uses `rhs(x_fine)` and, with `warm`, the injected state as initial
    /// guess. Used to pair coarse machinery with a reference run.
    pub fn force_history(&mut self, x_fine: &[T], warm: bool) -> Result<()> {
        let f = self
            .fine
            .as_mut()
            .ok_or_else(|| Error::InvalidInput("history override needs the hybrid scheme".into()))?;
        if x_fine.len() != f.assembler.n_dofs() {
            return Err(Error::DimensionMismatch {
                context: "reference fine state",
                expected: f.assembler.n_dofs(),
                got: x_fine.len(),
            });
        }
        let b = f.assembler.dim() + 1;
        f.b_fine = f.assembler.rhs(x_fine, None, None)?;
        f.x_corr = x_fine.to_vec();
        let bc = f.chain.restrict(&f.b_fine, b);
        if warm {
            self.x = x_fine[..self.x.len()].to_vec();
        }
        self.prev_out = x_fine.to_vec();
        self.solver.set_rhs(bc)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let v = |x: &[T]| x.iter().map(|a| a.f64()).collect::<Vec<f64>>();
        let mut c = Checkpoint {
            step: self.step as u64,
            time: self.time(),
            fields: Vec::new(),
        };
        c.insert("x", v(&self.x));
        c.insert("b", v(self.solver.rhs()));
        c.insert("prev_out", v(&self.prev_out));
        if let Some(a) = self.solver.jacobian_anchor() {
            c.insert("jacobian_anchor", v(a));
        }
        if let Some(f) = &self.fine {
            c.insert("b_fine", v(&f.b_fine));
            c.insert("x_corr", v(&f.x_corr));
        }
        c
    }

    pub fn restore(&mut self, c: &Checkpoint) -> Result<()> {
        let get = |name: &str, n: usize| -> Result<Vec<T>> {
            let v = c
                .field(name)
                .ok_or_else(|| Error::Format(format!("checkpoint lacks field `{name}`")))?;
            if v.len() != n {
                return Err(Error::DimensionMismatch {
                    context: "checkpoint field",
                    expected: n,
                    got: v.len(),
                });
            }
            Ok(v.iter().map(|&a| T::c(a)).collect())
        };
        let n = self.solver.n_dofs();
        self.x = get("x", n)?;
        self.solver.set_rhs(get("b", n)?)?;
        let n_out = self.output_space().n_dofs();
        self.prev_out = get("prev_out", n_out)?;
        let anchor = match c.field("jacobian_anchor") {
            Some(_) => Some(get("jacobian_anchor", n)?),
            None => None,
        };
        self.solver.restore_anchor(anchor)?;
        if let Some(f) = self.fine.as_mut() {
            let nf = f.assembler.n_dofs();
            let bf = get("b_fine", nf)?;
            let xc = get("x_corr", nf)?;
            f.b_fine = bf;
            f.x_corr = xc;
        }
        self.step = c.step as usize;
        Ok(())
    }

    pub fn boundary(&self) -> &dyn BoundaryData<T> {
        &self.inflow
    }
}
