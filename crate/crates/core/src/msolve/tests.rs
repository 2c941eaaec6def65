use super::*;
use crate::assembly::{assemble_laplace, FlowParams, NsAssembler};
use crate::error::Result;
use crate::mesh::{build_template_mesh, ChannelSpec, MeshHierarchy, Template};
use crate::scalar::norm2;
use crate::space::{FeSpace, Prolongation};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn square(n: usize, top: usize) -> MeshHierarchy<f64> {
    build_template_mesh::<f64>(&Template::UnitSquare { n })
        .unwrap()
        .refine_to(top)
}

fn random(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn masked(mut v: Vec<f64>, mask: &[bool]) -> Vec<f64> {
    for (x, &m) in v.iter_mut().zip(mask) {
        if m {
            *x = 0.0;
        }
    }
    v
}

fn unit_channel(cell: f64) -> MeshHierarchy<f64> {
    let spec = ChannelSpec {
        length: 1.0,
        height: 1.0,
        obstacles: vec![],
        cell_size: cell,
        ..ChannelSpec::cylinder_2d()
    };
    build_template_mesh::<f64>(&Template::Channel(spec)).unwrap()
}

#[test]
fn vanka_single_cell_is_direct() {
    let h = unit_channel(1.0);
    assert_eq!(h.level(0).n_cells(), 1);
    let a = NsAssembler::new(FeSpace::new(h.level(0), 0, 4), FlowParams::new(0.01, 0.1));
    let x0 = random(a.n_dofs(), 1);
    let j = a.jacobian(&x0);
    let b = masked(random(a.n_dofs(), 2), &a.mask);
    let v = Vanka::new(&j, 1.0);
    assert_eq!(v.regularized, 0);
    let mut x = vec![0.0; a.n_dofs()];
    v.sweep(&j, &mut x, &b);
    assert!(norm2(&j.residual(&b, &x)) < 1e-12);
}

#[test]
fn vanka_sweeps_reduce_stokes_residual() {
    let h = unit_channel(0.25);
    let a = NsAssembler::new(FeSpace::new(h.level(0), 0, 4), FlowParams::new(1.0, 0.1));
    let zero = vec![0.0; a.n_dofs()];
    let j = a.jacobian(&zero);
    let f = a.space.interpolate(|q| [0.0, 1.0 + q[1], (3.0 * q[0]).sin(), 0.0]);
    let b = a.residual(&zero, &a.rhs(&zero, Some(&f), Some(&f)).unwrap()).unwrap();
    let v = Vanka::new(&j, 0.7);
    let mut x = zero.clone();
    let mut prev = norm2(&b);
    for _ in 0..6 {
        v.sweep(&j, &mut x, &b);
        let r = norm2(&j.residual(&b, &x));
        assert!(r < prev, "{r} >= {prev}");
        prev = r;
    }
}

fn stokes_mg(h: &MeshHierarchy<f64>, top: usize) -> (Multigrid<f64>, NsAssembler<f64>) {
    let p = FlowParams::new(1.0, 0.1);
    let mut asm: Vec<_> = (0..=top)
        .map(|l| NsAssembler::new(FeSpace::new(h.level(l), l, 4), p))
        .collect();
    let mats = asm
        .iter()
        .map(|a| (a.jacobian(&vec![0.0; a.n_dofs()]), a.mask.clone()))
        .collect();
    let tr = (0..top).map(|l| Prolongation::new(h, l)).collect();
    let floating = asm[top].space.pressure_floating;
    (
        Multigrid::new(mats, tr, MgSettings::default(), floating),
        asm.pop().unwrap(),
    )
}

#[test]
fn stokes_vcycle_contraction_bounded() {
    for h in [square(2, 3), unit_channel(0.5).refine_to(3)] {
        for top in 1..=3 {
            let (mg, a) = stokes_mg(&h, top);
            let mut b = masked(random(a.n_dofs(), 3), &a.mask);
            a.space.filter_residual(&mut b);
            let m = &mg.levels[top].matrix;
            let mut x = vec![0.0; b.len()];
            let mut norms = vec![norm2(&b)];
            for _ in 0..8 {
                let r = m.residual(&b, &x);
                let z = mg.apply(&r);
                x.iter_mut().zip(&z).for_each(|(x, z)| *x += z);
                norms.push(norm2(&m.residual(&b, &x)));
            }
            let rate = (norms[8] / norms[3]).powf(0.2);
            assert!(rate < 0.2, "top {top}: {norms:?}");
        }
    }
}

fn laplace_mg(top: usize) -> (Multigrid<f64>, Vec<bool>) {
    let h = square(2, top);
    let mats = (0..=top)
        .map(|l| assemble_laplace(&FeSpace::new(h.level(l), l, 3)))
        .collect::<Vec<_>>();
    let mask = mats[top].1.clone();
    let tr = (0..top).map(|l| Prolongation::new(&h, l)).collect();
    (Multigrid::new(mats, tr, MgSettings::default(), false), mask)
}

fn contraction(mg: &Multigrid<f64>, mask: &[bool], seed: u64) -> f64 {
    let a = &mg.levels[mg.top()].matrix;
    let b = masked(random(a.n_rows(), seed), mask);
    let mut x = vec![0.0; b.len()];
    let mut norms = vec![norm2(&b)];
    for _ in 0..8 {
        let r = a.residual(&b, &x);
        let z = mg.apply(&r);
        x.iter_mut().zip(&z).for_each(|(x, z)| *x += z);
        norms.push(norm2(&a.residual(&b, &x)));
    }
    (norms[8] / norms[2]).powf(1.0 / 6.0)
}

#[test]
fn poisson_vcycle_contraction_is_level_independent() {
    let rates: Vec<f64> = (2..=4)
        .map(|top| {
            let (mg, mask) = laplace_mg(top);
            contraction(&mg, &mask, 11)
        })
        .collect();
    for &r in &rates {
        assert!(r <= 0.5, "{rates:?}");
    }
    let (lo, hi) = rates
        .iter()
        .fold((f64::MAX, f64::MIN), |(a, b), &r| (a.min(r), b.max(r)));
    assert!(hi - lo <= 0.3, "{rates:?}");
}

#[test]
fn vcycle_zero_stays_zero_and_one_level_is_direct() {
    let (mg, _) = laplace_mg(2);
    let z = mg.apply(&vec![0.0; mg.levels[2].matrix.n_rows()]);
    assert!(z.iter().all(|&v| v == 0.0));
    let (mg1, mask) = laplace_mg(0);
    let a = &mg1.levels[0].matrix;
    let b = masked(random(a.n_rows(), 4), &mask);
    let x = mg1.apply(&b);
    assert!(norm2(&a.residual(&b, &x)) < 1e-12);
}

#[test]
fn gmres_identity_and_diagonal() {
    let b = random(20, 5);
    let mut x = vec![0.0; 20];
    let s = gmres(|v: &[f64]| v.to_vec(), |v: &[f64]| v.to_vec(), &b, &mut x, &GmresSettings::default()).unwrap();
    assert_eq!(s.iterations, 1);
    let d: Vec<f64> = (1..=12).map(|i| i as f64).collect();
    let b = random(12, 6);
    let mut x = vec![0.0; 12];
    let set = GmresSettings {
        tol_rel: 1e-12,
        ..Default::default()
    };
    let s = gmres(
        |v: &[f64]| v.iter().zip(&d).map(|(a, b)| a * b).collect(),
        |v: &[f64]| v.to_vec(),
        &b,
        &mut x,
        &set,
    )
    .unwrap();
    assert!(s.converged && s.iterations <= 12);
    for i in 0..12 {
        assert!((x[i] * d[i] - b[i]).abs() < 1e-10);
    }
}

struct Scalar {
    jac: Option<f64>,
    linear: bool,
}

impl NonlinearProblem<f64> for Scalar {
    fn residual(&mut self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(vec![if self.linear { 3.0 - 2.0 * x[0] } else { 2.0 - x[0] * x[0] }])
    }
    fn has_jacobian(&self) -> bool {
        self.jac.is_some()
    }
    fn assemble_jacobian(&mut self, x: &[f64]) -> Result<()> {
        self.jac = Some(if self.linear { 2.0 } else { 2.0 * x[0] });
        Ok(())
    }
    fn solve_linear(&mut self, r: &[f64]) -> Result<(Vec<f64>, usize)> {
        Ok((vec![r[0] / self.jac.unwrap()], 1))
    }
}

#[test]
fn newton_linear_one_iteration() {
    let mut p = Scalar { jac: None, linear: true };
    let mut x = [0.0];
    let s = newton_solve(&mut p, &mut x, &NewtonSettings::default(), None).unwrap();
    assert_eq!(s.iterations, 1);
    assert!((x[0] - 1.5).abs() < 1e-15);
}

#[test]
fn newton_quadratic_convergence() {
    let mut p = Scalar { jac: None, linear: false };
    let mut x = [1.0];
    let set = NewtonSettings {
        always_reassemble: true,
        tol_rel: 1e-15,
        tol_abs: 1e-15,
        ..Default::default()
    };
    let s = newton_solve(&mut p, &mut x, &set, None).unwrap();
    assert!((x[0] - 2f64.sqrt()).abs() < 1e-15);
    let e: Vec<f64> = s.residuals.iter().take_while(|&&r| r > 1e-13).copied().collect();
    for w in e.windows(3) {
        // digits roughly double: log r_{k+1} ≈ 2 log r_k
        let q = (w[2] / w[1]).ln() / (w[1] / w[0]).ln();
        assert!(q > 1.5, "{e:?}");
    }
}

#[test]
fn newton_reports_nonconvergence() {
    let mut p = Scalar { jac: None, linear: false };
    let mut x = [1.0];
    let set = NewtonSettings {
        max_iter: 1,
        tol_rel: 1e-15,
        tol_abs: 1e-15,
        ..Default::default()
    };
    match newton_solve(&mut p, &mut x, &set, Some(3)) {
        Err(crate::Error::Nonconvergence { step, history, .. }) => {
            assert_eq!(step, Some(3));
            assert_eq!(history.len(), 2);
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn reuse_and_reassemble_agree() {
    let h = square(2, 1);
    let p = FlowParams::new(0.01, 0.05);
    let solve = |always: bool| {
        let mut set = SolverSettings::default();
        set.newton.always_reassemble = always;
        set.gmres.tol_rel = 1e-6;
        let mut s = NsLevelSolver::new(&h, 1, p, 4, set).unwrap();
        let sp = s.space().clone();
        let mut x = sp.interpolate(|q| [0.0, q[1] * (1.0 - q[1]), 0.0, 0.0]);
        sp.apply_dirichlet(&mut x, &crate::space::NoSlip, 0.0);
        let b = s.top().rhs(&x, None, None).unwrap();
        s.set_rhs(b).unwrap();
        s.solve(&mut x, None).unwrap();
        x
    };
    let a = solve(false);
    let b = solve(true);
    let diff = norm2(&a.iter().zip(&b).map(|(a, b)| a - b).collect::<Vec<_>>());
    assert!(diff < 1e-6 * norm2(&a).max(1.0), "{diff}");
}

