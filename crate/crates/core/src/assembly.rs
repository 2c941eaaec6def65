//! Stabilized Crank–Nicolson Navier–Stokes operator on one level.
//!
//! With `x = (p, v)` the operator is
//!
//! ```text
//! A(x)_ξ = (∇·v, ξ) + Σ_T α_T (∇(p − π_h p), ∇(ξ − π_h ξ))
//! A(x)_φ = (v, φ)/k + ½(v·∇v, φ) + ½ν(∇v, ∇φ) − (p, ∇·φ)
//!        + Σ_T δ_T (v·∇v − π_h v·∇π_h v, v·∇φ − π_h v·∇π_h φ)
//! ```
//!
//! and the residual is `r = b − A(x)` with constrained rows set to zero.
//! Without an outflow boundary the continuity rows of the residual are
//! shifted to a compatible right-hand side.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reference::{pow2, q2_to_vertex};
use crate::scalar::Real;
use crate::space::FeSpace;
use crate::sparse::{BlockPattern, BlockSparse};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowParams<T> {
    pub nu: T,
    /// Time step.
    pub k: T,
    pub alpha0: T,
    pub delta0: T,
}

impl<T: Real> FlowParams<T> {
    pub fn new(nu: T, k: T) -> Self {
        Self {
            nu,
            k,
            alpha0: T::c(0.02),
            delta0: T::c(0.1),
        }
    }
}

/// `(α_T, δ_T)` from the mesh Péclet number of a cell.
pub fn stab_params<T: Real>(h: T, vmax: T, nu: T, k: T, alpha0: T, delta0: T) -> (T, T) {
    let denom = nu / (h * h) + vmax / h + T::one() / k;
    (alpha0 / denom, delta0 / denom)
}

const CHUNK: usize = 256;

/// Runs `f` over cells in parallel chunks and feeds the results to `sink`
/// in cell order.
fn cell_loop<R: Send>(
    n_cells: usize,
    f: impl Fn(usize) -> R + Sync,
    mut sink: impl FnMut(usize, R),
) {
    let mut start = 0;
    while start < n_cells {
        let end = (start + CHUNK).min(n_cells);
        let out: Vec<R> = (start..end).into_par_iter().map(&f).collect();
        for (i, r) in out.into_iter().enumerate() {
            sink(start + i, r);
        }
        start = end;
    }
}

/// Everything needed to evaluate the discrete operator on one level.
#[derive(Clone, Debug)]
pub struct NsAssembler<T> {
    pub space: FeSpace<T>,
    pub pattern: Arc<BlockPattern>,
    pub mask: Vec<bool>,
    pub params: FlowParams<T>,
    vertex_of: Vec<Option<usize>>,
}

struct Qp<T> {
    u: [T; 3],
    w: [T; 3],
    g: [[T; 3]; 3],
    h: [[T; 3]; 3],
    p: T,
    gpf: [T; 3],
}

impl<T: Real> NsAssembler<T> {
    pub fn new(space: FeSpace<T>, params: FlowParams<T>) -> Self {
        let nl = space.n_local();
        let pattern = Arc::new(BlockPattern::from_cells(space.n_nodes, nl, &space.cell_nodes));
        let mask = space.dirichlet_mask();
        let vertex_of = (0..nl).map(|i| q2_to_vertex(i, space.dim)).collect();
        Self {
            space,
            pattern,
            mask,
            params,
            vertex_of,
        }
    }

    pub fn dim(&self) -> usize {
        self.space.dim
    }

    pub fn n_dofs(&self) -> usize {
        self.space.n_dofs()
    }

    fn check_len(&self, v: &[T], context: &'static str) -> Result<()> {
        if v.len() != self.n_dofs() {
            return Err(Error::DimensionMismatch {
                context,
                expected: self.n_dofs(),
                got: v.len(),
            });
        }
        Ok(())
    }

    fn gather(&self, c: usize, x: &[T]) -> Vec<T> {
        let b = self.dim() + 1;
        let mut out = Vec::with_capacity(self.space.n_local() * b);
        for &n in self.space.nodes(c) {
            out.extend_from_slice(&x[n * b..(n + 1) * b]);
        }
        out
    }

    fn scatter(&self, c: usize, local: &[T], out: &mut [T]) {
        let b = self.dim() + 1;
        for (i, &n) in self.space.nodes(c).iter().enumerate() {
            for r in 0..b {
                out[n * b + r] += local[i * b + r];
            }
        }
    }

    /// Per-cell `(α_T, δ_T)` evaluated at state `x`.
    pub fn cell_stab(&self, x: &[T]) -> Vec<[T; 2]> {
        let d = self.dim();
        let b = d + 1;
        let p = &self.params;
        (0..self.space.n_cells)
            .map(|c| {
                let vmax = self
                    .space
                    .nodes(c)
                    .iter()
                    .map(|&n| {
                        (1..=d)
                            .map(|comp| x[n * b + comp].powi(2))
                            .sum::<T>()
                            .sqrt()
                    })
                    .fold(T::zero(), T::max);
                let (a, dl) =
                    stab_params(self.space.diameter(c), vmax, p.nu, p.k, p.alpha0, p.delta0);
                [a, dl]
            })
            .collect()
    }

    fn qp_values(&self, q: usize, xl: &[T], cd: &crate::space::CellData<T>) -> Qp<T> {
        let d = self.dim();
        let b = d + 1;
        let nl = self.space.n_local();
        let nv = pow2(d);
        let phi = &self.space.q2_val[q * nl..(q + 1) * nl];
        let q1 = &self.space.q1_val[q * nv..(q + 1) * nv];
        let mut r = Qp {
            u: [T::zero(); 3],
            w: [T::zero(); 3],
            g: [[T::zero(); 3]; 3],
            h: [[T::zero(); 3]; 3],
            p: T::zero(),
            gpf: [T::zero(); 3],
        };
        for i in 0..nl {
            let gi = &cd.grad[q * nl + i];
            let fi = &cd.fluct_grad[q * nl + i];
            let pi = xl[i * b];
            r.p += phi[i] * pi;
            for a in 0..d {
                r.gpf[a] += fi[a] * pi;
            }
            let lv = self.vertex_of[i].map_or(T::zero(), |v| q1[v]);
            for c in 0..d {
                let vc = xl[i * b + 1 + c];
                r.u[c] += phi[i] * vc;
                r.w[c] += lv * vc;
                for a in 0..d {
                    r.g[c][a] += gi[a] * vc;
                    r.h[c][a] += (gi[a] - fi[a]) * vc;
                }
            }
        }
        r
    }

    /// Local operator values and, optionally, the local Jacobian.
    fn kernel(&self, c: usize, xl: &[T], stab: [T; 2], want_jac: bool) -> (Vec<T>, Vec<T>) {
        let d = self.dim();
        let b = d + 1;
        let nl = self.space.n_local();
        let nv = pow2(d);
        let nd = nl * b;
        let FlowParams { nu, k, .. } = self.params;
        let [alpha, delta] = stab;
        let half = T::c(0.5);
        let inv_k = T::one() / k;
        let hnu = half * nu;
        let mut res = vec![T::zero(); nd];
        let mut jac = if want_jac { vec![T::zero(); nd * nd] } else { Vec::new() };
        let mut lg = [[T::zero(); 3]; 27];
        let mut t = [T::zero(); 27];
        let mut ug = [T::zero(); 27];
        let mut lval = [T::zero(); 27];
        self.space.with_cell(c, |cd| {
            for q in 0..self.space.n_qp() {
                let wq = cd.jxw[q];
                let phi = &self.space.q2_val[q * nl..(q + 1) * nl];
                let q1 = &self.space.q1_val[q * nv..(q + 1) * nv];
                let g = &cd.grad[q * nl..(q + 1) * nl];
                let fg = &cd.fluct_grad[q * nl..(q + 1) * nl];
                let v = self.qp_values(q, xl, cd);
                for i in 0..nl {
                    for a in 0..3 {
                        lg[i][a] = g[i][a] - fg[i][a];
                    }
                    lval[i] = self.vertex_of[i].map_or(T::zero(), |vv| q1[vv]);
                    let mut a1 = T::zero();
                    let mut a2 = T::zero();
                    for a in 0..d {
                        a1 += v.u[a] * g[i][a];
                        a2 += v.w[a] * lg[i][a];
                    }
                    ug[i] = a1;
                    t[i] = a1 - a2;
                }
                let mut div = T::zero();
                let mut conv = [T::zero(); 3];
                let mut s = [T::zero(); 3];
                for cc in 0..d {
                    div += v.g[cc][cc];
                    let mut c1 = T::zero();
                    let mut c2 = T::zero();
                    for a in 0..d {
                        c1 += v.u[a] * v.g[cc][a];
                        c2 += v.w[a] * v.h[cc][a];
                    }
                    conv[cc] = c1;
                    s[cc] = c1 - c2;
                }
                for i in 0..nl {
                    let mut lps = T::zero();
                    for a in 0..d {
                        lps += v.gpf[a] * fg[i][a];
                    }
                    res[i * b] += wq * (div * phi[i] + alpha * lps);
                    for cc in 0..d {
                        let mut visc = T::zero();
                        for a in 0..d {
                            visc += v.g[cc][a] * g[i][a];
                        }
                        res[i * b + 1 + cc] += wq
                            * (inv_k * v.u[cc] * phi[i] + half * conv[cc] * phi[i] + hnu * visc
                                - v.p * g[i][cc]
                                + delta * s[cc] * t[i]);
                    }
                }
                if !want_jac {
                    continue;
                }
                for i in 0..nl {
                    for j in 0..nl {
                        let mut gg = T::zero();
                        let mut ff = T::zero();
                        for a in 0..d {
                            gg += g[j][a] * g[i][a];
                            ff += fg[j][a] * fg[i][a];
                        }
                        let pp = phi[i] * phi[j];
                        let row0 = (i * b) * nd + j * b;
                        jac[row0] += wq * alpha * ff;
                        for e in 0..d {
                            jac[row0 + 1 + e] += wq * g[j][e] * phi[i];
                        }
                        let diag = inv_k * pp + half * ug[j] * phi[i] + hnu * gg;
                        for cc in 0..d {
                            let row = (i * b + 1 + cc) * nd + j * b;
                            jac[row] -= wq * phi[j] * g[i][cc];
                            for e in 0..d {
                                let mut val = half * phi[j] * v.g[cc][e] * phi[i];
                                let mut ds = phi[j] * v.g[cc][e] - lval[j] * v.h[cc][e];
                                if cc == e {
                                    val += diag;
                                    ds += t[j];
                                }
                                let dt = phi[j] * g[i][e] - lval[j] * lg[i][e];
                                val += delta * (ds * t[i] + s[cc] * dt);
                                jac[row + 1 + e] += wq * val;
                            }
                        }
                    }
                }
            }
        });
        (res, jac)
    }

    /// `A(x)` with given per-cell stabilization parameters.
    pub fn operator(&self, x: &[T], stab: &[[T; 2]]) -> Vec<T> {
        let mut out = vec![T::zero(); self.n_dofs()];
        cell_loop(
            self.space.n_cells,
            |c| self.kernel(c, &self.gather(c, x), stab[c], false).0,
            |c, r| self.scatter(c, &r, &mut out),
        );
        out
    }

    /// `r = b − A(x)` with stabilization evaluated at `x`.
    pub fn residual(&self, x: &[T], b: &[T]) -> Result<Vec<T>> {
        let stab = self.cell_stab(x);
        self.residual_with(x, b, &stab)
    }

    /// `r = b − A(x)` with frozen stabilization parameters.
    pub fn residual_with(&self, x: &[T], b: &[T], stab: &[[T; 2]]) -> Result<Vec<T>> {
        self.check_len(x, "residual state")?;
        self.check_len(b, "residual right-hand side")?;
        let a = self.operator(x, stab);
        let mut r: Vec<T> = b.iter().zip(&a).map(|(&bi, &ai)| bi - ai).collect();
        self.space.zero_dirichlet(&mut r, &self.mask);
        self.space.filter_residual(&mut r);
        Ok(r)
    }

    /// Jacobian of `A` at `x`, stabilization parameters frozen at `x`,
    /// constrained rows and columns replaced by the identity.
    pub fn jacobian(&self, x: &[T]) -> BlockSparse<T> {
        let stab = self.cell_stab(x);
        self.jacobian_with(x, &stab)
    }

    pub fn jacobian_with(&self, x: &[T], stab: &[[T; 2]]) -> BlockSparse<T> {
        let mut m = BlockSparse::zeros(self.pattern.clone(), self.dim() + 1);
        cell_loop(
            self.space.n_cells,
            |c| self.kernel(c, &self.gather(c, x), stab[c], true).1,
            |c, j| m.add_cell(c, &j),
        );
        m.condense(&self.mask);
        m
    }

    /// Right-hand side of the next step from the velocity of `x_prev` and
    /// nodal force fields at both time levels (pressure slots ignored).
    pub fn rhs(&self, x_prev: &[T], f_prev: Option<&[T]>, f_next: Option<&[T]>) -> Result<Vec<T>> {
        self.check_len(x_prev, "rhs state")?;
        for f in [f_prev, f_next].into_iter().flatten() {
            self.check_len(f, "rhs force")?;
        }
        let d = self.dim();
        let b = d + 1;
        let nl = self.space.n_local();
        let FlowParams { nu, k, .. } = self.params;
        let half = T::c(0.5);
        let mut out = vec![T::zero(); self.n_dofs()];
        let ftot: Option<Vec<T>> = match (f_prev, f_next) {
            (None, None) => None,
            (a, b2) => Some(
                (0..self.n_dofs())
                    .map(|i| a.map_or(T::zero(), |f| f[i]) + b2.map_or(T::zero(), |f| f[i]))
                    .collect(),
            ),
        };
        cell_loop(
            self.space.n_cells,
            |c| {
                let xl = self.gather(c, x_prev);
                let fl = ftot.as_ref().map(|f| self.gather(c, f));
                let mut loc = vec![T::zero(); nl * b];
                self.space.with_cell(c, |cd| {
                    for q in 0..self.space.n_qp() {
                        let wq = cd.jxw[q];
                        let phi = &self.space.q2_val[q * nl..(q + 1) * nl];
                        let g = &cd.grad[q * nl..(q + 1) * nl];
                        let v = self.qp_values(q, &xl, cd);
                        let mut fq = [T::zero(); 3];
                        if let Some(fl) = &fl {
                            for i in 0..nl {
                                for cc in 0..d {
                                    fq[cc] += phi[i] * fl[i * b + 1 + cc];
                                }
                            }
                        }
                        for cc in 0..d {
                            let mut conv = T::zero();
                            for a in 0..d {
                                conv += v.u[a] * v.g[cc][a];
                            }
                            let val = v.u[cc] / k + half * fq[cc] - half * conv;
                            for i in 0..nl {
                                let mut visc = T::zero();
                                for a in 0..d {
                                    visc += v.g[cc][a] * g[i][a];
                                }
                                loc[i * b + 1 + cc] += wq * (val * phi[i] - half * nu * visc);
                            }
                        }
                    }
                });
                loc
            },
            |c, loc| self.scatter(c, &loc, &mut out),
        );
        Ok(out)
    }
}

/// Scalar Laplace operator with homogeneous Dirichlet data on the whole
/// boundary; a test surrogate for the multigrid solver.
pub fn assemble_laplace<T: Real>(space: &FeSpace<T>) -> (BlockSparse<T>, Vec<bool>) {
    let nl = space.n_local();
    let pattern = Arc::new(BlockPattern::from_cells(space.n_nodes, nl, &space.cell_nodes));
    let mut m = BlockSparse::zeros(pattern, 1);
    let d = space.dim;
    for c in 0..space.n_cells {
        let mut loc = vec![T::zero(); nl * nl];
        space.with_cell(c, |cd| {
            for q in 0..space.n_qp() {
                let g = &cd.grad[q * nl..(q + 1) * nl];
                for i in 0..nl {
                    for j in 0..nl {
                        let s: T = (0..d).map(|a| g[i][a] * g[j][a]).sum();
                        loc[i * nl + j] += cd.jxw[q] * s;
                    }
                }
            }
        });
        m.add_cell(c, &loc);
    }
    let mask: Vec<bool> = space.node_tags.iter().map(|t| t.is_some()).collect();
    m.condense(&mask);
    (m, mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_template_mesh, ChannelSpec, Template};
    use crate::space::{InflowProfile, Prolongation};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn asm(t: Template, levels: usize) -> (crate::mesh::MeshHierarchy<f64>, NsAssembler<f64>) {
        let h = build_template_mesh::<f64>(&t).unwrap().refine_to(levels);
        let s = FeSpace::new(h.finest(), levels, 4);
        let a = NsAssembler::new(s, FlowParams::new(1e-2, 0.05));
        (h, a)
    }

    #[test]
    fn stab_param_example() {
        let (a, d) = stab_params(0.1f64, 1.0, 5e-4, 0.008, 0.02, 0.1);
        assert!((a - 1.48094e-4).abs() < 1e-9);
        assert!((d / a - 5.0).abs() < 1e-12);
        let (a0, _) = stab_params(0.1f64, 1.0, 5e-4, 0.008, 0.0, 0.1);
        assert_eq!(a0, 0.0);
    }

    #[test]
    fn zero_state_zero_residual() {
        let (_, a) = asm(Template::UnitSquare { n: 2 }, 0);
        let x = vec![0.0; a.n_dofs()];
        let r = a.residual(&x, &x).unwrap();
        assert!(r.iter().all(|&v| v == 0.0));
        assert!(a.rhs(&x, None, None).unwrap().iter().all(|&v| v == 0.0));
    }

    fn fd_check(a: &NsAssembler<f64>, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = a.n_dofs();
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b = vec![0.0; n];
        let stab = a.cell_stab(&x);
        let j = a.jacobian_with(&x, &stab);
        let eps = 1e-6;
        for _ in 0..10 {
            let dir: Vec<f64> = (0..n)
                .map(|i| if a.mask[i] { 0.0 } else { rng.gen_range(-1.0..1.0) })
                .collect();
            let xp: Vec<f64> = x.iter().zip(&dir).map(|(x, d)| x + eps * d).collect();
            let xm: Vec<f64> = x.iter().zip(&dir).map(|(x, d)| x - eps * d).collect();
            let rp = a.residual_with(&xp, &b, &stab).unwrap();
            let rm = a.residual_with(&xm, &b, &stab).unwrap();
            let jd = j.apply(&dir);
            let mut num = 0.0;
            let mut den = 0.0;
            for i in 0..n {
                if a.mask[i] {
                    continue;
                }
                let fd = -(rp[i] - rm[i]) / (2.0 * eps);
                num += (fd - jd[i]).powi(2);
                den += jd[i].powi(2);
            }
            let rel = (num / den).sqrt();
            assert!(rel < 1e-6, "relative FD error {rel}");
        }
    }

    #[test]
    fn jacobian_matches_finite_differences_2d_curved() {
        let (_, a) = asm(Template::Channel(ChannelSpec::cylinder_2d()), 0);
        fd_check(&a, 1);
    }

    #[test]
    fn jacobian_matches_finite_differences_3d() {
        let (_, a) = asm(Template::UnitCube { n: 1 }, 0);
        fd_check(&a, 2);
    }

    #[test]
    fn jacobian_couples_only_cell_neighbours() {
        let (_, a) = asm(Template::UnitSquare { n: 3 }, 0);
        let x = vec![0.1; a.n_dofs()];
        let j = a.jacobian(&x);
        assert_eq!(j.pattern.nnz_blocks(), a.pattern.nnz_blocks());
        let n = a.space.n_nodes;
        // the two opposite corners never share a cell
        let far = (0..n)
            .find(|&i| a.space.node_coords[i] == [1.0, 1.0, 0.0])
            .unwrap();
        assert!(j.pattern.find(0, far).is_none());
    }

    #[test]
    fn convection_block_vanishes_at_rest() {
        let (_, mut a) = asm(Template::UnitSquare { n: 2 }, 0);
        a.params.alpha0 = 0.0;
        a.params.delta0 = 0.0;
        let x = vec![0.0; a.n_dofs()];
        let d = a.jacobian(&x).to_dense();
        let n = a.n_dofs();
        // velocity-velocity block is symmetric (mass + viscosity)
        for i in 0..n {
            for j in 0..n {
                if i % 3 != 0 && j % 3 != 0 {
                    assert!((d[i * n + j] - d[j * n + i]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn rhs_linear_in_force() {
        let (_, a) = asm(Template::UnitSquare { n: 2 }, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = a.n_dofs();
        let v: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
        let f: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
        let with = a.rhs(&v, Some(&f), Some(&f)).unwrap();
        let without = a.rhs(&v, None, None).unwrap();
        let fx = a.space.component(&f, 1);
        let mf = a.space.mass_apply(&fx);
        for node in 0..a.space.n_nodes {
            let i = a.space.dof(node, 1);
            assert!((with[i] - without[i] - mf[node]).abs() < 1e-12);
        }
    }

    #[test]
    fn restricted_rhs_equals_coarse_rhs() {
        let h = build_template_mesh::<f64>(&Template::Channel(ChannelSpec::square_obstacle_2d()))
            .unwrap()
            .refine_uniform();
        let mut p = FlowParams::new(1e-3, 0.01);
        p.delta0 = 0.0;
        let ac = NsAssembler::new(FeSpace::new(h.level(0), 0, 4), p);
        let af = NsAssembler::new(FeSpace::new(h.level(1), 1, 4), p);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let xc: Vec<f64> = (0..ac.n_dofs()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let fc: Vec<f64> = (0..ac.n_dofs()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let pr = Prolongation::new(&h, 0);
        let xf = pr.prolongate(&xc, 3);
        let ff = pr.prolongate(&fc, 3);
        let bf = af.rhs(&xf, Some(&ff), None).unwrap();
        let bc = ac.rhs(&xc, Some(&fc), None).unwrap();
        let rb = pr.restrict(&bf, 3);
        let scale = bc.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (a, b) in rb.iter().zip(&bc) {
            assert!((a - b).abs() < 1e-12 * scale.max(1.0), "{a} {b}");
        }
    }

    #[test]
    fn convection_of_constant_field_vanishes() {
        let (_, mut a) = asm(Template::UnitSquare { n: 2 }, 0);
        a.params.delta0 = 0.0;
        let x = a.space.interpolate(|_| [0.0, 0.7, -0.3, 0.0]);
        let b = a.rhs(&x, None, None).unwrap();
        // b = M v / k only: summing over all test functions gives |Ω| v / k
        let sx: f64 = (0..a.space.n_nodes).map(|n| b[a.space.dof(n, 1)]).sum();
        assert!((sx - 0.7 / a.params.k).abs() < 1e-11);
    }

    #[test]
    fn inflow_state_has_zero_constrained_residual() {
        let (_, a) = asm(Template::Channel(ChannelSpec::cylinder_2d()), 0);
        let mut x = vec![0.0; a.n_dofs()];
        let prof = InflowProfile {
            dim: 2,
            vbar: 1.0,
            height: 0.41,
            ramp: false,
        };
        a.space.apply_dirichlet(&mut x, &prof, 1.0);
        let r = a.residual(&x, &vec![0.0; a.n_dofs()]).unwrap();
        for (i, &m) in a.mask.iter().enumerate() {
            if m {
                assert_eq!(r[i], 0.0);
            }
        }
        assert!(r.iter().any(|&v| v != 0.0));
    }
}
