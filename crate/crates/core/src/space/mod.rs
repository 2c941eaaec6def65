//! Equal-order Q2/Q2 spaces on one mesh level.
//!
//! Unknowns are stored node-major: node `i` owns dofs
//! `(d+1)·i + 0` (pressure) and `(d+1)·i + 1..=d` (velocity).

mod transfer;

pub use transfer::{Prolongation, TransferChain};

use crate::mesh::{BoundaryTag, MeshLevel};
use crate::reference::{
    gauss_tensor, inverse, map_jacobian, map_point, pow2, pow3, q1_grads, q1_values, q2_grads,
    q2_to_vertex, q2_values, vertex_to_q2,
};
use crate::scalar::Real;

/// Velocity boundary values as a function of `(x, tag, t)`.
pub trait BoundaryData<T>: Sync {
    fn velocity(&self, x: &[T; 3], tag: BoundaryTag, t: T) -> [T; 3];
}

impl<T, F> BoundaryData<T> for F
where
    F: Fn(&[T; 3], BoundaryTag, T) -> [T; 3] + Sync,
{
    fn velocity(&self, x: &[T; 3], tag: BoundaryTag, t: T) -> [T; 3] {
        self(x, tag, t)
    }
}

/// Homogeneous velocity data everywhere.
#[derive(Clone, Copy, Debug, Default)]
pub struct NoSlip;

impl<T: Real> BoundaryData<T> for NoSlip {
    fn velocity(&self, _: &[T; 3], _: BoundaryTag, _: T) -> [T; 3] {
        [T::zero(); 3]
    }
}

/// Start-up factor of the inflow: `½ − ½cos(5πt)` up to `t = 0.2`, then 1.
pub fn ramp<T: Real>(t: T) -> T {
    if t <= T::c(0.2) {
        T::c(0.5) - T::c(0.5) * (T::c(5.0) * T::PI() * t).cos()
    } else {
        T::one()
    }
}

/// Parabolic channel inflow with mean-velocity parameter `vbar`.
///
/// In 2D the profile is `6 v̄ y(H−y)/H²` (peak `1.5 v̄`). In 3D it is
/// `(9/8) v̄ · y(H−y)(H²−z²) / ((H/2)² H²)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InflowProfile {
    pub dim: usize,
    pub vbar: f64,
    pub height: f64,
    /// Apply the start-up ramp in time.
    pub ramp: bool,
}

impl<T: Real> BoundaryData<T> for InflowProfile {
    fn velocity(&self, x: &[T; 3], tag: BoundaryTag, t: T) -> [T; 3] {
        let mut v = [T::zero(); 3];
        if tag != BoundaryTag::Inflow {
            return v;
        }
        let h = T::c(self.height);
        let y = x[1];
        let w = if self.ramp { ramp(t) } else { T::one() };
        let shape = if self.dim == 2 {
            T::c(6.0 * self.vbar) * y * (h - y) / (h * h)
        } else {
            let z = x[2];
            let hh = h * T::c(0.5);
            T::c(9.0 / 8.0 * self.vbar) * y * (h - y) * (h * h - z * z) / (hh * hh * h * h)
        };
        v[0] = w * shape;
        v
    }
}

/// Quadrature data of one cell.
#[derive(Clone, Debug)]
pub struct CellData<T> {
    /// Quadrature weight times `|det J|` per point.
    pub jxw: Vec<T>,
    pub points: Vec<[T; 3]>,
    /// Physical Q2 gradients, `grad[q*nq + i]`.
    pub grad: Vec<[T; 3]>,
    /// Physical gradients of `φ_i − π_h φ_i`.
    pub fluct_grad: Vec<[T; 3]>,
    /// Cell diameter.
    pub h: T,
}

/// Q2 space for all `d+1` components on one mesh level.
#[derive(Clone, Debug)]
pub struct FeSpace<T> {
    pub level: usize,
    pub dim: usize,
    pub n_nodes: usize,
    pub n_cells: usize,
    pub cell_nodes: Vec<usize>,
    pub cell_geometry: Vec<[T; 3]>,
    pub node_coords: Vec<[T; 3]>,
    pub node_tags: Vec<Option<BoundaryTag>>,
    pub quad_points: Vec<[T; 3]>,
    pub quad_weights: Vec<T>,
    /// Reference Q2 values, `q2_val[q*nq + i]`.
    pub q2_val: Vec<T>,
    /// Reference Q1 values at the quadrature points, `q1_val[q*nv + v]`.
    pub q1_val: Vec<T>,
    /// Pressure is only determined up to a constant (no outflow boundary).
    pub pressure_floating: bool,
    /// `∫ φ_i` per node, used for the mean-pressure shift.
    pub node_mass: Vec<T>,
    pub volume: T,
    cache: Option<Vec<CellData<T>>>,
    diameters: Vec<T>,
}

/// Cell caches above this many bytes are computed on the fly instead.
const CACHE_LIMIT_BYTES: usize = 1 << 30;

impl<T: Real> FeSpace<T> {
    pub fn new(mesh: &MeshLevel<T>, level: usize, quad_order: usize) -> Self {
        let d = mesh.dim;
        let nq = pow3(d);
        let nv = pow2(d);
        let (quad_points, quad_weights) = gauss_tensor::<T>(quad_order, d);
        let nqp = quad_points.len();
        let mut q2_val = vec![T::zero(); nqp * nq];
        let mut q1_val = vec![T::zero(); nqp * nv];
        for (q, xi) in quad_points.iter().enumerate() {
            q2_values(xi, d, &mut q2_val[q * nq..(q + 1) * nq]);
            q1_values(xi, d, &mut q1_val[q * nv..(q + 1) * nv]);
        }
        let has_outflow = mesh.has_tag(BoundaryTag::Outflow);
        let n_cells = mesh.n_cells();
        let diameters = (0..n_cells).map(|c| mesh.diameter(c)).collect();
        let mut space = Self {
            level,
            dim: d,
            n_nodes: mesh.n_nodes(),
            n_cells,
            cell_nodes: mesh.cell_nodes.clone(),
            cell_geometry: mesh.geometry.clone(),
            node_coords: mesh.node_coords.clone(),
            node_tags: mesh.node_tags(),
            quad_points,
            quad_weights,
            q2_val,
            q1_val,
            pressure_floating: !has_outflow,
            node_mass: Vec::new(),
            volume: T::zero(),
            cache: None,
            diameters,
        };
        let bytes = n_cells * nqp * (2 * nq * 3 + 4) * std::mem::size_of::<T>();
        if bytes <= CACHE_LIMIT_BYTES {
            space.cache = Some((0..n_cells).map(|c| space.compute_cell(c)).collect());
        }
        let mut mass = vec![T::zero(); space.n_nodes];
        let mut vol = T::zero();
        for c in 0..n_cells {
            space.with_cell(c, |cd| {
                for (q, &w) in cd.jxw.iter().enumerate() {
                    vol += w;
                    for (i, &n) in space.nodes(c).iter().enumerate() {
                        mass[n] += w * space.q2_val[q * nq + i];
                    }
                }
            });
        }
        space.node_mass = mass;
        space.volume = vol;
        space
    }

    pub fn n_components(&self) -> usize {
        self.dim + 1
    }

    pub fn n_dofs(&self) -> usize {
        self.n_nodes * (self.dim + 1)
    }

    pub fn n_local(&self) -> usize {
        pow3(self.dim)
    }

    pub fn n_qp(&self) -> usize {
        self.quad_weights.len()
    }

    #[inline]
    pub fn dof(&self, node: usize, comp: usize) -> usize {
        node * (self.dim + 1) + comp
    }

    pub fn nodes(&self, c: usize) -> &[usize] {
        let n = self.n_local();
        &self.cell_nodes[c * n..(c + 1) * n]
    }

    pub fn geometry(&self, c: usize) -> &[[T; 3]] {
        let n = self.n_local();
        &self.cell_geometry[c * n..(c + 1) * n]
    }

    pub fn diameter(&self, c: usize) -> T {
        self.diameters[c]
    }

    /// Runs `f` on the quadrature data of cell `c`.
    pub fn with_cell<R>(&self, c: usize, f: impl FnOnce(&CellData<T>) -> R) -> R {
        match &self.cache {
            Some(cache) => f(&cache[c]),
            None => f(&self.compute_cell(c)),
        }
    }

    fn compute_cell(&self, c: usize) -> CellData<T> {
        let d = self.dim;
        let nq = pow3(d);
        let nv = pow2(d);
        let geo = self.geometry(c);
        let nqp = self.n_qp();
        let mut jxw = Vec::with_capacity(nqp);
        let mut points = Vec::with_capacity(nqp);
        let mut grad = vec![[T::zero(); 3]; nqp * nq];
        let mut fluct_grad = vec![[T::zero(); 3]; nqp * nq];
        let mut rg2 = [[T::zero(); 3]; 27];
        let mut rg1 = [[T::zero(); 3]; 8];
        for (q, xi) in self.quad_points.iter().enumerate() {
            let jac = map_jacobian(geo, xi, d);
            let (inv, det) = inverse(&jac, d);
            jxw.push(self.quad_weights[q] * det.abs());
            points.push(map_point(geo, xi, d));
            q2_grads(xi, d, &mut rg2[..nq]);
            q1_grads(xi, d, &mut rg1[..nv]);
            let phys = |r: &[T; 3]| {
                let mut g = [T::zero(); 3];
                for a in 0..d {
                    for b in 0..d {
                        g[a] += r[b] * inv[b][a];
                    }
                }
                g
            };
            let g1: Vec<[T; 3]> = rg1[..nv].iter().map(phys).collect();
            for i in 0..nq {
                let g = phys(&rg2[i]);
                grad[q * nq + i] = g;
                let mut f = g;
                if let Some(v) = q2_to_vertex(i, d) {
                    for a in 0..3 {
                        f[a] -= g1[v][a];
                    }
                }
                fluct_grad[q * nq + i] = f;
            }
        }
        CellData {
            jxw,
            points,
            grad,
            fluct_grad,
            h: self.diameters[c],
        }
    }

    /// Per-dof mask of Dirichlet velocity dofs.
    pub fn dirichlet_mask(&self) -> Vec<bool> {
        let mut m = vec![false; self.n_dofs()];
        for (n, t) in self.node_tags.iter().enumerate() {
            if t.is_some_and(|t| t.is_dirichlet()) {
                for c in 1..=self.dim {
                    m[self.dof(n, c)] = true;
                }
            }
        }
        m
    }

    /// Writes boundary velocities into `x` at time `t`.
    pub fn apply_dirichlet(&self, x: &mut [T], data: &dyn BoundaryData<T>, t: T) {
        for (n, tag) in self.node_tags.iter().enumerate() {
            if let Some(tag) = tag.filter(|t| t.is_dirichlet()) {
                let v = data.velocity(&self.node_coords[n], tag, t);
                for c in 0..self.dim {
                    x[self.dof(n, c + 1)] = v[c];
                }
            }
        }
    }

    /// Sets all constrained entries of `r` to zero.
    pub fn zero_dirichlet(&self, r: &mut [T], mask: &[bool]) {
        for (ri, &m) in r.iter_mut().zip(mask) {
            if m {
                *ri = T::zero();
            }
        }
    }

    pub fn mean_pressure(&self, x: &[T]) -> T {
        let s: T = (0..self.n_nodes)
            .map(|n| self.node_mass[n] * x[self.dof(n, 0)])
            .sum();
        s / self.volume
    }

    /// Shifts the pressure to zero mean when it is only defined up to a
    /// constant (no outflow boundary).
    pub fn normalize_pressure(&self, x: &mut [T]) {
        if self.pressure_floating {
            let m = self.mean_pressure(x);
            for n in 0..self.n_nodes {
                x[self.dof(n, 0)] -= m;
            }
        }
    }

    /// Removes the component of a residual that no state can balance when
    /// the pressure is floating: the continuity rows are shifted to sum to
    /// zero, which is the compatibility condition of the singular system.
    pub fn filter_residual(&self, r: &mut [T]) {
        if self.pressure_floating {
            let b = self.dim + 1;
            let s: T = r.iter().step_by(b).copied().sum();
            let m = s / T::from_usize_lossy(self.n_nodes);
            r.iter_mut().step_by(b).for_each(|v| *v -= m);
        }
    }

    /// Nodal interpolation of `f(x) = (p, v_1, …, v_d)`.
    pub fn interpolate(&self, f: impl Fn(&[T; 3]) -> [T; 4]) -> Vec<T> {
        let mut x = vec![T::zero(); self.n_dofs()];
        for n in 0..self.n_nodes {
            let v = f(&self.node_coords[n]);
            for c in 0..=self.dim {
                x[self.dof(n, c)] = v[c];
            }
        }
        x
    }

    /// Coefficients of the Q1 vertex interpolant `π_h u` of a scalar nodal
    /// field, expressed in the Q2 basis.
    pub fn interpolate_linear(&self, u: &[T]) -> Vec<T> {
        let d = self.dim;
        let nq = pow3(d);
        let nv = pow2(d);
        let mut out = u.to_vec();
        let mut vals = [T::zero(); 8];
        for c in 0..self.n_cells {
            let nodes = self.nodes(c);
            for i in 0..nq {
                if q2_to_vertex(i, d).is_some() {
                    continue;
                }
                let xi = crate::reference::q2_node_ref::<T>(i, d);
                q1_values(&xi, d, &mut vals[..nv]);
                out[nodes[i]] = (0..nv).map(|v| vals[v] * u[nodes[vertex_to_q2(v, d)]]).sum();
            }
        }
        out
    }

    /// Extracts component `comp` of a state as a nodal field.
    pub fn component(&self, x: &[T], comp: usize) -> Vec<T> {
        (0..self.n_nodes).map(|n| x[self.dof(n, comp)]).collect()
    }

    /// All components of a state at reference point `xi` of cell `c`.
    pub fn evaluate(&self, x: &[T], c: usize, xi: &[T; 3]) -> [T; 4] {
        let nq = self.n_local();
        let mut vals = [T::zero(); 27];
        q2_values(xi, self.dim, &mut vals[..nq]);
        let mut out = [T::zero(); 4];
        for (i, &n) in self.nodes(c).iter().enumerate() {
            for comp in 0..=self.dim {
                out[comp] += vals[i] * x[self.dof(n, comp)];
            }
        }
        out
    }

    /// L²-norm of `x − exact` restricted to components `comps`.
    pub fn l2_error(
        &self,
        x: &[T],
        comps: std::ops::Range<usize>,
        exact: impl Fn(&[T; 3]) -> [T; 4],
    ) -> T {
        let nq = self.n_local();
        let mut s = T::zero();
        for c in 0..self.n_cells {
            self.with_cell(c, |cd| {
                for q in 0..self.n_qp() {
                    let ex = exact(&cd.points[q]);
                    for comp in comps.clone() {
                        let mut v = T::zero();
                        for (i, &n) in self.nodes(c).iter().enumerate() {
                            v += self.q2_val[q * nq + i] * x[self.dof(n, comp)];
                        }
                        s += cd.jxw[q] * (v - ex[comp]).powi(2);
                    }
                }
            });
        }
        s.sqrt()
    }

    /// Mass-matrix action on a nodal scalar field.
    pub fn mass_apply(&self, u: &[T]) -> Vec<T> {
        let nq = self.n_local();
        let mut out = vec![T::zero(); self.n_nodes];
        for c in 0..self.n_cells {
            let nodes = self.nodes(c);
            self.with_cell(c, |cd| {
                for q in 0..self.n_qp() {
                    let row = &self.q2_val[q * nq..(q + 1) * nq];
                    let uq: T = row.iter().zip(nodes).map(|(&p, &n)| p * u[n]).sum();
                    for (i, &n) in nodes.iter().enumerate() {
                        out[n] += cd.jxw[q] * uq * row[i];
                    }
                }
            });
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_template_mesh, ChannelSpec, Template};

    fn unit(n: usize, d: usize) -> FeSpace<f64> {
        let t = if d == 2 {
            Template::UnitSquare { n }
        } else {
            Template::UnitCube { n }
        };
        let h = build_template_mesh::<f64>(&t).unwrap();
        FeSpace::new(h.level(0), 0, 4)
    }

    #[test]
    fn dof_counts() {
        let s = unit(2, 2);
        assert_eq!(s.n_dofs(), 3 * 25);
        let s = unit(1, 3);
        assert_eq!(s.n_dofs(), 4 * 27);
    }

    #[test]
    fn ramp_values() {
        assert_eq!(ramp(0.0f64), 0.0);
        assert!((ramp(0.2f64) - 1.0).abs() < 1e-15);
        assert!((ramp(0.1f64) - 0.5).abs() < 1e-15);
        assert_eq!(ramp(3.0f64), 1.0);
    }

    #[test]
    fn inflow_centerline_3d() {
        let p = InflowProfile {
            dim: 3,
            vbar: 0.45,
            height: 0.41,
            ramp: true,
        };
        let v: [f64; 3] = p.velocity(&[0.0, 0.205, 0.0], BoundaryTag::Inflow, 0.5);
        assert!((v[0] - 9.0 / 8.0 * 0.45).abs() < 1e-14);
        let w: [f64; 3] = p.velocity(&[0.0, 0.205, 0.0], BoundaryTag::Wall, 0.5);
        assert_eq!(w, [0.0; 3]);
    }

    #[test]
    fn linear_interpolation_of_x_squared() {
        let h = build_template_mesh::<f64>(&Template::UnitSquare { n: 1 }).unwrap();
        let s = FeSpace::new(h.level(0), 0, 3);
        let u: Vec<f64> = s.node_coords.iter().map(|p| p[0] * p[0]).collect();
        let mid = (0..s.n_nodes)
            .find(|&n| s.node_coords[n] == [0.5, 0.0, 0.0])
            .unwrap();
        assert!((u[mid] - 0.25).abs() < 1e-15);
        let pu = s.interpolate_linear(&u);
        assert!((pu[mid] - 0.5).abs() < 1e-15);
        let ppu = s.interpolate_linear(&pu);
        for (a, b) in pu.iter().zip(&ppu) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn linear_fields_are_fixed_by_projection() {
        let s = unit(2, 3);
        let u: Vec<f64> = s
            .node_coords
            .iter()
            .map(|p| 1.0 + 2.0 * p[0] - p[1] + 0.5 * p[2])
            .collect();
        let pu = s.interpolate_linear(&u);
        for (a, b) in u.iter().zip(&pu) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn volume_and_pin() {
        let s = unit(3, 2);
        assert!((s.volume - 1.0).abs() < 1e-14);
        assert!(s.pressure_floating);
        let h = build_template_mesh::<f64>(&Template::Channel(ChannelSpec::cylinder_2d())).unwrap();
        let c = FeSpace::new(h.level(0), 0, 4);
        assert!(!c.pressure_floating);
        let mask = c.dirichlet_mask();
        for (n, t) in c.node_tags.iter().enumerate() {
            assert!(!mask[c.dof(n, 0)]);
            let want = t.is_some_and(|t| t != BoundaryTag::Outflow);
            assert_eq!(mask[c.dof(n, 1)], want);
        }
    }

    #[test]
    fn fluctuation_of_linear_function_vanishes() {
        let s = unit(2, 2);
        let u: Vec<f64> = s.node_coords.iter().map(|p| 3.0 * p[0] - p[1]).collect();
        for c in 0..s.n_cells {
            s.with_cell(c, |cd| {
                for q in 0..s.n_qp() {
                    let mut g = [0.0; 3];
                    for (i, &n) in s.nodes(c).iter().enumerate() {
                        for a in 0..2 {
                            g[a] += cd.fluct_grad[q * 9 + i][a] * u[n];
                        }
                    }
                    assert!(g[0].abs() < 1e-12 && g[1].abs() < 1e-12);
                }
            });
        }
    }

    #[test]
    fn nodal_interpolation_converges_at_order_three() {
        let f = |p: &[f64; 3]| {
            let v = (std::f64::consts::PI * p[0]).sin() * (2.0 * p[1]).cos();
            [v, v, v, 0.0]
        };
        let errs: Vec<f64> = [2, 4, 8]
            .iter()
            .map(|&n| {
                let s = unit(n, 2);
                let x = s.interpolate(f);
                s.l2_error(&x, 0..1, f)
            })
            .collect();
        for w in errs.windows(2) {
            let order = (w[0] / w[1]).log2();
            assert!((order - 3.0).abs() < 0.3, "{order}");
        }
    }

    #[test]
    fn mean_pressure_shift() {
        let s = unit(2, 2);
        let mut x = s.interpolate(|p| [p[0] + 4.0, 0.0, 0.0, 0.0]);
        s.normalize_pressure(&mut x);
        assert!(s.mean_pressure(&x).abs() < 1e-14);
    }
}
