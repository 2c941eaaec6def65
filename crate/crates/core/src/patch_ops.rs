//! Patch-local restriction `Q`, valence-averaged extension `L` and the
//! prediction pipeline `L ∘ N ∘ Q`.
//!
//! Network input rows are laid out as `[Q(x̃) | Q(r) | geometry]`, each
//! `Q` block node-major with components `(p, v_1, .., v_d)`. Output rows
//! hold velocities only, node-major `(v_1, .., v_d)`.

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mesh::{build_patches, n_dof_patch, n_geo, MeshHierarchy, Patch};
use crate::net::Mlp;
use crate::scalar::Real;

/// Input layout version stored with trained models.
pub const FEATURE_LAYOUT_VERSION: u32 = 1;

#[derive(Clone, Debug)]
pub struct PatchSet<T> {
    pub dim: usize,
    pub coarse_level: usize,
    pub j: usize,
    pub patches: Vec<Patch<T>>,
    /// Reciprocal patch valence per fine dof.
    pub mu: Vec<T>,
    n_fine_nodes: usize,
    /// For every fine node, the `(patch, local node)` pairs covering it.
    owner_ptr: Vec<usize>,
    owners: Vec<(u32, u32)>,
}

impl<T: Real> PatchSet<T> {
    pub fn new(h: &MeshHierarchy<T>, coarse: usize, j: usize) -> Result<Self> {
        let patches = build_patches(h, coarse, j)?;
        Ok(Self::from_patches(h.dim, coarse, j, patches, h.level(coarse + j).n_nodes()))
    }

    pub fn from_patches(dim: usize, coarse: usize, j: usize, patches: Vec<Patch<T>>, n_fine_nodes: usize) -> Self {
        let mut count = vec![0usize; n_fine_nodes + 1];
        for p in &patches {
            for &n in &p.nodes {
                count[n + 1] += 1;
            }
        }
        for i in 0..n_fine_nodes {
            count[i + 1] += count[i];
        }
        let owner_ptr = count.clone();
        let mut fill = count;
        let mut owners = vec![(0u32, 0u32); owner_ptr[n_fine_nodes]];
        for (pi, p) in patches.iter().enumerate() {
            for (li, &n) in p.nodes.iter().enumerate() {
                owners[fill[n]] = (pi as u32, li as u32);
                fill[n] += 1;
            }
        }
        let b = dim + 1;
        let mut mu = vec![T::zero(); n_fine_nodes * b];
        for n in 0..n_fine_nodes {
            let v = owner_ptr[n + 1] - owner_ptr[n];
            if v > 0 {
                let m = T::one() / T::from_usize_lossy(v);
                mu[n * b..(n + 1) * b].iter_mut().for_each(|x| *x = m);
            }
        }
        Self {
            dim,
            coarse_level: coarse,
            j,
            patches,
            mu,
            n_fine_nodes,
            owner_ptr,
            owners,
        }
    }

    pub fn n_patches(&self) -> usize {
        self.patches.len()
    }

    pub fn n_fine_dofs(&self) -> usize {
        self.n_fine_nodes * (self.dim + 1)
    }

    pub fn n_dof_patch(&self) -> usize {
        n_dof_patch(self.dim, self.j)
    }

    pub fn n_patch_nodes(&self) -> usize {
        self.n_dof_patch() / (self.dim + 1)
    }

    pub fn n_geo(&self) -> usize {
        n_geo(self.dim)
    }

    /// Network input width `2·N_dof^P + n_Geo`.
    pub fn n_in(&self) -> usize {
        2 * self.n_dof_patch() + self.n_geo()
    }

    /// Network output width `d·(2^J+1)^d`.
    pub fn n_out(&self) -> usize {
        self.dim * self.n_patch_nodes()
    }

    /// Number of patches owning each fine node.
    pub fn valence(&self, node: usize) -> usize {
        self.owner_ptr[node + 1] - self.owner_ptr[node]
    }

    fn check_len(&self, x: &[T], context: &'static str) -> Result<()> {
        if x.len() != self.n_fine_dofs() {
            return Err(Error::DimensionMismatch {
                context,
                expected: self.n_fine_dofs(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Gathers every patch's dofs of `x` into one row per patch.
    pub fn local_restrict(&self, x: &[T]) -> Result<Array2<T>> {
        self.check_len(x, "patch restriction")?;
        let w = self.n_dof_patch();
        let mut out = Array2::zeros((self.n_patches(), w));
        out.as_slice_mut()
            .unwrap()
            .par_chunks_mut(w)
            .zip(self.patches.par_iter())
            .for_each(|(row, p)| {
                for (r, &g) in row.iter_mut().zip(&p.local_to_global) {
                    *r = x[g];
                }
            });
        Ok(out)
    }

    /// Scatter-adds full patch rows (all components) and scales by `μ`.
    pub fn global_extend(&self, rows: ArrayView2<T>) -> Result<Vec<T>> {
        self.extend_with(rows, self.n_dof_patch(), 0)
    }

    /// Scatter-adds velocity-only rows; the pressure block stays zero.
    pub fn extend_velocity(&self, rows: ArrayView2<T>) -> Result<Vec<T>> {
        self.extend_with(rows, self.n_out(), 1)
    }

    fn extend_with(&self, rows: ArrayView2<T>, width: usize, first: usize) -> Result<Vec<T>> {
        if rows.dim() != (self.n_patches(), width) {
            return Err(Error::DimensionMismatch {
                context: "patch rows for extension",
                expected: self.n_patches() * width,
                got: rows.len(),
            });
        }
        let b = self.dim + 1;
        let per_node = b - first;
        let mut out = vec![T::zero(); self.n_fine_dofs()];
        out.par_chunks_mut(b).enumerate().for_each(|(n, dofs)| {
            let owners = &self.owners[self.owner_ptr[n]..self.owner_ptr[n + 1]];
            if owners.is_empty() {
                return;
            }
            let mu = T::one() / T::from_usize_lossy(owners.len());
            for c in first..b {
                let mut s = T::zero();
                for &(p, l) in owners {
                    s += rows[[p as usize, l as usize * per_node + c - first]];
                }
                dofs[c] = s * mu;
            }
        });
        Ok(out)
    }

    /// Velocity dofs of `x` per patch, in network output layout.
    pub fn velocity_rows(&self, x: &[T]) -> Result<Array2<T>> {
        self.check_len(x, "patch velocity rows")?;
        let d = self.dim;
        let b = d + 1;
        let w = self.n_out();
        let mut out = Array2::zeros((self.n_patches(), w));
        out.as_slice_mut()
            .unwrap()
            .par_chunks_mut(w)
            .zip(self.patches.par_iter())
            .for_each(|(row, p)| {
                for (k, &n) in p.nodes.iter().enumerate() {
                    for c in 0..d {
                        row[k * d + c] = x[n * b + 1 + c];
                    }
                }
            });
        Ok(out)
    }

    /// Rows `[Q(x̃) | Q(r) | geometry]`.
    pub fn network_input(&self, x_tilde: &[T], residual: &[T]) -> Result<Array2<T>> {
        self.check_len(x_tilde, "prolongated state")?;
        self.check_len(residual, "fine residual")?;
        let nd = self.n_dof_patch();
        let ng = self.n_geo();
        let w = self.n_in();
        let mut out = Array2::zeros((self.n_patches(), w));
        out.as_slice_mut()
            .unwrap()
            .par_chunks_mut(w)
            .zip(self.patches.par_iter())
            .for_each(|(row, p)| {
                for (k, &g) in p.local_to_global.iter().enumerate() {
                    row[k] = x_tilde[g];
                    row[nd + k] = residual[g];
                }
                row[2 * nd..2 * nd + ng].copy_from_slice(&p.geometry);
            });
        Ok(out)
    }

    pub fn check_model(&self, model: &Mlp<T>) -> Result<()> {
        if model.arch.n_in != self.n_in() || model.arch.n_out != self.n_out() {
            return Err(Error::ModelIncompatible(format!(
                "network maps {}→{}, patches of dimension {} with J = {} need {}→{}",
                model.arch.n_in,
                model.arch.n_out,
                self.dim,
                self.j,
                self.n_in(),
                self.n_out()
            )));
        }
        Ok(())
    }

    /// `d = L(N(Q(x̃), Q(r)))` with a zero pressure block.
    pub fn predict_correction(&self, model: &Mlp<T>, x_tilde: &[T], residual: &[T]) -> Result<Vec<T>> {
        self.check_model(model)?;
        let input = self.network_input(x_tilde, residual)?;
        let out = model.predict(input.view())?;
        self.extend_velocity(out.view())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_template_mesh, Template};
    use crate::net::{Activation, Arch};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn set(dim: usize, j: usize) -> PatchSet<f64> {
        let t = if dim == 2 {
            Template::UnitSquare { n: 2 }
        } else {
            Template::UnitCube { n: 1 }
        };
        let h = build_template_mesh::<f64>(&t).unwrap().refine_to(j + 1);
        PatchSet::new(&h, 0, j).unwrap()
    }

    #[test]
    fn widths() {
        assert_eq!(set(2, 1).n_in(), 64);
        assert_eq!(set(2, 1).n_out(), 18);
        assert_eq!(set(3, 1).n_in(), 240);
        assert_eq!(set(3, 1).n_out(), 81);
        assert_eq!(set(3, 2).n_in(), 1024);
        assert_eq!(set(3, 2).n_out(), 375);
    }

    #[test]
    fn restrict_of_index_vector_is_the_dof_table() {
        let s = set(2, 2);
        let x: Vec<f64> = (0..s.n_fine_dofs()).map(|i| i as f64).collect();
        let rows = s.local_restrict(&x).unwrap();
        for (row, p) in rows.outer_iter().zip(&s.patches) {
            for (v, &g) in row.iter().zip(&p.local_to_global) {
                assert_eq!(*v, g as f64);
            }
        }
    }

    #[test]
    fn extension_inverts_restriction() {
        for (d, j) in [(2, 1), (2, 2), (3, 1)] {
            let s = set(d, j);
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let x: Vec<f64> = (0..s.n_fine_dofs()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let y = s.global_extend(s.local_restrict(&x).unwrap().view()).unwrap();
            for (a, b) in x.iter().zip(&y) {
                assert!((a - b).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn shared_dof_is_averaged() {
        let s = set(2, 1);
        let (n, owners) = (0..s.n_fine_nodes)
            .map(|n| (n, s.valence(n)))
            .find(|&(_, v)| v == 2)
            .unwrap();
        assert_eq!(owners, 2);
        let (p, l) = s.owners[s.owner_ptr[n]];
        let mut rows = Array2::zeros((s.n_patches(), s.n_dof_patch()));
        rows[[p as usize, l as usize * 3 + 1]] = 3.0;
        let y = s.global_extend(rows.view()).unwrap();
        assert_eq!(y[n * 3 + 1], 1.5);
        assert_eq!(s.mu[n * 3], 0.5);
    }

    #[test]
    fn zero_model_predicts_zero() {
        let s = set(2, 1);
        let m = Mlp::zeros(Arch::new(s.n_in(), 8, 2, s.n_out()), Activation::Relu);
        let x = vec![1.0; s.n_fine_dofs()];
        let d = s.predict_correction(&m, &x, &x).unwrap();
        assert!(d.iter().all(|&v| v == 0.0));
        let bad = Mlp::<f64>::zeros(Arch::new(s.n_in() + 1, 8, 2, s.n_out()), Activation::Relu);
        assert!(matches!(s.predict_correction(&bad, &x, &x), Err(Error::ModelIncompatible(_))));
    }

    #[test]
    fn zero_fields_leave_geometry() {
        let s = set(3, 1);
        let z = vec![0.0; s.n_fine_dofs()];
        let rows = s.network_input(&z, &z).unwrap();
        for (row, p) in rows.outer_iter().zip(&s.patches) {
            assert!(row.iter().take(2 * s.n_dof_patch()).all(|&v| v == 0.0));
            assert_eq!(row.iter().skip(2 * s.n_dof_patch()).cloned().collect::<Vec<_>>(), p.geometry);
        }
    }
}
