use crate::mesh::MeshHierarchy;
use crate::reference::{pow2, pow3, q2_index, q2_multi, q2_values, vertex_multi};
use crate::scalar::Real;

/// Nodal prolongation from level `l` to `l+1`, stored row-wise (fine
/// nodes). The same scalar matrix acts on every component; restriction is
/// its transpose.
#[derive(Clone, Debug)]
pub struct Prolongation<T> {
    pub n_coarse: usize,
    pub n_fine: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<T>,
}

impl<T: Real> Prolongation<T> {
    /// Builds the prolongation from `coarse` to `coarse + 1`.
    pub fn new(h: &MeshHierarchy<T>, coarse: usize) -> Self {
        let cl = h.level(coarse);
        let fl = h.level(coarse + 1);
        let d = h.dim;
        let nv = pow2(d);
        let nq = pow3(d);
        let mut rows: Vec<Option<Vec<(usize, T)>>> = vec![None; fl.n_nodes()];
        let mut vals = [T::zero(); 27];
        let quarter = T::c(0.25);
        for c in 0..cl.n_cells() {
            let cn = cl.cell_nodes(c);
            for ch in 0..nv {
                let a = vertex_multi(ch, d);
                let fn_ = fl.cell_nodes(c * nv + ch);
                for q in 0..nq {
                    let n = fn_[q];
                    if rows[n].is_some() {
                        continue;
                    }
                    let m = q2_multi(q, d);
                    let fm = [2 * a[0] + m[0], 2 * a[1] + m[1], 2 * a[2] + m[2]];
                    let row = if (0..d).all(|ax| fm[ax] % 2 == 0) {
                        vec![(cn[q2_index([fm[0] / 2, fm[1] / 2, fm[2] / 2], d)], T::one())]
                    } else {
                        let mut xi = [T::zero(); 3];
                        for ax in 0..d {
                            xi[ax] = T::from_usize_lossy(fm[ax]) * quarter;
                        }
                        q2_values(&xi, d, &mut vals[..nq]);
                        (0..nq)
                            .filter(|&i| vals[i] != T::zero())
                            .map(|i| (cn[i], vals[i]))
                            .collect()
                    };
                    rows[n] = Some(row);
                }
            }
        }
        let mut row_ptr = vec![0];
        let mut cols = Vec::new();
        let mut v = Vec::new();
        for r in rows {
            for (c, w) in r.expect("every fine node lies in a coarse cell") {
                cols.push(c);
                v.push(w);
            }
            row_ptr.push(cols.len());
        }
        Self {
            n_coarse: cl.n_nodes(),
            n_fine: fl.n_nodes(),
            row_ptr,
            cols,
            vals: v,
        }
    }

    /// Prolongates a vector with `ncomp` components per node.
    pub fn prolongate(&self, x: &[T], ncomp: usize) -> Vec<T> {
        let mut out = vec![T::zero(); self.n_fine * ncomp];
        for r in 0..self.n_fine {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                let (c, w) = (self.cols[k], self.vals[k]);
                for comp in 0..ncomp {
                    out[r * ncomp + comp] += w * x[c * ncomp + comp];
                }
            }
        }
        out
    }

    /// Applies the transpose: restricts a dual (right-hand side) vector.
    pub fn restrict(&self, b: &[T], ncomp: usize) -> Vec<T> {
        let mut out = vec![T::zero(); self.n_coarse * ncomp];
        for r in 0..self.n_fine {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                let (c, w) = (self.cols[k], self.vals[k]);
                for comp in 0..ncomp {
                    out[c * ncomp + comp] += w * b[r * ncomp + comp];
                }
            }
        }
        out
    }

    /// Injection: fine values at coarse nodes (node ids are nested).
    pub fn inject(&self, x: &[T], ncomp: usize) -> Vec<T> {
        x[..self.n_coarse * ncomp].to_vec()
    }
}

/// Chain of prolongations `l → l+1 → … → l+j`.
#[derive(Clone, Debug)]
pub struct TransferChain<T> {
    pub steps: Vec<Prolongation<T>>,
}

impl<T: Real> TransferChain<T> {
    pub fn new(h: &MeshHierarchy<T>, from: usize, to: usize) -> Self {
        Self {
            steps: (from..to).map(|l| Prolongation::new(h, l)).collect(),
        }
    }

    pub fn prolongate(&self, x: &[T], ncomp: usize) -> Vec<T> {
        let mut v = x.to_vec();
        for p in &self.steps {
            v = p.prolongate(&v, ncomp);
        }
        v
    }

    pub fn restrict(&self, b: &[T], ncomp: usize) -> Vec<T> {
        let mut v = b.to_vec();
        for p in self.steps.iter().rev() {
            v = p.restrict(&v, ncomp);
        }
        v
    }
}
