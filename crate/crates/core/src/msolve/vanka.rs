use rayon::prelude::*;

use super::lu::DenseLu;
use crate::scalar::{dot, Real};
use crate::sparse::BlockSparse;

/// Cell-wise Vanka smoother with Jacobi coupling: every local problem is
/// solved against the defect of the sweep-start iterate and the updates
/// are averaged over the cells sharing a dof.
#[derive(Clone, Debug)]
pub struct Vanka<T> {
    /// Row-major inverses of the local blocks, `nl²` entries per cell.
    inverses: Vec<T>,
    nl: usize,
    inv_count: Vec<T>,
    pub damping: T,
    /// Number of local blocks that needed a diagonal shift.
    pub regularized: usize,
}

impl<T: Real> Vanka<T> {
    pub fn new(a: &BlockSparse<T>, damping: T) -> Self {
        let p = &a.pattern;
        let nl = p.n_local * a.b;
        let blocks: Vec<(Vec<T>, bool)> = (0..p.n_cells())
            .into_par_iter()
            .map(|c| {
                let mut loc = vec![T::zero(); nl * nl];
                a.gather_cell(c, &mut loc);
                let lu = DenseLu::factor(loc, nl);
                (lu.inverse(), lu.regularized)
            })
            .collect();
        let mut count = vec![0usize; p.n];
        for &n in &p.cell_nodes {
            count[n] += 1;
        }
        let inv_count = count
            .iter()
            .flat_map(|&c| std::iter::repeat(T::one() / T::from_usize_lossy(c.max(1))).take(a.b))
            .collect();
        let regularized = blocks.iter().filter(|b| b.1).count();
        Self {
            inverses: blocks.into_iter().flat_map(|b| b.0).collect(),
            nl,
            inv_count,
            damping,
            regularized,
        }
    }

    /// Size of the dense cell-local systems.
    pub fn block_size(&self) -> usize {
        self.nl
    }

    /// One sweep on `A x = b`.
    pub fn sweep(&self, a: &BlockSparse<T>, x: &mut [T], b: &[T]) {
        let r = a.residual(b, x);
        let p = &a.pattern;
        let bs = a.b;
        let nl = self.nl;
        let mut locals = vec![T::zero(); p.n_cells() * nl];
        locals.par_chunks_mut(nl).enumerate().for_each(|(c, out)| {
            let mut loc = Vec::with_capacity(nl);
            for &n in p.cell(c) {
                loc.extend_from_slice(&r[n * bs..(n + 1) * bs]);
            }
            let inv = &self.inverses[c * nl * nl..(c + 1) * nl * nl];
            for (o, row) in out.iter_mut().zip(inv.chunks_exact(nl)) {
                *o = dot(row, &loc);
            }
        });
        let mut upd = vec![T::zero(); x.len()];
        for (c, loc) in locals.chunks_exact(nl).enumerate() {
            for (i, &n) in p.cell(c).iter().enumerate() {
                for k in 0..bs {
                    upd[n * bs + k] += loc[i * bs + k];
                }
            }
        }
        for ((xi, u), s) in x.iter_mut().zip(&upd).zip(&self.inv_count) {
            *xi += self.damping * *u * *s;
        }
    }
}
