//! Block compressed sparse row matrices with one `b×b` block per pair of
//! nodes sharing a cell.

use std::sync::Arc;

use rayon::prelude::*;

use crate::scalar::Real;

/// Node-to-node sparsity pattern plus per-cell block positions.
#[derive(Clone, Debug)]
pub struct BlockPattern {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    /// Nodes per cell.
    pub n_local: usize,
    /// Cell to node map, `n_local` entries per cell.
    pub cell_nodes: Vec<usize>,
    /// Block index of local pair `(i, j)` at `c*n_local² + i*n_local + j`.
    pub cell_pos: Vec<usize>,
}

impl BlockPattern {
    pub fn from_cells(n: usize, n_local: usize, cell_nodes: &[usize]) -> Self {
        let n_cells = cell_nodes.len() / n_local;
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
        for c in 0..n_cells {
            let nodes = &cell_nodes[c * n_local..(c + 1) * n_local];
            for &i in nodes {
                adj[i].extend_from_slice(nodes);
            }
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        row_ptr.push(0);
        let mut cols = Vec::new();
        for a in adj.iter_mut() {
            a.sort_unstable();
            a.dedup();
            cols.extend_from_slice(a);
            row_ptr.push(cols.len());
        }
        let mut p = Self {
            n,
            row_ptr,
            cols,
            n_local,
            cell_nodes: cell_nodes.to_vec(),
            cell_pos: Vec::with_capacity(n_cells * n_local * n_local),
        };
        for c in 0..n_cells {
            for i in 0..n_local {
                for j in 0..n_local {
                    let (gi, gj) = (cell_nodes[c * n_local + i], cell_nodes[c * n_local + j]);
                    let k = p.find(gi, gj).expect("pattern contains cell couplings");
                    p.cell_pos.push(k);
                }
            }
        }
        p
    }

    pub fn nnz_blocks(&self) -> usize {
        self.cols.len()
    }

    pub fn n_cells(&self) -> usize {
        self.cell_nodes.len() / self.n_local
    }

    pub fn cell(&self, c: usize) -> &[usize] {
        &self.cell_nodes[c * self.n_local..(c + 1) * self.n_local]
    }

    pub fn find(&self, i: usize, j: usize) -> Option<usize> {
        let row = &self.cols[self.row_ptr[i]..self.row_ptr[i + 1]];
        row.binary_search(&j).ok().map(|k| self.row_ptr[i] + k)
    }
}

#[derive(Clone, Debug)]
pub struct BlockSparse<T> {
    pub pattern: Arc<BlockPattern>,
    pub b: usize,
    pub vals: Vec<T>,
}

impl<T: Real> BlockSparse<T> {
    pub fn zeros(pattern: Arc<BlockPattern>, b: usize) -> Self {
        let n = pattern.nnz_blocks() * b * b;
        Self {
            pattern,
            b,
            vals: vec![T::zero(); n],
        }
    }

    pub fn n_rows(&self) -> usize {
        self.pattern.n * self.b
    }

    pub fn block(&self, k: usize) -> &[T] {
        let bb = self.b * self.b;
        &self.vals[k * bb..(k + 1) * bb]
    }

    pub fn block_mut(&mut self, k: usize) -> &mut [T] {
        let bb = self.b * self.b;
        &mut self.vals[k * bb..(k + 1) * bb]
    }

    /// Adds a dense cell matrix, ordered node-major with `b` components.
    pub fn add_cell(&mut self, c: usize, local: &[T]) {
        let nl = self.pattern.n_local;
        let b = self.b;
        let stride = nl * b;
        for i in 0..nl {
            for j in 0..nl {
                let k = self.pattern.cell_pos[c * nl * nl + i * nl + j];
                let blk = &mut self.vals[k * b * b..(k + 1) * b * b];
                for r in 0..b {
                    for s in 0..b {
                        blk[r * b + s] += local[(i * b + r) * stride + j * b + s];
                    }
                }
            }
        }
    }

    /// Dense cell matrix gathered from the global matrix.
    pub fn gather_cell(&self, c: usize, out: &mut [T]) {
        let nl = self.pattern.n_local;
        let b = self.b;
        let stride = nl * b;
        for i in 0..nl {
            for j in 0..nl {
                let k = self.pattern.cell_pos[c * nl * nl + i * nl + j];
                let blk = self.block(k);
                for r in 0..b {
                    for s in 0..b {
                        out[(i * b + r) * stride + j * b + s] = blk[r * b + s];
                    }
                }
            }
        }
    }

    pub fn matvec(&self, x: &[T], y: &mut [T]) {
        match self.b {
            1 => self.matvec_fixed::<1>(x, y),
            3 => self.matvec_fixed::<3>(x, y),
            4 => self.matvec_fixed::<4>(x, y),
            _ => self.matvec_any(x, y),
        }
    }

    fn matvec_fixed<const B: usize>(&self, x: &[T], y: &mut [T]) {
        let p = &self.pattern;
        y.par_chunks_mut(B).enumerate().for_each(|(i, yi)| {
            let mut acc = [T::zero(); B];
            let (k0, k1) = (p.row_ptr[i], p.row_ptr[i + 1]);
            let blocks = self.vals[k0 * B * B..k1 * B * B].chunks_exact(B * B);
            for (&j, blk) in p.cols[k0..k1].iter().zip(blocks) {
                let xj: &[T; B] = x[j * B..(j + 1) * B].try_into().unwrap();
                for (r, a) in acc.iter_mut().enumerate() {
                    let row: &[T; B] = blk[r * B..(r + 1) * B].try_into().unwrap();
                    for c in 0..B {
                        *a += row[c] * xj[c];
                    }
                }
            }
            yi.copy_from_slice(&acc);
        });
    }

    fn matvec_any(&self, x: &[T], y: &mut [T]) {
        let b = self.b;
        let p = &self.pattern;
        y.par_chunks_mut(b).enumerate().for_each(|(i, yi)| {
            yi.iter_mut().for_each(|v| *v = T::zero());
            for k in p.row_ptr[i]..p.row_ptr[i + 1] {
                let j = p.cols[k];
                let blk = &self.vals[k * b * b..(k + 1) * b * b];
                let xj = &x[j * b..(j + 1) * b];
                for r in 0..b {
                    let mut s = T::zero();
                    for c in 0..b {
                        s += blk[r * b + c] * xj[c];
                    }
                    yi[r] += s;
                }
            }
        });
    }

    pub fn apply(&self, x: &[T]) -> Vec<T> {
        let mut y = vec![T::zero(); self.n_rows()];
        self.matvec(x, &mut y);
        y
    }

    /// `b − A x`.
    pub fn residual(&self, rhs: &[T], x: &[T]) -> Vec<T> {
        let mut y = self.apply(x);
        for (yi, &bi) in y.iter_mut().zip(rhs) {
            *yi = bi - *yi;
        }
        y
    }

    /// Replaces constrained rows and columns by those of the identity.
    pub fn condense(&mut self, mask: &[bool]) {
        let b = self.b;
        let p = self.pattern.clone();
        for i in 0..p.n {
            for k in p.row_ptr[i]..p.row_ptr[i + 1] {
                let j = p.cols[k];
                let blk = &mut self.vals[k * b * b..(k + 1) * b * b];
                for r in 0..b {
                    for s in 0..b {
                        let (gr, gs) = (i * b + r, j * b + s);
                        if mask[gr] || mask[gs] {
                            blk[r * b + s] = if gr == gs { T::one() } else { T::zero() };
                        }
                    }
                }
            }
        }
    }

    pub fn to_dense(&self) -> Vec<T> {
        let n = self.n_rows();
        let b = self.b;
        let mut d = vec![T::zero(); n * n];
        let p = &self.pattern;
        for i in 0..p.n {
            for k in p.row_ptr[i]..p.row_ptr[i + 1] {
                let j = p.cols[k];
                for r in 0..b {
                    for s in 0..b {
                        d[(i * b + r) * n + j * b + s] = self.vals[(k * b + r) * b + s];
                    }
                }
            }
        }
        d
    }

    pub fn scale(&mut self, s: T) {
        self.vals.iter_mut().for_each(|v| *v *= s);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_cells() -> Arc<BlockPattern> {
        // 1D chain of two 2-node cells: 0-1, 1-2
        Arc::new(BlockPattern::from_cells(3, 2, &[0, 1, 1, 2]))
    }

    #[test]
    fn pattern_is_cell_coupling() {
        let p = two_cells();
        assert_eq!(p.nnz_blocks(), 7);
        assert!(p.find(0, 2).is_none());
        assert!(p.find(1, 2).is_some());
    }

    #[test]
    fn add_gather_and_matvec() {
        let p = two_cells();
        let mut a = BlockSparse::<f64>::zeros(p, 2);
        let local: Vec<f64> = (0..16).map(|v| v as f64).collect();
        a.add_cell(0, &local);
        a.add_cell(1, &local);
        let mut g = vec![0.0; 16];
        a.gather_cell(0, &mut g);
        assert_eq!(g[0], 0.0);
        // entry (node 1, node 1) accumulates from both cells
        assert_eq!(g[2 * 4 + 2], 10.0 + 0.0);
        let dense = a.to_dense();
        let x: Vec<f64> = (0..6).map(|v| (v as f64).sin()).collect();
        let y = a.apply(&x);
        for r in 0..6 {
            let want: f64 = (0..6).map(|c| dense[r * 6 + c] * x[c]).sum();
            assert!((y[r] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn condense_makes_identity_rows() {
        let p = two_cells();
        let mut a = BlockSparse::<f64>::zeros(p, 1);
        a.add_cell(0, &[2.0, -1.0, -1.0, 2.0]);
        a.add_cell(1, &[2.0, -1.0, -1.0, 2.0]);
        a.condense(&[true, false, false]);
        let d = a.to_dense();
        assert_eq!(&d[0..3], &[1.0, 0.0, 0.0]);
        assert_eq!(d[3], 0.0);
        assert_eq!(d[4], 4.0);
    }
}
