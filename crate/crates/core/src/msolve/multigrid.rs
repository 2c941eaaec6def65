use serde::{Deserialize, Serialize};

use super::lu::DenseLu;
use super::vanka::Vanka;
use crate::scalar::Real;
use crate::space::Prolongation;
use crate::sparse::BlockSparse;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MgSettings {
    pub pre_smooth: usize,
    pub post_smooth: usize,
    pub vanka_damping: f64,
    pub cycles_per_application: usize,
}

impl Default for MgSettings {
    fn default() -> Self {
        Self {
            pre_smooth: 6,
            post_smooth: 6,
            vanka_damping: 0.7,
            cycles_per_application: 1,
        }
    }
}

pub struct MgLevel<T> {
    pub matrix: BlockSparse<T>,
    pub mask: Vec<bool>,
    smoother: Option<Vanka<T>>,
}

/// Geometric multigrid V-cycle over levels `0..=top`; level 0 is solved
/// with a dense LU factorization.
pub struct Multigrid<T> {
    pub levels: Vec<MgLevel<T>>,
    /// Block systems whose pressure (component 0) is defined up to a
    /// constant: defects are made compatible on every level.
    floating: bool,
    transfers: Vec<Prolongation<T>>,
    coarse: DenseLu<T>,
    pub settings: MgSettings,
}

impl<T: Real> Multigrid<T> {
    /// `matrices[l]` acts on level `l`; `transfers[l]` maps `l → l+1`.
    pub fn new(
        matrices: Vec<(BlockSparse<T>, Vec<bool>)>,
        transfers: Vec<Prolongation<T>>,
        settings: MgSettings,
        floating: bool,
    ) -> Self {
        assert_eq!(matrices.len(), transfers.len() + 1);
        let n0 = matrices[0].0.n_rows();
        let mut dense = matrices[0].0.to_dense();
        if floating {
            // fix the pressure constant through the first pressure dof
            for j in 0..n0 {
                dense[j] = T::zero();
                dense[j * n0] = T::zero();
            }
            dense[0] = T::one();
        }
        let coarse = DenseLu::factor(dense, n0);
        let damping = T::c(settings.vanka_damping);
        let levels = matrices
            .into_iter()
            .enumerate()
            .map(|(l, (matrix, mask))| {
                let smoother = (l > 0).then(|| Vanka::new(&matrix, damping));
                MgLevel {
                    matrix,
                    mask,
                    smoother,
                }
            })
            .collect();
        Self {
            levels,
            floating,
            transfers,
            coarse,
            settings,
        }
    }

    pub fn top(&self) -> usize {
        self.levels.len() - 1
    }

    /// Total number of regularized local or coarse factorizations.
    pub fn regularized(&self) -> usize {
        usize::from(self.coarse.regularized)
            + self
                .levels
                .iter()
                .filter_map(|l| l.smoother.as_ref())
                .map(|s| s.regularized)
                .sum::<usize>()
    }

    pub fn vcycle(&self, l: usize, x: &mut [T], b: &[T]) {
        if l == 0 {
            let mut y = b.to_vec();
            if self.floating {
                self.make_compatible(&mut y, self.levels[0].matrix.b);
                y[0] = T::zero();
            }
            self.coarse.solve(&mut y);
            x.copy_from_slice(&y);
            return;
        }
        let lev = &self.levels[l];
        let sm = lev.smoother.as_ref().unwrap();
        for _ in 0..self.settings.pre_smooth {
            sm.sweep(&lev.matrix, x, b);
        }
        let ncomp = lev.matrix.b;
        let r = lev.matrix.residual(b, x);
        let tr = &self.transfers[l - 1];
        let mut rc = tr.restrict(&r, ncomp);
        for (v, &m) in rc.iter_mut().zip(&self.levels[l - 1].mask) {
            if m {
                *v = T::zero();
            }
        }
        if self.floating {
            self.make_compatible(&mut rc, ncomp);
        }
        let mut ec = vec![T::zero(); rc.len()];
        self.vcycle(l - 1, &mut ec, &rc);
        let ef = tr.prolongate(&ec, ncomp);
        for ((xi, e), &m) in x.iter_mut().zip(&ef).zip(&lev.mask) {
            if !m {
                *xi += *e;
            }
        }
        for _ in 0..self.settings.post_smooth {
            sm.sweep(&lev.matrix, x, b);
        }
    }

    fn make_compatible(&self, r: &mut [T], ncomp: usize) {
        let n = r.len() / ncomp;
        let s: T = r.iter().step_by(ncomp).copied().sum();
        let m = s / T::from_usize_lossy(n);
        r.iter_mut().step_by(ncomp).for_each(|v| *v -= m);
    }

    /// Preconditioner action: cycles on the top level from a zero guess.
    pub fn apply(&self, r: &[T]) -> Vec<T> {
        let mut z = vec![T::zero(); r.len()];
        for _ in 0..self.settings.cycles_per_application.max(1) {
            self.vcycle(self.top(), &mut z, r);
        }
        z
    }
}
