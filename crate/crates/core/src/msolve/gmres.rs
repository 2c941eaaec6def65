use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{dot, norm2, Real};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GmresSettings {
    pub tol_rel: f64,
    pub restart: usize,
    pub max_iter: usize,
}

impl Default for GmresSettings {
    fn default() -> Self {
        Self {
            tol_rel: 1e-4,
            restart: 30,
            max_iter: 200,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GmresStats {
    pub iterations: usize,
    pub rel_residual: f64,
    pub converged: bool,
}

/// Right-preconditioned restarted GMRES for `op(x) = b`, starting from `x`.
///
/// Returns an error only on stagnation (a full restart cycle without any
/// residual reduction).
pub fn gmres<T: Real>(
    op: impl Fn(&[T]) -> Vec<T>,
    prec: impl Fn(&[T]) -> Vec<T>,
    b: &[T],
    x: &mut [T],
    settings: &GmresSettings,
) -> Result<GmresStats> {
    let n = b.len();
    let bnorm = norm2(b).f64();
    let tol = T::c(settings.tol_rel * bnorm.max(f64::MIN_POSITIVE));
    let m = settings.restart.max(1);
    let mut total = 0;
    let mut r = residual(&op, b, x);
    let mut beta = norm2(&r);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = T::zero());
        return Ok(GmresStats {
            iterations: 0,
            rel_residual: 0.0,
            converged: true,
        });
    }
    loop {
        if beta <= tol {
            return Ok(GmresStats {
                iterations: total,
                rel_residual: beta.f64() / bnorm,
                converged: true,
            });
        }
        if total >= settings.max_iter {
            return Ok(GmresStats {
                iterations: total,
                rel_residual: beta.f64() / bnorm,
                converged: false,
            });
        }
        let beta_start = beta;
        let mut v: Vec<Vec<T>> = vec![r.iter().map(|&ri| ri / beta).collect()];
        let mut z: Vec<Vec<T>> = Vec::with_capacity(m);
        let mut hm = vec![vec![T::zero(); m]; m + 1];
        let mut cs = vec![T::zero(); m];
        let mut sn = vec![T::zero(); m];
        let mut g = vec![T::zero(); m + 1];
        g[0] = beta;
        let mut k = 0;
        while k < m && total < settings.max_iter {
            let zk = prec(&v[k]);
            let mut w = op(&zk);
            z.push(zk);
            for i in 0..=k {
                let h = dot(&w, &v[i]);
                hm[i][k] = h;
                for (wj, vj) in w.iter_mut().zip(&v[i]) {
                    *wj -= h * *vj;
                }
            }
            let hn = norm2(&w);
            hm[k + 1][k] = hn;
            for i in 0..k {
                let t = cs[i] * hm[i][k] + sn[i] * hm[i + 1][k];
                hm[i + 1][k] = -sn[i] * hm[i][k] + cs[i] * hm[i + 1][k];
                hm[i][k] = t;
            }
            let den = (hm[k][k] * hm[k][k] + hm[k + 1][k] * hm[k + 1][k]).sqrt();
            if den == T::zero() {
                cs[k] = T::one();
                sn[k] = T::zero();
            } else {
                cs[k] = hm[k][k] / den;
                sn[k] = hm[k + 1][k] / den;
            }
            hm[k][k] = cs[k] * hm[k][k] + sn[k] * hm[k + 1][k];
            hm[k + 1][k] = T::zero();
            g[k + 1] = -sn[k] * g[k];
            g[k] = cs[k] * g[k];
            total += 1;
            k += 1;
            if g[k].abs() <= tol || hn == T::zero() {
                break;
            }
            v.push(w.iter().map(|&wi| wi / hn).collect());
        }
        // back substitution
        let mut y = vec![T::zero(); k];
        for i in (0..k).rev() {
            let mut s = g[i];
            for j in i + 1..k {
                s -= hm[i][j] * y[j];
            }
            y[i] = if hm[i][i] == T::zero() { T::zero() } else { s / hm[i][i] };
        }
        for (j, yj) in y.iter().enumerate() {
            for (xi, zi) in x.iter_mut().zip(&z[j]) {
                *xi += *yj * *zi;
            }
        }
        r = residual(&op, b, x);
        beta = norm2(&r);
        if !(beta < beta_start) && beta > tol {
            return Err(Error::Stagnation {
                iterations: total,
                relative_residual: beta.f64() / bnorm,
            });
        }
        let _ = n;
    }
}

fn residual<T: Real>(op: &impl Fn(&[T]) -> Vec<T>, b: &[T], x: &[T]) -> Vec<T> {
    let ax = op(x);
    b.iter().zip(&ax).map(|(&bi, &ai)| bi - ai).collect()
}
