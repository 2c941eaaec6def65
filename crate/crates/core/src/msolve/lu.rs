use crate::scalar::Real;

/// Dense LU factorization with partial pivoting.
#[derive(Clone, Debug)]
pub struct DenseLu<T> {
    n: usize,
    lu: Vec<T>,
    piv: Vec<usize>,
    /// Set when a vanishing pivot forced a diagonal shift.
    pub regularized: bool,
}

impl<T: Real> DenseLu<T> {
    /// Factors the row-major `n×n` matrix `a`. If a pivot vanishes the
    /// factorization is repeated for `a + 1e-12·max|a|·I`.
    pub fn factor(a: Vec<T>, n: usize) -> Self {
        assert_eq!(a.len(), n * n);
        let scale = a.iter().fold(T::zero(), |m, v| m.max(v.abs())).max(T::min_positive_value());
        match Self::try_factor(a.clone(), n, scale) {
            Some(f) => f,
            None => {
                let mut shifted = a;
                let s = T::c(1e-12) * scale;
                for i in 0..n {
                    shifted[i * n + i] += s;
                }
                let mut f = Self::try_factor(shifted, n, T::zero()).unwrap_or_else(|| Self {
                    n,
                    lu: vec![T::zero(); n * n],
                    piv: (0..n).collect(),
                    regularized: true,
                });
                f.regularized = true;
                f
            }
        }
    }

    fn try_factor(mut a: Vec<T>, n: usize, scale: T) -> Option<Self> {
        let tiny = T::epsilon() * T::c(1e-2) * scale;
        let mut piv: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let mut p = k;
            let mut best = a[k * n + k].abs();
            for i in k + 1..n {
                let v = a[i * n + k].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if !(best > tiny) {
                return None;
            }
            if p != k {
                for j in 0..n {
                    a.swap(k * n + j, p * n + j);
                }
                piv.swap(k, p);
            }
            let inv = T::one() / a[k * n + k];
            for i in k + 1..n {
                let l = a[i * n + k] * inv;
                if l == T::zero() {
                    continue;
                }
                a[i * n + k] = l;
                let (top, bottom) = a.split_at_mut(i * n);
                let rk = &top[k * n + k + 1..k * n + n];
                let ri = &mut bottom[k + 1..n];
                for (x, &y) in ri.iter_mut().zip(rk) {
                    *x -= l * y;
                }
            }
        }
        Some(Self {
            n,
            lu: a,
            piv,
            regularized: false,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Solves in place.
    pub fn solve(&self, b: &mut [T]) {
        let n = self.n;
        let mut y: Vec<T> = self.piv.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let row = &self.lu[i * n..i * n + i];
            let s: T = row.iter().zip(&y[..i]).map(|(&l, &v)| l * v).sum();
            y[i] -= s;
        }
        for i in (0..n).rev() {
            let row = &self.lu[i * n + i + 1..(i + 1) * n];
            let s: T = row.iter().zip(&y[i + 1..]).map(|(&u, &v)| u * v).sum();
            y[i] = (y[i] - s) / self.lu[i * n + i];
        }
        b.copy_from_slice(&y);
    }

    /// Row-major explicit inverse.
    pub fn inverse(&self) -> Vec<T> {
        let n = self.n;
        let mut inv = vec![T::zero(); n * n];
        let mut e = vec![T::zero(); n];
        for j in 0..n {
            e.iter_mut().for_each(|v| *v = T::zero());
            e[j] = T::one();
            self.solve(&mut e);
            for i in 0..n {
                inv[i * n + j] = e[i];
            }
        }
        inv
    }
}
