//! Reference cell `[0,1]^d`: tensor-product Q2/Q1 Lagrange bases and Gauss rules.
//!
//! Local numbering is lexicographic in every dimension. Q2 node `(i,j,k)`
//! with `i,j,k ∈ {0,1,2}` has index `i + 3j + 9k`; vertex `(a,b,c)` with
//! `a,b,c ∈ {0,1}` has index `a + 2b + 4c` and coincides with Q2 node
//! `(2a,2b,2c)`.

use crate::scalar::Real;

pub fn pow3(d: usize) -> usize {
    3usize.pow(d as u32)
}

pub fn pow2(d: usize) -> usize {
    1usize << d
}

/// Multi-index of a Q2 node.
#[inline]
pub fn q2_multi(idx: usize, d: usize) -> [usize; 3] {
    let mut m = [0; 3];
    let mut r = idx;
    for item in m.iter_mut().take(d) {
        *item = r % 3;
        r /= 3;
    }
    m
}

#[inline]
pub fn q2_index(m: [usize; 3], d: usize) -> usize {
    let mut idx = 0;
    for a in (0..d).rev() {
        idx = idx * 3 + m[a];
    }
    idx
}

#[inline]
pub fn vertex_multi(idx: usize, d: usize) -> [usize; 3] {
    let mut m = [0; 3];
    for (a, item) in m.iter_mut().enumerate().take(d) {
        *item = (idx >> a) & 1;
    }
    m
}

/// Q2 index of the node sitting on vertex `v`.
#[inline]
pub fn vertex_to_q2(v: usize, d: usize) -> usize {
    let m = vertex_multi(v, d);
    q2_index([2 * m[0], 2 * m[1], 2 * m[2]], d)
}

/// Q2 index of local node `m` that is a vertex, if it is one.
pub fn q2_to_vertex(idx: usize, d: usize) -> Option<usize> {
    let m = q2_multi(idx, d);
    if m.iter().take(d).all(|&c| c != 1) {
        Some((0..d).map(|a| (m[a] / 2) << a).sum())
    } else {
        None
    }
}

/// Reference coordinate of a Q2 node.
pub fn q2_node_ref<T: Real>(idx: usize, d: usize) -> [T; 3] {
    let m = q2_multi(idx, d);
    let h = T::c(0.5);
    [
        T::from_usize_lossy(m[0]) * h,
        T::from_usize_lossy(m[1]) * h,
        T::from_usize_lossy(m[2]) * h,
    ]
}

#[inline]
pub fn q2_1d<T: Real>(i: usize, s: T) -> T {
    let h = T::c(0.5);
    let one = T::one();
    match i {
        0 => T::c(2.0) * (s - h) * (s - one),
        1 => T::c(-4.0) * s * (s - one),
        _ => T::c(2.0) * s * (s - h),
    }
}

#[inline]
pub fn q2_1d_deriv<T: Real>(i: usize, s: T) -> T {
    match i {
        0 => T::c(4.0) * s - T::c(3.0),
        1 => T::c(-8.0) * s + T::c(4.0),
        _ => T::c(4.0) * s - T::one(),
    }
}

#[inline]
pub fn q1_1d<T: Real>(a: usize, s: T) -> T {
    if a == 0 {
        T::one() - s
    } else {
        s
    }
}

#[inline]
pub fn q1_1d_deriv<T: Real>(a: usize) -> T {
    if a == 0 {
        -T::one()
    } else {
        T::one()
    }
}

/// Values of all `3^d` Q2 basis functions at `xi`.
pub fn q2_values<T: Real>(xi: &[T; 3], d: usize, out: &mut [T]) {
    for (idx, o) in out.iter_mut().enumerate().take(pow3(d)) {
        let m = q2_multi(idx, d);
        let mut v = T::one();
        for a in 0..d {
            v *= q2_1d(m[a], xi[a]);
        }
        *o = v;
    }
}

/// Reference gradients of all Q2 basis functions, `out[idx][a]`.
pub fn q2_grads<T: Real>(xi: &[T; 3], d: usize, out: &mut [[T; 3]]) {
    for (idx, o) in out.iter_mut().enumerate().take(pow3(d)) {
        let m = q2_multi(idx, d);
        for a in 0..d {
            let mut g = T::one();
            for b in 0..d {
                g *= if a == b {
                    q2_1d_deriv(m[b], xi[b])
                } else {
                    q2_1d(m[b], xi[b])
                };
            }
            o[a] = g;
        }
        for item in o.iter_mut().skip(d) {
            *item = T::zero();
        }
    }
}

pub fn q1_values<T: Real>(xi: &[T; 3], d: usize, out: &mut [T]) {
    for (idx, o) in out.iter_mut().enumerate().take(pow2(d)) {
        let m = vertex_multi(idx, d);
        let mut v = T::one();
        for a in 0..d {
            v *= q1_1d(m[a], xi[a]);
        }
        *o = v;
    }
}

pub fn q1_grads<T: Real>(xi: &[T; 3], d: usize, out: &mut [[T; 3]]) {
    for (idx, o) in out.iter_mut().enumerate().take(pow2(d)) {
        let m = vertex_multi(idx, d);
        for a in 0..d {
            let mut g = T::one();
            for b in 0..d {
                g *= if a == b {
                    q1_1d_deriv(m[b])
                } else {
                    q1_1d(m[b], xi[b])
                };
            }
            o[a] = g;
        }
        for item in o.iter_mut().skip(d) {
            *item = T::zero();
        }
    }
}

/// Evaluates the isoparametric Q2 map of a cell with geometry nodes `geo`.
pub fn map_point<T: Real>(geo: &[[T; 3]], xi: &[T; 3], d: usize) -> [T; 3] {
    let n = pow3(d);
    let mut vals = [T::zero(); 27];
    q2_values(xi, d, &mut vals[..n]);
    let mut p = [T::zero(); 3];
    for (g, &v) in geo.iter().zip(&vals[..n]) {
        for a in 0..3 {
            p[a] += v * g[a];
        }
    }
    p
}

/// Jacobian `J[a][b] = ∂x_a/∂ξ_b` of the Q2 map.
pub fn map_jacobian<T: Real>(geo: &[[T; 3]], xi: &[T; 3], d: usize) -> [[T; 3]; 3] {
    let n = pow3(d);
    let mut grads = [[T::zero(); 3]; 27];
    q2_grads(xi, d, &mut grads[..n]);
    let mut j = [[T::zero(); 3]; 3];
    for (g, gr) in geo.iter().zip(&grads[..n]) {
        for a in 0..d {
            for b in 0..d {
                j[a][b] += g[a] * gr[b];
            }
        }
    }
    j
}

pub fn det<T: Real>(j: &[[T; 3]; 3], d: usize) -> T {
    if d == 2 {
        j[0][0] * j[1][1] - j[0][1] * j[1][0]
    } else {
        j[0][0] * (j[1][1] * j[2][2] - j[1][2] * j[2][1])
            - j[0][1] * (j[1][0] * j[2][2] - j[1][2] * j[2][0])
            + j[0][2] * (j[1][0] * j[2][1] - j[1][1] * j[2][0])
    }
}

/// Inverse of a 2x2 or 3x3 Jacobian together with its determinant.
pub fn inverse<T: Real>(j: &[[T; 3]; 3], d: usize) -> ([[T; 3]; 3], T) {
    let det = det(j, d);
    let mut inv = [[T::zero(); 3]; 3];
    if d == 2 {
        inv[0][0] = j[1][1] / det;
        inv[0][1] = -j[0][1] / det;
        inv[1][0] = -j[1][0] / det;
        inv[1][1] = j[0][0] / det;
    } else {
        inv[0][0] = (j[1][1] * j[2][2] - j[1][2] * j[2][1]) / det;
        inv[0][1] = (j[0][2] * j[2][1] - j[0][1] * j[2][2]) / det;
        inv[0][2] = (j[0][1] * j[1][2] - j[0][2] * j[1][1]) / det;
        inv[1][0] = (j[1][2] * j[2][0] - j[1][0] * j[2][2]) / det;
        inv[1][1] = (j[0][0] * j[2][2] - j[0][2] * j[2][0]) / det;
        inv[1][2] = (j[0][2] * j[1][0] - j[0][0] * j[1][2]) / det;
        inv[2][0] = (j[1][0] * j[2][1] - j[1][1] * j[2][0]) / det;
        inv[2][1] = (j[0][1] * j[2][0] - j[0][0] * j[2][1]) / det;
        inv[2][2] = (j[0][0] * j[1][1] - j[0][1] * j[1][0]) / det;
    }
    (inv, det)
}

/// Gauss-Legendre points and weights on `[0,1]`.
pub fn gauss_1d<T: Real>(n: usize) -> (Vec<T>, Vec<T>) {
    let (x, w): (&[f64], &[f64]) = match n {
        1 => (&[0.0], &[2.0]),
        2 => (&[-0.577_350_269_189_625_8, 0.577_350_269_189_625_8], &[1.0, 1.0]),
        3 => (
            &[-0.774_596_669_241_483_4, 0.0, 0.774_596_669_241_483_4],
            &[5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0],
        ),
        4 => (
            &[
                -0.861_136_311_594_052_6,
                -0.339_981_043_584_856_3,
                0.339_981_043_584_856_3,
                0.861_136_311_594_052_6,
            ],
            &[
                0.347_854_845_137_453_9,
                0.652_145_154_862_546_1,
                0.652_145_154_862_546_1,
                0.347_854_845_137_453_9,
            ],
        ),
        5 => (
            &[
                -0.906_179_845_938_664,
                -0.538_469_310_105_683_1,
                0.0,
                0.538_469_310_105_683_1,
                0.906_179_845_938_664,
            ],
            &[
                0.236_926_885_056_189_1,
                0.478_628_670_499_366_5,
                0.568_888_888_888_888_9,
                0.478_628_670_499_366_5,
                0.236_926_885_056_189_1,
            ],
        ),
        _ => (
            &[
                -0.932_469_514_203_152,
                -0.661_209_386_466_264_5,
                -0.238_619_186_083_196_9,
                0.238_619_186_083_196_9,
                0.661_209_386_466_264_5,
                0.932_469_514_203_152,
            ],
            &[
                0.171_324_492_379_170_3,
                0.360_761_573_048_138_6,
                0.467_913_934_572_691,
                0.467_913_934_572_691,
                0.360_761_573_048_138_6,
                0.171_324_492_379_170_3,
            ],
        ),
    };
    (
        x.iter().map(|&v| T::c(0.5 * (v + 1.0))).collect(),
        w.iter().map(|&v| T::c(0.5 * v)).collect(),
    )
}

/// Tensor Gauss rule on `[0,1]^d` with `n` points per direction.
pub fn gauss_tensor<T: Real>(n: usize, d: usize) -> (Vec<[T; 3]>, Vec<T>) {
    let (x, w) = gauss_1d::<T>(n);
    let total = n.pow(d as u32);
    let mut pts = Vec::with_capacity(total);
    let mut wts = Vec::with_capacity(total);
    for q in 0..total {
        let mut p = [T::zero(); 3];
        let mut wt = T::one();
        let mut r = q;
        for item in p.iter_mut().take(d) {
            let i = r % n;
            r /= n;
            *item = x[i];
            wt *= w[i];
        }
        pts.push(p);
        wts.push(wt);
    }
    (pts, wts)
}
