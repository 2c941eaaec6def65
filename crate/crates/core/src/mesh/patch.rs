//! Patches: the level-`L+1` children of coarse cells, viewed on level
//! `L+J`, together with coarse-cell geometry features.

use super::{distance, MeshHierarchy, MeshLevel};
use crate::error::{Error, Result};
use crate::reference::{pow2, pow3, vertex_multi};
use crate::scalar::Real;

/// One patch per level-`L+1` cell.
#[derive(Clone, Debug)]
pub struct Patch<T> {
    /// Cell on level `L` that contains the patch.
    pub coarse_cell: usize,
    /// Cell on level `L+1` forming the patch.
    pub cell: usize,
    /// Cells of level `L+J` covering the patch.
    pub fine_cells: Vec<usize>,
    /// Level-`L+J` node ids in lexicographic order on the patch grid.
    pub nodes: Vec<usize>,
    /// Global level-`L+J` dof indices, node-major with `d+1` components.
    pub local_to_global: Vec<usize>,
    pub geometry: Vec<T>,
}

/// Number of dofs of a patch: `(d+1)·(2^J+1)^d`.
pub fn n_dof_patch(d: usize, j: usize) -> usize {
    (d + 1) * ((1usize << j) + 1).pow(d as u32)
}

/// Number of geometry features of a patch.
pub fn n_geo(d: usize) -> usize {
    match d {
        2 => 4 + 2 + 4,
        _ => 12 + 4 + 8,
    }
}

fn edges(d: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for axis in 0..d {
        for v in 0..pow2(d) {
            if vertex_multi(v, d)[axis] == 0 {
                out.push((v, v | (1 << axis)));
            }
        }
    }
    out
}

fn diagonals(d: usize) -> Vec<(usize, usize)> {
    let n = pow2(d);
    (0..n / 2).map(|v| (v, n - 1 - v)).collect()
}

fn sub<T: Real>(a: &[T; 3], b: &[T; 3]) -> [T; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn vdot<T: Real>(a: &[T; 3], b: &[T; 3]) -> T {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn angle_between<T: Real>(a: &[T; 3], b: &[T; 3]) -> Result<T> {
    let na = vdot(a, a).sqrt();
    let nb = vdot(b, b).sqrt();
    if !(na > T::zero() && nb > T::zero()) {
        return Err(Error::InvalidGeometry("degenerate edge in patch".into()));
    }
    let c = (vdot(a, b) / (na * nb)).max(-T::one()).min(T::one());
    Ok(c.acos())
}

/// Component of `a` orthogonal to `n`.
fn reject<T: Real>(a: &[T; 3], n: &[T; 3]) -> [T; 3] {
    let s = vdot(a, n) / vdot(n, n);
    [a[0] - s * n[0], a[1] - s * n[1], a[2] - s * n[2]]
}

/// Geometry of a cell from its vertices: edge lengths, diagonal lengths
/// and one angle per vertex (the interior angle in 2D, the mean of the
/// three dihedral angles in 3D), in radians.
pub fn geometry_features<T: Real>(level: &MeshLevel<T>, cell: usize) -> Result<Vec<T>> {
    let d = level.dim;
    let vid = level.cell_vertices(cell);
    let x: Vec<[T; 3]> = vid.iter().map(|&v| level.vertices[v]).collect();
    let mut f = Vec::with_capacity(n_geo(d));
    for (a, b) in edges(d) {
        let l = distance(&x[a], &x[b]);
        if !(l > T::zero()) {
            return Err(Error::InvalidGeometry(format!("zero-length edge in cell {cell}")));
        }
        f.push(l);
    }
    for (a, b) in diagonals(d) {
        f.push(distance(&x[a], &x[b]));
    }
    for v in 0..pow2(d) {
        let e: Vec<[T; 3]> = (0..d).map(|axis| sub(&x[v ^ (1 << axis)], &x[v])).collect();
        if d == 2 {
            f.push(angle_between(&e[0], &e[1])?);
        } else {
            let mut s = T::zero();
            for axis in 0..3 {
                let (p, q) = ((axis + 1) % 3, (axis + 2) % 3);
                s += angle_between(&reject(&e[p], &e[axis]), &reject(&e[q], &e[axis]))?;
            }
            f.push(s / T::c(3.0));
        }
    }
    Ok(f)
}

/// Builds all patches of level `coarse + 1` with dofs on level
/// `coarse + j`, `j ∈ {1, 2}`.
pub fn build_patches<T: Real>(
    h: &MeshHierarchy<T>,
    coarse: usize,
    j: usize,
) -> Result<Vec<Patch<T>>> {
    if !(1..=2).contains(&j) {
        return Err(Error::Unsupported(format!("patch refinement depth J = {j}")));
    }
    if coarse + j >= h.n_levels() {
        return Err(Error::InvalidInput(format!(
            "hierarchy has {} levels, patches need level {}",
            h.n_levels(),
            coarse + j
        )));
    }
    let d = h.dim;
    let mid = h.level(coarse + 1);
    let fine = h.level(coarse + j);
    let n_side = (1usize << j) + 1;
    let geo_cache: Vec<Vec<T>> = (0..h.level(coarse).n_cells())
        .map(|c| geometry_features(h.level(coarse), c))
        .collect::<Result<_>>()?;
    let mut patches = Vec::with_capacity(mid.n_cells());
    for cell in 0..mid.n_cells() {
        let coarse_cell = mid.parent[cell];
        let (fine_cells, nodes) = if j == 1 {
            (vec![cell], mid.cell_nodes(cell).to_vec())
        } else {
            let children: Vec<usize> = mid.children(cell).collect();
            let mut nodes = Vec::with_capacity(n_side.pow(d as u32));
            for g in 0..n_side.pow(d as u32) {
                let mut m = [0usize; 3];
                let mut r = g;
                for a in 0..d {
                    m[a] = r % n_side;
                    r /= n_side;
                }
                let mut ch = 0;
                let mut local = [0usize; 3];
                for a in 0..d {
                    let half = usize::from(m[a] > 2);
                    ch |= half << a;
                    local[a] = m[a] - 2 * half;
                }
                let loc = local[0] + 3 * local[1] + 9 * local[2];
                nodes.push(fine.cell_nodes(children[ch])[loc]);
            }
            (children, nodes)
        };
        let local_to_global = nodes
            .iter()
            .flat_map(|&n| (0..=d).map(move |c| n * (d + 1) + c))
            .collect();
        patches.push(Patch {
            coarse_cell,
            cell,
            fine_cells,
            nodes,
            local_to_global,
            geometry: geo_cache[coarse_cell].clone(),
        });
    }
    debug_assert!(patches.iter().all(|p| p.nodes.len() == pow3(d).max(1) || j == 2));
    Ok(patches)
}

/// Number of patches containing each level-`L+J` node.
pub fn node_valence<T>(patches: &[Patch<T>], n_nodes: usize) -> Vec<usize> {
    let mut v = vec![0usize; n_nodes];
    for p in patches {
        for &n in &p.nodes {
            v[n] += 1;
        }
    }
    v
}
