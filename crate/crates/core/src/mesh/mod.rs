//! Hierarchies of uniformly refined quadrilateral/hexahedral meshes.
//!
//! Every cell carries `3^d` geometry nodes describing an isoparametric Q2
//! map. The Q2 nodes of level `l` become the vertices of level `l+1` with
//! the same indices, so node numbering is nested across the hierarchy:
//! node `i` of level `l` is node `i` of every finer level.

pub mod patch;
pub mod template;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reference::{
    det, gauss_tensor, map_jacobian, map_point, pow2, pow3, q2_index, q2_multi, vertex_multi,
};
use crate::scalar::Real;

pub use patch::{build_patches, geometry_features, n_dof_patch, n_geo, Patch};
pub use template::{build_template_mesh, ChannelSpec, ObstacleKind, ObstacleSpec, Template};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryTag {
    Inflow,
    Outflow,
    Wall,
    Obstacle,
}

impl BoundaryTag {
    pub fn code(self) -> u8 {
        match self {
            BoundaryTag::Inflow => 1,
            BoundaryTag::Outflow => 2,
            BoundaryTag::Wall => 3,
            BoundaryTag::Obstacle => 4,
        }
    }

    /// Velocity is prescribed on every boundary part except the outflow.
    pub fn is_dirichlet(self) -> bool {
        !matches!(self, BoundaryTag::Outflow)
    }

    /// Precedence when a node touches several boundary parts: no-slip wins
    /// over inflow, inflow over outflow.
    fn priority(self) -> u8 {
        match self {
            BoundaryTag::Outflow => 0,
            BoundaryTag::Inflow => 1,
            BoundaryTag::Wall => 2,
            BoundaryTag::Obstacle => 3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BoundaryFace {
    pub cell: usize,
    /// Local face `2*axis + side`.
    pub face: usize,
    pub tag: BoundaryTag,
}

/// Exact obstacle description used to place refined boundary nodes.
#[derive(Clone, Debug, PartialEq)]
pub enum ObstacleShape<T> {
    /// Cylinder with elliptical cross-section, axis along z.
    Ellipse { center: [T; 2], semi_axes: [T; 2] },
    /// Axis-aligned rectangular (box) obstacle; faces are straight.
    Rectangle { lo: [T; 2], hi: [T; 2] },
}

impl<T: Real> ObstacleShape<T> {
    fn elliptic_radius(&self, p: &[T; 3]) -> Option<T> {
        match self {
            ObstacleShape::Ellipse { center, semi_axes } => {
                let dx = (p[0] - center[0]) / semi_axes[0];
                let dy = (p[1] - center[1]) / semi_axes[1];
                Some((dx * dx + dy * dy).sqrt())
            }
            ObstacleShape::Rectangle { .. } => None,
        }
    }

    fn project(&self, p: &[T; 3]) -> [T; 3] {
        match self {
            ObstacleShape::Ellipse { center, .. } => {
                let r = self.elliptic_radius(p).unwrap();
                let s = T::one() / r;
                [
                    center[0] + (p[0] - center[0]) * s,
                    center[1] + (p[1] - center[1]) * s,
                    p[2],
                ]
            }
            ObstacleShape::Rectangle { .. } => *p,
        }
    }

    /// Height of the obstacle in y (the characteristic length).
    pub fn height(&self) -> T {
        match self {
            ObstacleShape::Ellipse { semi_axes, .. } => T::c(2.0) * semi_axes[1],
            ObstacleShape::Rectangle { lo, hi } => hi[1] - lo[1],
        }
    }
}

/// One level of the hierarchy.
#[derive(Clone, Debug)]
pub struct MeshLevel<T> {
    pub dim: usize,
    pub vertices: Vec<[T; 3]>,
    /// `2^d` vertex indices per cell, lexicographic.
    pub cells: Vec<usize>,
    /// `3^d` geometry nodes per cell (isoparametric Q2 map).
    pub geometry: Vec<[T; 3]>,
    pub boundary: Vec<BoundaryFace>,
    /// Parent cell on the next coarser level; empty on level 0.
    pub parent: Vec<usize>,
    /// `3^d` global Q2 node indices per cell.
    pub cell_nodes: Vec<usize>,
    pub node_coords: Vec<[T; 3]>,
}

impl<T: Real> MeshLevel<T> {
    pub fn n_cells(&self) -> usize {
        self.cells.len() / pow2(self.dim)
    }

    pub fn n_nodes(&self) -> usize {
        self.node_coords.len()
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn cell_vertices(&self, c: usize) -> &[usize] {
        let n = pow2(self.dim);
        &self.cells[c * n..(c + 1) * n]
    }

    pub fn cell_geometry(&self, c: usize) -> &[[T; 3]] {
        let n = pow3(self.dim);
        &self.geometry[c * n..(c + 1) * n]
    }

    pub fn cell_nodes(&self, c: usize) -> &[usize] {
        let n = pow3(self.dim);
        &self.cell_nodes[c * n..(c + 1) * n]
    }

    /// Cells of the next finer level created from `c`, lexicographic.
    pub fn children(&self, c: usize) -> std::ops::Range<usize> {
        let n = pow2(self.dim);
        c * n..(c + 1) * n
    }

    pub fn cell_volume(&self, c: usize) -> T {
        let (pts, wts) = gauss_tensor::<T>(4, self.dim);
        let geo = self.cell_geometry(c);
        pts.iter()
            .zip(&wts)
            .map(|(xi, &w)| w * det(&map_jacobian(geo, xi, self.dim), self.dim))
            .sum()
    }

    pub fn total_volume(&self) -> T {
        (0..self.n_cells()).map(|c| self.cell_volume(c)).sum()
    }

    /// Largest vertex-to-vertex distance of a cell.
    pub fn diameter(&self, c: usize) -> T {
        let v = self.cell_vertices(c);
        let mut h = T::zero();
        for (i, &a) in v.iter().enumerate() {
            for &b in &v[i + 1..] {
                h = h.max(distance(&self.vertices[a], &self.vertices[b]));
            }
        }
        h
    }

    /// Checks that the Jacobian determinant is positive at Gauss points.
    pub fn validate(&self) -> Result<()> {
        let (pts, _) = gauss_tensor::<T>(4, self.dim);
        for c in 0..self.n_cells() {
            let geo = self.cell_geometry(c);
            for xi in pts.iter() {
                let j = det(&map_jacobian(geo, xi, self.dim), self.dim);
                if !(j > T::zero()) {
                    return Err(Error::InvalidGeometry(format!(
                        "cell {c} has non-positive Jacobian {j}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Boundary tag of every Q2 node (`None` for interior nodes).
    pub fn node_tags(&self) -> Vec<Option<BoundaryTag>> {
        let d = self.dim;
        let mut tags: Vec<Option<BoundaryTag>> = vec![None; self.n_nodes()];
        for bf in &self.boundary {
            let nodes = self.cell_nodes(bf.cell);
            for local in face_q2_nodes(bf.face, d) {
                let slot = &mut tags[nodes[local]];
                match slot {
                    Some(old) if old.priority() >= bf.tag.priority() => {}
                    _ => *slot = Some(bf.tag),
                }
            }
        }
        tags
    }

    pub fn has_tag(&self, tag: BoundaryTag) -> bool {
        self.boundary.iter().any(|b| b.tag == tag)
    }
}

pub fn distance<T: Real>(a: &[T; 3], b: &[T; 3]) -> T {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Local Q2 node indices lying on local face `2*axis + side`.
pub fn face_q2_nodes(face: usize, d: usize) -> Vec<usize> {
    let axis = face / 2;
    let side = face % 2;
    (0..pow3(d))
        .filter(|&i| q2_multi(i, d)[axis] == 2 * side)
        .collect()
}

/// Local vertex indices lying on local face `2*axis + side`.
pub fn face_vertices(face: usize, d: usize) -> Vec<usize> {
    let axis = face / 2;
    let side = face % 2;
    (0..pow2(d))
        .filter(|&v| vertex_multi(v, d)[axis] == side)
        .collect()
}

/// Numbers the Q2 nodes of a level: vertices keep their indices, edge,
/// face and cell nodes follow in order of first appearance.
pub(crate) fn number_nodes<T: Real>(
    dim: usize,
    vertices: &[[T; 3]],
    cells: &[usize],
    geometry: &[[T; 3]],
) -> (Vec<usize>, Vec<[T; 3]>) {
    let nv = pow2(dim);
    let nq = pow3(dim);
    let n_cells = cells.len() / nv;
    let mut node_coords: Vec<[T; 3]> = vertices.to_vec();
    let mut cell_nodes = vec![0usize; n_cells * nq];
    let mut entities: HashMap<Vec<usize>, usize> = HashMap::new();
    // vertex subsets per local node, computed once
    let subsets: Vec<Vec<usize>> = (0..nq)
        .map(|q| {
            let m = q2_multi(q, dim);
            (0..nv)
                .filter(|&v| {
                    let vm = vertex_multi(v, dim);
                    (0..dim).all(|a| m[a] == 1 || vm[a] * 2 == m[a])
                })
                .collect()
        })
        .collect();
    for c in 0..n_cells {
        let cv = &cells[c * nv..(c + 1) * nv];
        for q in 0..nq {
            let sub = &subsets[q];
            let id = if sub.len() == 1 {
                cv[sub[0]]
            } else {
                let mut key: Vec<usize> = sub.iter().map(|&v| cv[v]).collect();
                key.sort_unstable();
                *entities.entry(key).or_insert_with(|| {
                    node_coords.push(geometry[c * nq + q]);
                    node_coords.len() - 1
                })
            };
            cell_nodes[c * nq + q] = id;
        }
    }
    (cell_nodes, node_coords)
}

/// Nested meshes `Ω^0, …, Ω^l` obtained by uniform refinement.
#[derive(Clone, Debug)]
pub struct MeshHierarchy<T> {
    pub dim: usize,
    pub levels: Vec<MeshLevel<T>>,
    pub obstacles: Vec<ObstacleShape<T>>,
}

impl<T: Real> MeshHierarchy<T> {
    pub fn new(level0: MeshLevel<T>, obstacles: Vec<ObstacleShape<T>>) -> Self {
        Self {
            dim: level0.dim,
            levels: vec![level0],
            obstacles,
        }
    }

    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn level(&self, l: usize) -> &MeshLevel<T> {
        &self.levels[l]
    }

    pub fn finest(&self) -> &MeshLevel<T> {
        self.levels.last().unwrap()
    }

    /// Adds one uniformly refined level on top.
    pub fn refine_uniform(mut self) -> Self {
        let fine = refine_level(self.finest(), &self.obstacles);
        self.levels.push(fine);
        self
    }

    /// Refines until the hierarchy holds levels `0..=top`.
    pub fn refine_to(mut self, top: usize) -> Self {
        while self.levels.len() <= top {
            self = self.refine_uniform();
        }
        self
    }

    fn project_obstacle(&self, p: &[T; 3]) -> [T; 3] {
        project_onto(&self.obstacles, p)
    }

    /// Characteristic obstacle length (height of the first obstacle).
    pub fn obstacle_height(&self) -> Option<T> {
        self.obstacles.first().map(|o| o.height())
    }
}

fn project_onto<T: Real>(obstacles: &[ObstacleShape<T>], p: &[T; 3]) -> [T; 3] {
    let best = obstacles
        .iter()
        .filter_map(|o| o.elliptic_radius(p).map(|r| ((r - T::one()).abs(), o)))
        .min_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    match best {
        Some((_, o)) => o.project(p),
        None => *p,
    }
}

fn refine_level<T: Real>(coarse: &MeshLevel<T>, obstacles: &[ObstacleShape<T>]) -> MeshLevel<T> {
    let d = coarse.dim;
    let nv = pow2(d);
    let nq = pow3(d);
    let n_coarse = coarse.n_cells();
    let mut cells = Vec::with_capacity(n_coarse * nv * nv);
    let mut geometry = Vec::with_capacity(n_coarse * nv * nq);
    let mut parent = Vec::with_capacity(n_coarse * nv);
    let quarter = T::c(0.25);

    // obstacle faces of each coarse cell
    let mut obstacle_faces: Vec<Vec<usize>> = vec![Vec::new(); n_coarse];
    for bf in &coarse.boundary {
        if bf.tag == BoundaryTag::Obstacle {
            obstacle_faces[bf.cell].push(bf.face);
        }
    }

    for c in 0..n_coarse {
        let pnodes = coarse.cell_nodes(c);
        let pgeo = coarse.cell_geometry(c);
        for ch in 0..nv {
            let a = vertex_multi(ch, d);
            for v in 0..nv {
                let vm = vertex_multi(v, d);
                let m = [a[0] + vm[0], a[1] + vm[1], a[2] + vm[2]];
                cells.push(pnodes[q2_index(m, d)]);
            }
            for g in 0..nq {
                let gm = q2_multi(g, d);
                let fm = [2 * a[0] + gm[0], 2 * a[1] + gm[1], 2 * a[2] + gm[2]];
                let p = if (0..d).all(|ax| fm[ax] % 2 == 0) {
                    pgeo[q2_index([fm[0] / 2, fm[1] / 2, fm[2] / 2], d)]
                } else {
                    let mut xi = [T::zero(); 3];
                    for ax in 0..d {
                        xi[ax] = T::from_usize_lossy(fm[ax]) * quarter;
                    }
                    let p = map_point(pgeo, &xi, d);
                    let on_obstacle = obstacle_faces[c].iter().any(|&f| {
                        let (axis, side) = (f / 2, f % 2);
                        fm[axis] == 4 * side
                    });
                    if on_obstacle {
                        project_onto(obstacles, &p)
                    } else {
                        p
                    }
                };
                geometry.push(p);
            }
            parent.push(c);
        }
    }

    let mut boundary = Vec::new();
    for bf in &coarse.boundary {
        let (axis, side) = (bf.face / 2, bf.face % 2);
        for ch in 0..nv {
            if vertex_multi(ch, d)[axis] == side {
                boundary.push(BoundaryFace {
                    cell: bf.cell * nv + ch,
                    face: bf.face,
                    tag: bf.tag,
                });
            }
        }
    }

    let vertices = coarse.node_coords.clone();
    let (cell_nodes, node_coords) = number_nodes(d, &vertices, &cells, &geometry);
    MeshLevel {
        dim: d,
        vertices,
        cells,
        geometry,
        boundary,
        parent,
        cell_nodes,
        node_coords,
    }
}

impl<T: Real> MeshHierarchy<T> {
    /// Re-projects a point onto the nearest curved obstacle.
    pub fn snap_to_obstacle(&self, p: &[T; 3]) -> [T; 3] {
        self.project_obstacle(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(n: usize) -> MeshHierarchy<f64> {
        build_template_mesh(&Template::UnitSquare { n }).unwrap()
    }

    #[test]
    fn unit_square_counts() {
        let h = square(2);
        let l0 = h.level(0);
        assert_eq!(l0.n_cells(), 4);
        assert_eq!(l0.n_vertices(), 9);
        assert_eq!(l0.n_nodes(), 25);
    }

    #[test]
    fn refinement_children_and_parents() {
        let h = square(2).refine_to(2);
        for l in 1..3 {
            let fine = h.level(l);
            let coarse = h.level(l - 1);
            assert_eq!(fine.n_cells(), 4 * coarse.n_cells());
            let mut count = vec![0; coarse.n_cells()];
            for &p in &fine.parent {
                count[p] += 1;
            }
            assert!(count.iter().all(|&c| c == 4));
            for c in 0..coarse.n_cells() {
                for ch in coarse.children(c) {
                    assert_eq!(fine.parent[ch], c);
                }
            }
        }
    }

    #[test]
    fn q2_node_count_of_refined_grid() {
        // an n×n grid refined once has 2n cells per side: (2·2n+1)^2 Q2 nodes
        for n in 1..4 {
            let h = square(n).refine_uniform();
            assert_eq!(h.level(1).n_nodes(), (4 * n + 1) * (4 * n + 1));
        }
    }

    #[test]
    fn hex_refines_into_eight() {
        let h = build_template_mesh::<f64>(&Template::UnitCube { n: 1 })
            .unwrap()
            .refine_uniform();
        assert_eq!(h.level(0).n_cells(), 1);
        assert_eq!(h.level(1).n_cells(), 8);
        assert_eq!(h.level(1).n_nodes(), 125);
        assert!((h.level(1).total_volume() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn nested_node_numbering() {
        let h = square(2).refine_to(2);
        for l in 1..3 {
            let (c, f) = (h.level(l - 1), h.level(l));
            for i in 0..c.n_nodes() {
                assert_eq!(c.node_coords[i], f.node_coords[i]);
            }
        }
    }

    #[test]
    fn boundary_tags_inherited() {
        let h = square(1).refine_to(2);
        for l in 0..3 {
            let lvl = h.level(l);
            let per_side = 1 << l;
            assert_eq!(lvl.boundary.len(), 4 * per_side);
            assert!(lvl.boundary.iter().all(|b| b.tag == BoundaryTag::Wall));
        }
    }

    #[test]
    fn straight_refinement_preserves_volume() {
        let h = square(3).refine_to(3);
        for l in 0..4 {
            assert!((h.level(l).total_volume() - 1.0).abs() < 1e-13);
        }
    }
}
