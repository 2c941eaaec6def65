//! Coarse meshes for the unit square/cube and for channels with obstacles.

use serde::{Deserialize, Serialize};

use super::{number_nodes, BoundaryFace, BoundaryTag, MeshHierarchy, MeshLevel, ObstacleShape};
use crate::error::{Error, Result};
use crate::reference::{det, map_jacobian, pow2, pow3, q2_index, q2_multi, vertex_to_q2};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObstacleKind {
    Ellipse,
    Rectangle,
}

/// An obstacle in the x-y cross-section. For rectangles `semi_axes` are
/// the half side lengths.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObstacleSpec {
    pub kind: ObstacleKind,
    pub center: [f64; 2],
    pub semi_axes: [f64; 2],
}

/// Channel `[0, length] × [0, height] (× [z0, z1])` with obstacles.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSpec {
    pub dim: usize,
    pub length: f64,
    pub height: f64,
    /// z-extent in 3D; defaults to `[-height, height]`.
    #[serde(default)]
    pub depth_range: Option<[f64; 2]>,
    #[serde(default)]
    pub obstacles: Vec<ObstacleSpec>,
    /// Half width of the square-ish box meshed by the O-grid around each
    /// elliptical obstacle.
    #[serde(default = "default_box_half_width")]
    pub box_half_width: f64,
    /// Cells per O-grid block in the tangential direction.
    #[serde(default = "default_n_theta")]
    pub n_theta: usize,
    /// Cells per O-grid block in the radial direction.
    #[serde(default = "default_n_radial")]
    pub n_radial: usize,
    /// Target cell size for the rectangular blocks and the z-direction.
    #[serde(default = "default_cell_size")]
    pub cell_size: f64,
    /// Exponent `γ` of the radial grading `τ = u^γ` in the O-grid.
    #[serde(default = "default_grading")]
    pub radial_grading: f64,
}

fn default_box_half_width() -> f64 {
    0.2
}
fn default_n_theta() -> usize {
    2
}
fn default_n_radial() -> usize {
    1
}
fn default_cell_size() -> f64 {
    0.25
}
fn default_grading() -> f64 {
    1.5
}

impl ChannelSpec {
    /// Circular cylinder of diameter 0.1 in a 2.2 × 0.41 channel.
    pub fn cylinder_2d() -> Self {
        Self {
            dim: 2,
            length: 2.2,
            height: 0.41,
            depth_range: None,
            obstacles: vec![ObstacleSpec {
                kind: ObstacleKind::Ellipse,
                center: [0.5, 0.2],
                semi_axes: [0.05, 0.05],
            }],
            box_half_width: default_box_half_width(),
            n_theta: default_n_theta(),
            n_radial: default_n_radial(),
            cell_size: default_cell_size(),
            radial_grading: default_grading(),
        }
    }

    pub fn cylinder_3d() -> Self {
        Self {
            dim: 3,
            length: 2.5,
            ..Self::cylinder_2d()
        }
    }

    /// A circle followed by an ellipse.
    pub fn two_obstacles(dim: usize) -> Self {
        let mut s = Self::cylinder_2d();
        s.dim = dim;
        s.length = 2.5;
        s.obstacles.push(ObstacleSpec {
            kind: ObstacleKind::Ellipse,
            center: [1.2, 0.2],
            semi_axes: [0.05, 0.08],
        });
        s
    }

    /// Square obstacle; every cell is affine.
    pub fn square_obstacle_2d() -> Self {
        Self {
            obstacles: vec![ObstacleSpec {
                kind: ObstacleKind::Rectangle,
                center: [0.5, 0.2],
                semi_axes: [0.05, 0.05],
            }],
            cell_size: 0.05,
            ..Self::cylinder_2d()
        }
    }

    pub fn z_range(&self) -> [f64; 2] {
        self.depth_range.unwrap_or([-self.height, self.height])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Template {
    UnitSquare { n: usize },
    UnitCube { n: usize },
    Channel(ChannelSpec),
}

/// Builds level 0 of the hierarchy for a template.
pub fn build_template_mesh<T: Real>(t: &Template) -> Result<MeshHierarchy<T>> {
    match t {
        Template::UnitSquare { n } => unit_box(2, *n),
        Template::UnitCube { n } => unit_box(3, *n),
        Template::Channel(spec) => channel(spec),
    }
}

type Geo = Vec<[f64; 3]>;

fn unit_box<T: Real>(dim: usize, n: usize) -> Result<MeshHierarchy<T>> {
    if n == 0 {
        return Err(Error::InvalidInput("unit box needs n >= 1".into()));
    }
    let breaks: Vec<f64> = (0..=n).map(|i| i as f64 / n as f64).collect();
    let cells = tensor_cells(dim, &breaks, &breaks, &breaks, |_| true);
    let level = assemble_level0(dim, cells, 1.0, |_| BoundaryTag::Wall)?;
    Ok(MeshHierarchy::new(level, Vec::new()))
}

fn subdivide(lo: f64, hi: f64, h: f64) -> Vec<f64> {
    let n = ((hi - lo) / h).round().max(1.0) as usize;
    (0..=n).map(|i| lo + (hi - lo) * i as f64 / n as f64).collect()
}

fn merge_breaks(mut pts: Vec<f64>, h: f64) -> Vec<f64> {
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pts.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    let mut out = vec![pts[0]];
    for w in pts.windows(2) {
        out.extend(subdivide(w[0], w[1], h).into_iter().skip(1));
    }
    out
}

/// Affine cells on a tensor grid, kept when `keep(center)` holds.
fn tensor_cells(
    dim: usize,
    xs: &[f64],
    ys: &[f64],
    zs: &[f64],
    keep: impl Fn(&[f64; 3]) -> bool,
) -> Vec<Geo> {
    let nz = if dim == 3 { zs.len() - 1 } else { 1 };
    let mut cells = Vec::new();
    for k in 0..nz {
        for j in 0..ys.len() - 1 {
            for i in 0..xs.len() - 1 {
                let lo = [xs[i], ys[j], if dim == 3 { zs[k] } else { 0.0 }];
                let hi = [xs[i + 1], ys[j + 1], if dim == 3 { zs[k + 1] } else { 0.0 }];
                let center = [0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1]), 0.5 * (lo[2] + hi[2])];
                if !keep(&center) {
                    continue;
                }
                let geo = (0..pow3(dim))
                    .map(|q| {
                        let m = q2_multi(q, dim);
                        let mut p = [0.0; 3];
                        for a in 0..dim {
                            p[a] = lo[a] + (hi[a] - lo[a]) * m[a] as f64 * 0.5;
                        }
                        p
                    })
                    .collect();
                cells.push(geo);
            }
        }
    }
    cells
}

fn channel<T: Real>(spec: &ChannelSpec) -> Result<MeshHierarchy<T>> {
    if spec.dim != 2 && spec.dim != 3 {
        return Err(Error::Unsupported(format!("dimension {}", spec.dim)));
    }
    if !(spec.length > 0.0 && spec.height > 0.0 && spec.cell_size > 0.0) {
        return Err(Error::RejectedGeometry("channel extents must be positive".into()));
    }
    if !(1.0..2.0).contains(&spec.radial_grading) {
        return Err(Error::RejectedGeometry(format!(
            "radial grading {} outside [1, 2)",
            spec.radial_grading
        )));
    }
    let all_rect = spec.obstacles.iter().all(|o| o.kind == ObstacleKind::Rectangle);
    let all_ellipse = spec.obstacles.iter().all(|o| o.kind == ObstacleKind::Ellipse);
    let cells2d = if spec.obstacles.is_empty() || all_rect {
        rect_obstacle_cells(spec)?
    } else if all_ellipse {
        ogrid_cells(spec)?
    } else {
        return Err(Error::Unsupported(
            "mixing rectangular and elliptical obstacles".into(),
        ));
    };
    let cells = if spec.dim == 3 {
        let [z0, z1] = spec.z_range();
        if !(z1 > z0) {
            return Err(Error::RejectedGeometry("empty z-range".into()));
        }
        extrude(&cells2d, &subdivide(z0, z1, spec.cell_size))
    } else {
        cells2d
    };
    let (len, hgt) = (spec.length, spec.height);
    let [z0, z1] = spec.z_range();
    let dim = spec.dim;
    let tol = 1e-9 * len.max(hgt);
    let classify = move |p: &[f64; 3]| {
        if p[0].abs() < tol {
            BoundaryTag::Inflow
        } else if (p[0] - len).abs() < tol {
            BoundaryTag::Outflow
        } else if p[1].abs() < tol
            || (p[1] - hgt).abs() < tol
            || (dim == 3 && ((p[2] - z0).abs() < tol || (p[2] - z1).abs() < tol))
        {
            BoundaryTag::Wall
        } else {
            BoundaryTag::Obstacle
        }
    };
    let level = assemble_level0(spec.dim, cells, len.max(hgt), classify)?;
    let obstacles = spec
        .obstacles
        .iter()
        .map(|o| match o.kind {
            ObstacleKind::Ellipse => ObstacleShape::Ellipse {
                center: [T::c(o.center[0]), T::c(o.center[1])],
                semi_axes: [T::c(o.semi_axes[0]), T::c(o.semi_axes[1])],
            },
            ObstacleKind::Rectangle => ObstacleShape::Rectangle {
                lo: [
                    T::c(o.center[0] - o.semi_axes[0]),
                    T::c(o.center[1] - o.semi_axes[1]),
                ],
                hi: [
                    T::c(o.center[0] + o.semi_axes[0]),
                    T::c(o.center[1] + o.semi_axes[1]),
                ],
            },
        })
        .collect();
    let h = MeshHierarchy::new(level, obstacles);
    h.level(0).validate()?;
    Ok(h)
}

fn check_inside(spec: &ChannelSpec, lo: [f64; 2], hi: [f64; 2], what: &str) -> Result<()> {
    if lo[0] <= 0.0 || hi[0] >= spec.length || lo[1] <= 0.0 || hi[1] >= spec.height {
        return Err(Error::RejectedGeometry(format!(
            "{what} touches or crosses the channel boundary"
        )));
    }
    Ok(())
}

fn rect_obstacle_cells(spec: &ChannelSpec) -> Result<Vec<Geo>> {
    let mut xb = vec![0.0, spec.length];
    let mut yb = vec![0.0, spec.height];
    let mut rects = Vec::new();
    for o in &spec.obstacles {
        let lo = [o.center[0] - o.semi_axes[0], o.center[1] - o.semi_axes[1]];
        let hi = [o.center[0] + o.semi_axes[0], o.center[1] + o.semi_axes[1]];
        if !(o.semi_axes[0] > 0.0 && o.semi_axes[1] > 0.0) {
            return Err(Error::RejectedGeometry("degenerate obstacle".into()));
        }
        check_inside(spec, lo, hi, "obstacle")?;
        for (a, b) in rects.iter() {
            let (a, b): (&[f64; 2], &[f64; 2]) = (a, b);
            if lo[0] < b[0] && a[0] < hi[0] && lo[1] < b[1] && a[1] < hi[1] {
                return Err(Error::RejectedGeometry("obstacles overlap".into()));
            }
        }
        xb.extend([lo[0], hi[0]]);
        yb.extend([lo[1], hi[1]]);
        rects.push((lo, hi));
    }
    let xs = merge_breaks(xb, spec.cell_size);
    let ys = merge_breaks(yb, spec.cell_size);
    Ok(tensor_cells(2, &xs, &ys, &[0.0], |c| {
        !rects
            .iter()
            .any(|(lo, hi)| c[0] > lo[0] && c[0] < hi[0] && c[1] > lo[1] && c[1] < hi[1])
    }))
}

fn ogrid_cells(spec: &ChannelSpec) -> Result<Vec<Geo>> {
    let b = spec.box_half_width;
    let hgt = spec.height;
    let mut obs = spec.obstacles.clone();
    obs.sort_by(|a, c| a.center[0].partial_cmp(&c.center[0]).unwrap());
    for o in &obs {
        let [ax, ay] = o.semi_axes;
        if !(ax > 0.0 && ay > 0.0) {
            return Err(Error::RejectedGeometry("degenerate obstacle".into()));
        }
        let lo = [o.center[0] - ax, o.center[1] - ay];
        let hi = [o.center[0] + ax, o.center[1] + ay];
        check_inside(spec, lo, hi, "obstacle")?;
        if ax >= b {
            return Err(Error::RejectedGeometry(format!(
                "obstacle half width {ax} does not fit the O-grid box half width {b}"
            )));
        }
        if o.center[0] - b <= 0.0 || o.center[0] + b >= spec.length {
            return Err(Error::RejectedGeometry("O-grid box leaves the channel".into()));
        }
    }
    for w in obs.windows(2) {
        if w[0].center[0] + b >= w[1].center[0] - b {
            return Err(Error::RejectedGeometry("obstacle O-grid boxes overlap".into()));
        }
    }
    let nt = spec.n_theta.max(1);
    let nr = spec.n_radial.max(1);
    let ys: Vec<f64> = (0..=nt).map(|j| hgt * j as f64 / nt as f64).collect();
    let mut cells = Vec::new();
    let rect_block = |x0: f64, x1: f64, cells: &mut Vec<Geo>| {
        let xs = subdivide(x0, x1, spec.cell_size);
        cells.extend(tensor_cells(2, &xs, &ys, &[0.0], |_| true));
    };
    let mut x = 0.0;
    for o in &obs {
        let (cx, cy) = (o.center[0], o.center[1]);
        let [ax, ay] = o.semi_axes;
        rect_block(x, cx - b, &mut cells);
        x = cx + b;
        // box corners, counterclockwise
        let corners = [[cx + b, 0.0], [cx + b, hgt], [cx - b, hgt], [cx - b, 0.0]];
        let angle = |p: [f64; 2]| ((p[1] - cy) / ay).atan2((p[0] - cx) / ax);
        for k in 0..4 {
            let p0 = corners[k];
            let p1 = corners[(k + 1) % 4];
            let th0 = angle(p0);
            let mut th1 = angle(p1);
            while th1 <= th0 {
                th1 += 2.0 * std::f64::consts::PI;
            }
            let map = |s: f64, u: f64| -> [f64; 3] {
                let tau = u.powf(spec.radial_grading);
                let th = th0 + s * (th1 - th0);
                let inner = [cx + ax * th.cos(), cy + ay * th.sin()];
                let outer = [p0[0] + s * (p1[0] - p0[0]), p0[1] + s * (p1[1] - p0[1])];
                [
                    (1.0 - tau) * inner[0] + tau * outer[0],
                    (1.0 - tau) * inner[1] + tau * outer[1],
                    0.0,
                ]
            };
            for j in 0..nr {
                for i in 0..nt {
                    let geo = (0..9)
                        .map(|q| {
                            let m = q2_multi(q, 2);
                            let s = (i as f64 + m[0] as f64 * 0.5) / nt as f64;
                            let u = (j as f64 + m[1] as f64 * 0.5) / nr as f64;
                            map(s, u)
                        })
                        .collect();
                    cells.push(geo);
                }
            }
        }
    }
    rect_block(x, spec.length, &mut cells);
    Ok(cells)
}

fn extrude(cells2d: &[Geo], zs: &[f64]) -> Vec<Geo> {
    let mut out = Vec::with_capacity(cells2d.len() * (zs.len() - 1));
    for k in 0..zs.len() - 1 {
        for g in cells2d {
            let geo = (0..27)
                .map(|q| {
                    let m = q2_multi(q, 3);
                    let p = g[q2_index([m[0], m[1], 0], 2)];
                    let z = zs[k] + (zs[k + 1] - zs[k]) * m[2] as f64 * 0.5;
                    [p[0], p[1], z]
                })
                .collect();
            out.push(geo);
        }
    }
    out
}

fn flip_axis0(geo: &Geo, dim: usize) -> Geo {
    (0..pow3(dim))
        .map(|q| {
            let m = q2_multi(q, dim);
            geo[q2_index([2 - m[0], m[1], m[2]], dim)]
        })
        .collect()
}

/// Turns a soup of cells into a conforming level-0 mesh: orients cells,
/// merges coincident vertices and tags unmatched faces.
fn assemble_level0<T: Real>(
    dim: usize,
    raw: Vec<Geo>,
    scale: f64,
    classify: impl Fn(&[f64; 3]) -> BoundaryTag,
) -> Result<MeshLevel<T>> {
    let nv = pow2(dim);
    let nq = pow3(dim);
    let tol = 1e-9 * scale;
    let center = [0.5; 3];
    let mut geos = Vec::with_capacity(raw.len());
    for g in raw {
        let j = det(&map_jacobian(&g, &center, dim), dim);
        if j.abs() < 1e-14 * scale.powi(dim as i32) {
            return Err(Error::InvalidGeometry("degenerate coarse cell".into()));
        }
        geos.push(if j < 0.0 { flip_axis0(&g, dim) } else { g });
    }

    let mut vertices: Vec<[f64; 3]> = Vec::new();
    let mut cells = Vec::with_capacity(geos.len() * nv);
    for g in &geos {
        for v in 0..nv {
            let p = g[vertex_to_q2(v, dim)];
            let id = match vertices.iter().position(|q| {
                (q[0] - p[0]).abs() < tol && (q[1] - p[1]).abs() < tol && (q[2] - p[2]).abs() < tol
            }) {
                Some(i) => i,
                None => {
                    vertices.push(p);
                    vertices.len() - 1
                }
            };
            cells.push(id);
        }
    }

    let mut face_count: std::collections::HashMap<Vec<usize>, usize> = Default::default();
    let face_key = |c: usize, f: usize| {
        let mut k: Vec<usize> = super::face_vertices(f, dim)
            .into_iter()
            .map(|v| cells[c * nv + v])
            .collect();
        k.sort_unstable();
        k
    };
    for c in 0..geos.len() {
        for f in 0..2 * dim {
            *face_count.entry(face_key(c, f)).or_default() += 1;
        }
    }
    let mut boundary = Vec::new();
    for c in 0..geos.len() {
        for f in 0..2 * dim {
            match face_count[&face_key(c, f)] {
                1 => {
                    let (axis, side) = (f / 2, f % 2);
                    let mut m = [1, 1, 1];
                    m[axis] = 2 * side;
                    for a in dim..3 {
                        m[a] = 0;
                    }
                    let p = geos[c][q2_index(m, dim)];
                    boundary.push(BoundaryFace {
                        cell: c,
                        face: f,
                        tag: classify(&p),
                    });
                }
                2 => {}
                _ => {
                    return Err(Error::InvalidGeometry(
                        "face shared by more than two cells".into(),
                    ))
                }
            }
        }
    }

    let conv = |p: &[f64; 3]| [T::c(p[0]), T::c(p[1]), T::c(p[2])];
    let vertices: Vec<[T; 3]> = vertices.iter().map(conv).collect();
    let geometry: Vec<[T; 3]> = geos.iter().flatten().map(conv).collect();
    let (cell_nodes, node_coords) = number_nodes(dim, &vertices, &cells, &geometry);
    debug_assert_eq!(cell_nodes.len(), geos.len() * nq);
    Ok(MeshLevel {
        dim,
        vertices,
        cells,
        geometry,
        boundary,
        parent: Vec::new(),
        cell_nodes,
        node_coords,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn area_2d(spec: &ChannelSpec) -> f64 {
        let mut a = spec.length * spec.height;
        for o in &spec.obstacles {
            a -= match o.kind {
                ObstacleKind::Ellipse => std::f64::consts::PI * o.semi_axes[0] * o.semi_axes[1],
                ObstacleKind::Rectangle => 4.0 * o.semi_axes[0] * o.semi_axes[1],
            };
        }
        a
    }

    #[test]
    fn cylinder_mesh_is_valid_and_tagged() {
        let spec = ChannelSpec::cylinder_2d();
        let h = build_template_mesh::<f64>(&Template::Channel(spec)).unwrap();
        let l0 = h.level(0);
        assert_eq!(l0.n_cells(), 22);
        for tag in [
            BoundaryTag::Inflow,
            BoundaryTag::Outflow,
            BoundaryTag::Wall,
            BoundaryTag::Obstacle,
        ] {
            assert!(l0.has_tag(tag), "{tag:?} missing");
        }
        assert_eq!(
            l0.boundary.iter().filter(|b| b.tag == BoundaryTag::Obstacle).count(),
            8
        );
    }

    #[test]
    fn curved_area_converges_to_exact() {
        let spec = ChannelSpec::cylinder_2d();
        let exact = area_2d(&spec);
        let h = build_template_mesh::<f64>(&Template::Channel(spec))
            .unwrap()
            .refine_to(3);
        let errs: Vec<f64> = (0..4).map(|l| (h.level(l).total_volume() - exact).abs()).collect();
        for w in errs.windows(2) {
            assert!(w[1] < w[0] * 0.5, "{errs:?}");
        }
        assert!(errs[3] < 1e-6, "{errs:?}");
        for l in 0..4 {
            h.level(l).validate().unwrap();
        }
    }

    #[test]
    fn refined_obstacle_nodes_on_circle() {
        let h = build_template_mesh::<f64>(&Template::Channel(ChannelSpec::cylinder_2d()))
            .unwrap()
            .refine_to(2);
        let lvl = h.level(2);
        let tags = lvl.node_tags();
        let mut n = 0;
        for (i, t) in tags.iter().enumerate() {
            if *t == Some(BoundaryTag::Obstacle) {
                let p = lvl.node_coords[i];
                let r = ((p[0] - 0.5).powi(2) + (p[1] - 0.2).powi(2)).sqrt();
                assert!((r - 0.05).abs() < 1e-13);
                n += 1;
            }
        }
        assert_eq!(n, 8 * 4 * 2);
    }

    #[test]
    fn square_obstacle_is_affine_with_exact_area() {
        let spec = ChannelSpec::square_obstacle_2d();
        let exact = area_2d(&spec);
        let h = build_template_mesh::<f64>(&Template::Channel(spec))
            .unwrap()
            .refine_uniform();
        assert!((h.level(1).total_volume() - exact).abs() < 1e-12);
    }

    #[test]
    fn extruded_cylinder() {
        let spec = ChannelSpec::cylinder_3d();
        let [z0, z1] = spec.z_range();
        let exact = area_2d(&spec) * (z1 - z0);
        let h = build_template_mesh::<f64>(&Template::Channel(spec))
            .unwrap()
            .refine_uniform();
        h.level(1).validate().unwrap();
        let rel = (h.level(1).total_volume() - exact).abs() / exact;
        assert!(rel < 1e-3, "{rel}");
    }

    #[test]
    fn two_obstacles_mesh() {
        let h = build_template_mesh::<f64>(&Template::Channel(ChannelSpec::two_obstacles(2))).unwrap();
        assert_eq!(
            h.level(0).boundary.iter().filter(|b| b.tag == BoundaryTag::Obstacle).count(),
            16
        );
    }

    #[test]
    fn rejects_obstacle_touching_wall() {
        let mut spec = ChannelSpec::cylinder_2d();
        spec.obstacles[0].center = [0.5, 0.03];
        assert!(matches!(
            build_template_mesh::<f64>(&Template::Channel(spec)),
            Err(Error::RejectedGeometry(_))
        ));
    }

    #[test]
    fn rejects_overlapping_boxes() {
        let mut spec = ChannelSpec::two_obstacles(2);
        spec.obstacles[1].center = [0.7, 0.2];
        assert!(matches!(
            build_template_mesh::<f64>(&Template::Channel(spec)),
            Err(Error::RejectedGeometry(_))
        ));
    }
}
