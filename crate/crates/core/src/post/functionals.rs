use crate::error::{Error, Result};
use crate::mesh::{BoundaryTag, MeshLevel};
use crate::reference::{gauss_1d, inverse, map_jacobian, pow3, q2_grads, q2_values};
use crate::scalar::Real;
use crate::space::FeSpace;

/// Optional terms of the momentum residual used by the volume evaluation.
pub struct ForceTerms<'a, T> {
    /// Body force `f`.
    pub forcing: Option<&'a dyn Fn(&[T; 3]) -> [T; 3]>,
    /// Previous state and time step for the `(v − v_prev)/k` term.
    pub previous: Option<(&'a [T], T)>,
}

impl<T> Default for ForceTerms<'_, T> {
    fn default() -> Self {
        Self {
            forcing: None,
            previous: None,
        }
    }
}

fn obstacle_weights<T: Real>(space: &FeSpace<T>) -> Result<Vec<bool>> {
    let w: Vec<bool> = space
        .node_tags
        .iter()
        .map(|t| *t == Some(BoundaryTag::Obstacle))
        .collect();
    if !w.iter().any(|&b| b) {
        return Err(Error::InvalidInput("no obstacle boundary on this mesh".into()));
    }
    Ok(w)
}

/// Force exerted by the fluid on the obstacle, `−∫_Γ (ν∇v n − p n) ds`
/// with `n` the outward normal of the fluid domain, evaluated as a volume
/// integral: the momentum residual is tested with the discrete
/// characteristic function of the obstacle nodes.
///
/// Component 0 is the drag, component 1 the lift.
pub fn obstacle_force<T: Real>(space: &FeSpace<T>, x: &[T], nu: T, terms: &ForceTerms<T>) -> Result<[T; 3]> {
    let on_obstacle = obstacle_weights(space)?;
    let d = space.dim;
    let nq = pow3(d);
    let b = d + 1;
    let mut force = [T::zero(); 3];
    for c in 0..space.n_cells {
        let nodes = space.nodes(c);
        if !nodes.iter().any(|&n| on_obstacle[n]) {
            continue;
        }
        space.with_cell(c, |cd| {
            for q in 0..space.n_qp() {
                let phi = &space.q2_val[q * nq..(q + 1) * nq];
                let grad = &cd.grad[q * nq..(q + 1) * nq];
                let mut p = T::zero();
                let mut v = [T::zero(); 3];
                let mut gv = [[T::zero(); 3]; 3];
                let mut dv = [T::zero(); 3];
                for (i, &n) in nodes.iter().enumerate() {
                    p += phi[i] * x[n * b];
                    for comp in 0..d {
                        let val = x[n * b + 1 + comp];
                        v[comp] += phi[i] * val;
                        for a in 0..d {
                            gv[comp][a] += grad[i][a] * val;
                        }
                        if let Some((prev, _)) = terms.previous {
                            dv[comp] += phi[i] * (val - prev[n * b + 1 + comp]);
                        }
                    }
                }
                let f = terms.forcing.map(|f| f(&cd.points[q])).unwrap_or([T::zero(); 3]);
                let mut conv = [T::zero(); 3];
                for comp in 0..d {
                    for a in 0..d {
                        conv[comp] += v[a] * gv[comp][a];
                    }
                }
                let inv_k = terms.previous.map(|(_, k)| T::one() / k).unwrap_or(T::zero());
                for (i, &n) in nodes.iter().enumerate() {
                    if !on_obstacle[n] {
                        continue;
                    }
                    for comp in 0..d {
                        let mut r = nu * (0..d).map(|a| gv[comp][a] * grad[i][a]).sum::<T>()
                            - p * grad[i][comp];
                        r += (conv[comp] - f[comp] + dv[comp] * inv_k) * phi[i];
                        force[comp] -= cd.jxw[q] * r;
                    }
                }
            }
        });
    }
    Ok(force)
}

/// Drag and lift by the volume evaluation of the steady momentum residual.
pub fn drag_lift<T: Real>(space: &FeSpace<T>, x: &[T], nu: T) -> Result<(T, T)> {
    let f = obstacle_force(space, x, nu, &ForceTerms::default())?;
    Ok((f[0], f[1]))
}

/// Direct Gauss quadrature of `−∫_Γ (ν∇v n − p n) ds` over the obstacle
/// faces of `mesh`, with `x` a state on that level.
pub fn surface_force<T: Real>(mesh: &MeshLevel<T>, x: &[T], nu: T) -> Result<[T; 3]> {
    let d = mesh.dim;
    let nq = pow3(d);
    let b = d + 1;
    let (g, w) = gauss_1d::<T>(4);
    let faces: Vec<_> = mesh
        .boundary
        .iter()
        .filter(|f| f.tag == BoundaryTag::Obstacle)
        .collect();
    if faces.is_empty() {
        return Err(Error::InvalidInput("no obstacle boundary on this mesh".into()));
    }
    let n_face_pts = 4usize.pow(d as u32 - 1);
    let mut vals = [T::zero(); 27];
    let mut rg = [[T::zero(); 3]; 27];
    let mut force = [T::zero(); 3];
    for f in faces {
        let axis = f.face / 2;
        let side = T::from_usize_lossy(f.face % 2);
        let sign = if f.face % 2 == 1 { T::one() } else { -T::one() };
        let geo = mesh.cell_geometry(f.cell);
        let nodes = mesh.cell_nodes(f.cell);
        for fq in 0..n_face_pts {
            let mut xi = [T::zero(); 3];
            let mut wt = T::one();
            let mut r = fq;
            for a in (0..d).filter(|&a| a != axis) {
                xi[a] = g[r % 4];
                wt *= w[r % 4];
                r /= 4;
            }
            xi[axis] = side;
            let jac = map_jacobian(geo, &xi, d);
            let (inv, det) = inverse(&jac, d);
            // n dA = |det J| J^{-T} N̂ dÂ
            let mut nda = [T::zero(); 3];
            for a in 0..d {
                nda[a] = sign * det.abs() * inv[axis][a] * wt;
            }
            q2_values(&xi, d, &mut vals[..nq]);
            q2_grads(&xi, d, &mut rg[..nq]);
            let mut p = T::zero();
            let mut gv = [[T::zero(); 3]; 3];
            for (i, &n) in nodes.iter().enumerate() {
                p += vals[i] * x[n * b];
                let mut gphys = [T::zero(); 3];
                for a in 0..d {
                    for c in 0..d {
                        gphys[a] += rg[i][c] * inv[c][a];
                    }
                }
                for comp in 0..d {
                    for a in 0..d {
                        gv[comp][a] += gphys[a] * x[n * b + 1 + comp];
                    }
                }
            }
            for comp in 0..d {
                let t = nu * (0..d).map(|a| gv[comp][a] * nda[a]).sum::<T>() - p * nda[comp];
                force[comp] -= t;
            }
        }
    }
    Ok(force)
}

/// Drag and lift coefficients `2F/(v̄² D)` in 2D and `2F/(v̄² D H)` in 3D,
/// with `D` the obstacle height and `H` the channel height.
pub fn coefficients<T: Real>(force: [T; 3], dim: usize, vbar: T, obstacle_height: T, channel_height: T) -> (T, T) {
    let mut scale = vbar * vbar * obstacle_height / T::c(2.0);
    if dim == 3 {
        scale *= channel_height;
    }
    (force[0] / scale, force[1] / scale)
}
