use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::reference::{pow2, q2_index};
use crate::scalar::Real;
use crate::space::FeSpace;

/// Legacy ASCII VTK unstructured grid: every Q2 node is a point, every
/// cell is split into `2^d` linear sub-cells, velocity is written as a
/// point vector and pressure as a point scalar.
pub fn write_vtk<T: Real>(w: &mut impl Write, space: &FeSpace<T>, x: &[T], title: &str) -> Result<()> {
    let d = space.dim;
    let b = d + 1;
    writeln!(w, "# vtk DataFile Version 3.0")?;
    writeln!(w, "{}", title.replace('\n', " "))?;
    writeln!(w, "ASCII")?;
    writeln!(w, "DATASET UNSTRUCTURED_GRID")?;
    writeln!(w, "POINTS {} double", space.n_nodes)?;
    for p in &space.node_coords {
        writeln!(w, "{} {} {}", p[0].f64(), p[1].f64(), p[2].f64())?;
    }
    let (corners, vtk_type): (Vec<[usize; 3]>, u8) = if d == 2 {
        (vec![[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], 9)
    } else {
        (
            vec![
                [0, 0, 0],
                [1, 0, 0],
                [1, 1, 0],
                [0, 1, 0],
                [0, 0, 1],
                [1, 0, 1],
                [1, 1, 1],
                [0, 1, 1],
            ],
            12,
        )
    };
    let n_sub = space.n_cells * pow2(d);
    writeln!(w, "CELLS {} {}", n_sub, n_sub * (corners.len() + 1))?;
    for c in 0..space.n_cells {
        let nodes = space.nodes(c);
        for s in 0..pow2(d) {
            let off = [s & 1, (s >> 1) & 1, (s >> 2) & 1];
            write!(w, "{}", corners.len())?;
            for k in &corners {
                let m = [off[0] + k[0], off[1] + k[1], if d == 3 { off[2] + k[2] } else { 0 }];
                write!(w, " {}", nodes[q2_index(m, d)])?;
            }
            writeln!(w)?;
        }
    }
    writeln!(w, "CELL_TYPES {n_sub}")?;
    for _ in 0..n_sub {
        writeln!(w, "{vtk_type}")?;
    }
    writeln!(w, "POINT_DATA {}", space.n_nodes)?;
    writeln!(w, "SCALARS pressure double 1")?;
    writeln!(w, "LOOKUP_TABLE default")?;
    for n in 0..space.n_nodes {
        writeln!(w, "{}", x[n * b].f64())?;
    }
    writeln!(w, "VECTORS velocity double")?;
    for n in 0..space.n_nodes {
        let v: Vec<f64> = (0..3).map(|c| if c < d { x[n * b + 1 + c].f64() } else { 0.0 }).collect();
        writeln!(w, "{} {} {}", v[0], v[1], v[2])?;
    }
    Ok(())
}

pub fn save_vtk<T: Real>(path: &Path, space: &FeSpace<T>, x: &[T], title: &str) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_vtk(&mut w, space, x, title)?;
    w.flush()?;
    Ok(())
}

/// Points and point data of a file written by [`write_vtk`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct VtkPointData {
    pub points: Vec<[f64; 3]>,
    pub pressure: Vec<f64>,
    pub velocity: Vec<[f64; 3]>,
}

pub fn read_vtk(text: &str) -> Result<VtkPointData> {
    let bad = |m: &str| Error::Format(format!("vtk: {m}"));
    let mut lines = text.lines();
    let mut out = VtkPointData::default();
    let num = |s: &str| s.parse::<f64>().map_err(|_| bad(&format!("bad number {s:?}")));
    let triple = |l: Option<&str>| -> Result<[f64; 3]> {
        let l = l.ok_or_else(|| bad("unexpected end"))?;
        let v: Vec<&str> = l.split_whitespace().collect();
        if v.len() != 3 {
            return Err(bad("expected three values"));
        }
        Ok([num(v[0])?, num(v[1])?, num(v[2])?])
    };
    while let Some(line) = lines.next() {
        let mut it = line.split_whitespace();
        match it.next() {
            Some("POINTS") => {
                let n: usize = it.next().and_then(|s| s.parse().ok()).ok_or_else(|| bad("POINTS count"))?;
                for _ in 0..n {
                    out.points.push(triple(lines.next())?);
                }
            }
            Some("SCALARS") if it.next() == Some("pressure") => {
                lines.next();
                for _ in 0..out.points.len() {
                    out.pressure.push(num(lines.next().ok_or_else(|| bad("unexpected end"))?.trim())?);
                }
            }
            Some("VECTORS") if it.next() == Some("velocity") => {
                for _ in 0..out.points.len() {
                    out.velocity.push(triple(lines.next())?);
                }
            }
            _ => {}
        }
    }
    if out.pressure.len() != out.points.len() || out.velocity.len() != out.points.len() {
        return Err(bad("point data incomplete"));
    }
    Ok(out)
}
