use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::binary::{read_f64s, read_header, write_f64s, write_header};
use crate::error::{Error, Result};
use crate::net::Samples;

pub const DATASET_MAGIC: &[u8; 4] = b"DMGD";
pub const DATASET_VERSION: u32 = 1;
pub const SHARD_BYTES: usize = 256 << 20;

/// Column layout of a training set: `[state | residual | geometry]`
/// inputs and velocity targets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetLayout {
    pub dim: usize,
    pub j: usize,
    pub n_dof_patch: usize,
    pub n_geo: usize,
}

impl DatasetLayout {
    pub fn new(dim: usize, j: usize) -> Self {
        Self {
            dim,
            j,
            n_dof_patch: crate::mesh::n_dof_patch(dim, j),
            n_geo: crate::mesh::n_geo(dim),
        }
    }

    pub fn n_in(&self) -> usize {
        2 * self.n_dof_patch + self.n_geo
    }

    pub fn n_out(&self) -> usize {
        self.dim * self.n_dof_patch / (self.dim + 1)
    }

    /// Statistics group of input column `c`.
    fn input_group(&self, c: usize) -> String {
        let b = self.dim + 1;
        let comp = |k: usize| if k % b == 0 { "p".to_string() } else { format!("v{}", k % b) };
        if c < self.n_dof_patch {
            format!("state.{}", comp(c))
        } else if c < 2 * self.n_dof_patch {
            format!("residual.{}", comp(c - self.n_dof_patch))
        } else {
            let g = c - 2 * self.n_dof_patch;
            let n_edges = self.dim << (self.dim - 1);
            let n_diag = 1 << (self.dim - 1);
            if g < n_edges {
                "geometry.edge".into()
            } else if g < n_edges + n_diag {
                "geometry.diagonal".into()
            } else {
                "geometry.angle".into()
            }
        }
    }

    fn output_group(&self, c: usize) -> String {
        format!("target.v{}", c % self.dim + 1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentStats {
    pub count: u64,
    pub min: f64,
    pub mean: f64,
    pub max: f64,
    pub std: f64,
    #[serde(skip)]
    m2: f64,
}

impl Default for ComponentStats {
    fn default() -> Self {
        Self {
            count: 0,
            min: f64::INFINITY,
            mean: 0.0,
            max: f64::NEG_INFINITY,
            std: 0.0,
            m2: 0.0,
        }
    }
}

impl ComponentStats {
    fn push(&mut self, v: f64) {
        self.count += 1;
        let d = v - self.mean;
        self.mean += d / self.count as f64;
        self.m2 += d * (v - self.mean);
        self.min = self.min.min(v);
        self.max = self.max.max(v);
        self.std = (self.m2 / self.count as f64).sqrt();
    }
}

/// Per-component statistics of a dataset, keyed by group name
/// (`state.p`, `residual.v1`, `geometry.angle`, `target.v2`, ...).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub layout: Option<DatasetLayout>,
    pub rows: u64,
    pub shards: usize,
    pub groups: BTreeMap<String, ComponentStats>,
}

#[derive(Clone, Debug)]
struct StatsAccumulator {
    layout: DatasetLayout,
    in_groups: Vec<usize>,
    out_groups: Vec<usize>,
    names: Vec<String>,
    acc: Vec<ComponentStats>,
    rows: u64,
}

impl StatsAccumulator {
    fn new(layout: DatasetLayout) -> Self {
        let mut names: Vec<String> = Vec::new();
        let index = |n: String, names: &mut Vec<String>| match names.iter().position(|x| *x == n) {
            Some(i) => i,
            None => {
                names.push(n);
                names.len() - 1
            }
        };
        let in_groups = (0..layout.n_in()).map(|c| index(layout.input_group(c), &mut names)).collect();
        let out_groups = (0..layout.n_out()).map(|c| index(layout.output_group(c), &mut names)).collect();
        let acc = vec![ComponentStats::default(); names.len()];
        Self {
            layout,
            in_groups,
            out_groups,
            names,
            acc,
            rows: 0,
        }
    }

    fn push(&mut self, input: &[f64], target: &[f64]) {
        for (v, &g) in input.iter().zip(&self.in_groups) {
            self.acc[g].push(*v);
        }
        for (v, &g) in target.iter().zip(&self.out_groups) {
            self.acc[g].push(*v);
        }
        self.rows += 1;
    }

    fn finish(self, shards: usize) -> DatasetStats {
        DatasetStats {
            layout: Some(self.layout),
            rows: self.rows,
            shards,
            groups: self.names.into_iter().zip(self.acc).collect(),
        }
    }
}

impl DatasetStats {
    pub fn from_samples(layout: DatasetLayout, s: &Samples<f64>) -> Self {
        let mut acc = StatsAccumulator::new(layout);
        for (x, t) in s.inputs.outer_iter().zip(s.targets.outer_iter()) {
            acc.push(x.as_slice().unwrap(), t.as_slice().unwrap());
        }
        acc.finish(0)
    }
}

pub fn shard_path(stem: &Path, i: usize) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(format!(".{i:03}.dmgd"));
    PathBuf::from(s)
}

pub fn stats_path(stem: &Path) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(".stats.json");
    PathBuf::from(s)
}

/// Streams rows into size-bounded shards and a statistics sidecar.
pub struct DatasetWriter {
    stem: PathBuf,
    layout: DatasetLayout,
    rows_per_shard: usize,
    shard: usize,
    pending: Vec<f64>,
    pending_rows: usize,
    stats: StatsAccumulator,
}

impl DatasetWriter {
    pub fn create(stem: &Path, layout: DatasetLayout) -> Result<Self> {
        Self::with_shard_bytes(stem, layout, SHARD_BYTES)
    }

    pub fn with_shard_bytes(stem: &Path, layout: DatasetLayout, bytes: usize) -> Result<Self> {
        if let Some(dir) = stem.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let row_bytes = 8 * (layout.n_in() + layout.n_out());
        Ok(Self {
            stem: stem.to_path_buf(),
            layout,
            rows_per_shard: (bytes / row_bytes).max(1),
            shard: 0,
            pending: Vec::new(),
            pending_rows: 0,
            stats: StatsAccumulator::new(layout),
        })
    }

    pub fn push(&mut self, inputs: ArrayView2<f64>, targets: ArrayView2<f64>) -> Result<()> {
        let (ni, no) = (self.layout.n_in(), self.layout.n_out());
        if inputs.ncols() != ni || targets.ncols() != no || inputs.nrows() != targets.nrows() {
            return Err(Error::DimensionMismatch {
                context: "dataset rows",
                expected: ni + no,
                got: inputs.ncols() + targets.ncols(),
            });
        }
        for (x, t) in inputs.outer_iter().zip(targets.outer_iter()) {
            let (x, t) = (x.to_vec(), t.to_vec());
            self.stats.push(&x, &t);
            self.pending.extend_from_slice(&x);
            self.pending.extend_from_slice(&t);
            self.pending_rows += 1;
            if self.pending_rows == self.rows_per_shard {
                self.flush_shard()?;
            }
        }
        Ok(())
    }

    fn flush_shard(&mut self) -> Result<()> {
        let mut w = BufWriter::new(File::create(shard_path(&self.stem, self.shard))?);
        write_header(&mut w, DATASET_MAGIC, DATASET_VERSION)?;
        let l = self.layout;
        w.write_u32::<LE>(l.dim as u32)?;
        w.write_u32::<LE>(l.j as u32)?;
        for v in [l.n_dof_patch, l.n_geo, l.n_in(), l.n_out(), self.pending_rows] {
            w.write_u64::<LE>(v as u64)?;
        }
        write_f64s(&mut w, &self.pending)?;
        w.flush()?;
        self.pending.clear();
        self.pending_rows = 0;
        self.shard += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<DatasetStats> {
        if self.pending_rows > 0 || self.shard == 0 {
            self.flush_shard()?;
        }
        let stats = self.stats.finish(self.shard);
        std::fs::write(
            stats_path(&self.stem),
            serde_json::to_string_pretty(&stats).expect("statistics serialize"),
        )?;
        Ok(stats)
    }
}

/// Reads all shards of a dataset.
pub fn read_dataset(stem: &Path) -> Result<(DatasetLayout, Samples<f64>)> {
    let mut layout: Option<DatasetLayout> = None;
    let mut inputs = Vec::new();
    let mut targets = Vec::new();
    let mut rows = 0usize;
    let mut i = 0;
    while shard_path(stem, i).exists() {
        let mut r = BufReader::new(File::open(shard_path(stem, i))?);
        read_header(&mut r, DATASET_MAGIC, DATASET_VERSION)?;
        let dim = r.read_u32::<LE>()? as usize;
        let j = r.read_u32::<LE>()? as usize;
        let mut h = [0usize; 5];
        for v in &mut h {
            *v = r.read_u64::<LE>()? as usize;
        }
        let l = DatasetLayout {
            dim,
            j,
            n_dof_patch: h[0],
            n_geo: h[1],
        };
        if l.n_in() != h[2] || l.n_out() != h[3] {
            return Err(Error::Format(format!("inconsistent dataset header in shard {i}")));
        }
        if layout.is_some_and(|p| p != l) {
            return Err(Error::Format(format!("shard {i} has a different layout")));
        }
        layout = Some(l);
        let data = read_f64s(&mut r, h[4] * (h[2] + h[3]))?;
        for row in data.chunks(h[2] + h[3]) {
            inputs.extend_from_slice(&row[..h[2]]);
            targets.extend_from_slice(&row[h[2]..]);
        }
        rows += h[4];
        i += 1;
    }
    let layout = layout.ok_or_else(|| Error::InvalidInput(format!("no dataset shards at {}", stem.display())))?;
    let inputs = Array2::from_shape_vec((rows, layout.n_in()), inputs).expect("row count consistent");
    let targets = Array2::from_shape_vec((rows, layout.n_out()), targets).expect("row count consistent");
    Ok((layout, Samples::new(inputs, targets)?))
}

pub fn read_stats(stem: &Path) -> Result<DatasetStats> {
    let s = std::fs::read_to_string(stats_path(stem))?;
    serde_json::from_str(&s).map_err(|e| Error::Format(format!("dataset statistics: {e}")))
}
