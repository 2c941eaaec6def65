use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use ndarray::{Array1, Array2};

use super::binary::{read_f64s, read_header, write_f64s, write_header};
use crate::error::{Error, Result};
use crate::net::{Activation, Arch, Mlp};
use crate::scalar::Real;

pub const MODEL_MAGIC: &[u8; 4] = b"DNMG";
pub const MODEL_VERSION: u32 = 1;

/// Patch layout the model was trained for.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelMeta {
    pub dim: u32,
    pub j: u32,
    pub layout_version: u32,
}

fn to_f64<T: Real>(v: impl IntoIterator<Item = T>) -> Vec<f64> {
    v.into_iter().map(|x| x.f64()).collect()
}

fn from_f64<T: Real>(v: Vec<f64>) -> Vec<T> {
    v.into_iter().map(T::c).collect()
}

pub fn write_model<T: Real>(w: &mut impl Write, m: &Mlp<T>, meta: ModelMeta) -> Result<()> {
    write_header(w, MODEL_MAGIC, MODEL_VERSION)?;
    let a = m.arch;
    for v in [a.n_in, a.n_hidden, a.depth, a.n_out] {
        w.write_u64::<LE>(v as u64)?;
    }
    w.write_u8(m.activation.tag())?;
    w.write_u32::<LE>(meta.layout_version)?;
    w.write_u32::<LE>(meta.dim)?;
    w.write_u32::<LE>(meta.j)?;
    let (eps, mom) = m
        .bn
        .first()
        .map(|b| (b.eps.f64(), b.momentum.f64()))
        .unwrap_or((1e-5, 0.1));
    w.write_f64::<LE>(eps)?;
    w.write_f64::<LE>(mom)?;
    w.write_f64::<LE>(m.output_scale.f64())?;
    write_f64s(w, &to_f64(m.input_mean.iter().copied()))?;
    write_f64s(w, &to_f64(m.input_std.iter().copied()))?;
    for (wt, bn) in m.weights.iter().zip(&m.bn) {
        write_f64s(w, &to_f64(wt.iter().copied()))?;
        for v in [&bn.gamma, &bn.beta, &bn.running_mean, &bn.running_var] {
            write_f64s(w, &to_f64(v.iter().copied()))?;
        }
    }
    write_f64s(w, &to_f64(m.weights[a.depth].iter().copied()))?;
    Ok(())
}

pub fn read_model<T: Real>(r: &mut impl Read) -> Result<(Mlp<T>, ModelMeta)> {
    read_header(r, MODEL_MAGIC, MODEL_VERSION)?;
    let mut dims = [0usize; 4];
    for d in &mut dims {
        *d = r.read_u64::<LE>()? as usize;
    }
    let arch = Arch::new(dims[0], dims[1], dims[2], dims[3]);
    if arch.depth == 0 || arch.n_in == 0 || arch.n_out == 0 || arch.n_hidden == 0 {
        return Err(Error::Format(format!("invalid network shape {dims:?}")));
    }
    let tag = r.read_u8()?;
    let activation =
        Activation::from_tag(tag).ok_or_else(|| Error::Format(format!("unknown activation tag {tag}")))?;
    let layout_version = r.read_u32::<LE>()?;
    let dim = r.read_u32::<LE>()?;
    let j = r.read_u32::<LE>()?;
    let eps = T::c(r.read_f64::<LE>()?);
    let momentum = T::c(r.read_f64::<LE>()?);
    let mut m = Mlp::<T>::zeros(arch, activation);
    m.output_scale = T::c(r.read_f64::<LE>()?);
    m.input_mean = Array1::from(from_f64::<T>(read_f64s(r, arch.n_in)?));
    m.input_std = Array1::from(from_f64::<T>(read_f64s(r, arch.n_in)?));
    let nh = arch.n_hidden;
    for i in 0..arch.depth {
        let cols = m.weights[i].ncols();
        m.weights[i] = Array2::from_shape_vec((nh, cols), from_f64(read_f64s(r, nh * cols)?))
            .expect("shape matches length");
        let bn = &mut m.bn[i];
        bn.eps = eps;
        bn.momentum = momentum;
        for v in [&mut bn.gamma, &mut bn.beta, &mut bn.running_mean, &mut bn.running_var] {
            *v = Array1::from(from_f64::<T>(read_f64s(r, nh)?));
        }
    }
    m.weights[arch.depth] = Array2::from_shape_vec((arch.n_out, nh), from_f64(read_f64s(r, arch.n_out * nh)?))
        .expect("shape matches length");
    Ok((
        m,
        ModelMeta {
            dim,
            j,
            layout_version,
        },
    ))
}

pub fn save_model<T: Real>(path: &Path, m: &Mlp<T>, meta: ModelMeta) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_model(&mut w, m, meta)?;
    w.flush()?;
    Ok(())
}

pub fn load_model<T: Real>(path: &Path) -> Result<(Mlp<T>, ModelMeta)> {
    read_model(&mut BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_everything() {
        let mut m = Mlp::<f64>::new(Arch::new(6, 5, 3, 2), Activation::Tanh, 4);
        m.bn[1].running_var.fill(1.7);
        m.bn[2].beta[3] = -0.25;
        m.input_mean.fill(0.3);
        m.output_scale = 0.04;
        let meta = ModelMeta {
            dim: 2,
            j: 1,
            layout_version: 1,
        };
        let mut buf = Vec::new();
        write_model(&mut buf, &m, meta).unwrap();
        let (back, meta2) = read_model::<f64>(&mut buf.as_slice()).unwrap();
        assert_eq!(back, m);
        assert_eq!(meta2, meta);
    }

    #[test]
    fn truncated_file_is_an_error() {
        let m = Mlp::<f64>::new(Arch::new(3, 4, 2, 2), Activation::Relu, 1);
        let meta = ModelMeta {
            dim: 2,
            j: 1,
            layout_version: 1,
        };
        let mut buf = Vec::new();
        write_model(&mut buf, &m, meta).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(read_model::<f64>(&mut buf.as_slice()).is_err());
    }
}
