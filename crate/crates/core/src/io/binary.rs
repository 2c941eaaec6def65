//! Versioned little-endian binary containers: checkpoints (`DMGC`) and
//! state trajectories (`DMGT`).

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};

pub(crate) fn write_header(w: &mut impl Write, magic: &[u8; 4], version: u32) -> Result<()> {
    w.write_all(magic)?;
    w.write_u32::<LE>(version)?;
    Ok(())
}

pub(crate) fn read_header(r: &mut impl Read, magic: &[u8; 4], version: u32) -> Result<()> {
    let mut m = [0u8; 4];
    r.read_exact(&mut m)?;
    if &m != magic {
        return Err(Error::Format(format!(
            "expected magic {:?}, found {:?}",
            String::from_utf8_lossy(magic),
            String::from_utf8_lossy(&m)
        )));
    }
    let v = r.read_u32::<LE>()?;
    if v != version {
        return Err(Error::Format(format!(
            "{} file version {v} is not supported (expected {version})",
            String::from_utf8_lossy(magic)
        )));
    }
    Ok(())
}

pub(crate) fn write_f64s(w: &mut impl Write, v: &[f64]) -> Result<()> {
    for &x in v {
        w.write_f64::<LE>(x)?;
    }
    Ok(())
}

pub(crate) fn read_f64s(r: &mut impl Read, n: usize) -> Result<Vec<f64>> {
    let mut out = vec![0.0; n];
    r.read_f64_into::<LE>(&mut out)?;
    Ok(out)
}

/// Named state vectors of one time step.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub step: u64,
    pub time: f64,
    pub fields: Vec<(String, Vec<f64>)>,
}

impl Checkpoint {
    pub const MAGIC: &'static [u8; 4] = b"DMGC";
    pub const VERSION: u32 = 1;

    pub fn field(&self, name: &str) -> Option<&[f64]> {
        self.fields.iter().find(|(n, _)| n == name).map(|(_, v)| v.as_slice())
    }

    pub fn insert(&mut self, name: &str, v: Vec<f64>) {
        self.fields.retain(|(n, _)| n != name);
        self.fields.push((name.to_string(), v));
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        write_header(&mut w, Self::MAGIC, Self::VERSION)?;
        w.write_u64::<LE>(self.step)?;
        w.write_f64::<LE>(self.time)?;
        w.write_u32::<LE>(self.fields.len() as u32)?;
        for (name, v) in &self.fields {
            w.write_u32::<LE>(name.len() as u32)?;
            w.write_all(name.as_bytes())?;
            w.write_u64::<LE>(v.len() as u64)?;
            write_f64s(&mut w, v)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        read_header(&mut r, Self::MAGIC, Self::VERSION)?;
        let step = r.read_u64::<LE>()?;
        let time = r.read_f64::<LE>()?;
        let n = r.read_u32::<LE>()? as usize;
        let mut fields = Vec::with_capacity(n);
        for _ in 0..n {
            let len = r.read_u32::<LE>()? as usize;
            let mut name = vec![0u8; len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|_| Error::Format("field name is not UTF-8".into()))?;
            let len = r.read_u64::<LE>()? as usize;
            fields.push((name, read_f64s(&mut r, len)?));
        }
        Ok(Self { step, time, fields })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TrajectoryHeader {
    pub dim: u32,
    pub level: u32,
    pub n_dofs: u64,
}

/// Appends one state per step to a `DMGT` file.
pub struct TrajectoryWriter {
    w: BufWriter<File>,
    header: TrajectoryHeader,
}

pub const TRAJECTORY_MAGIC: &[u8; 4] = b"DMGT";
pub const TRAJECTORY_VERSION: u32 = 1;

impl TrajectoryWriter {
    pub fn create(path: &Path, header: TrajectoryHeader) -> Result<Self> {
        let mut w = BufWriter::new(File::create(path)?);
        write_header(&mut w, TRAJECTORY_MAGIC, TRAJECTORY_VERSION)?;
        w.write_u32::<LE>(header.dim)?;
        w.write_u32::<LE>(header.level)?;
        w.write_u64::<LE>(header.n_dofs)?;
        Ok(Self { w, header })
    }

    pub fn push(&mut self, step: u64, time: f64, x: &[f64]) -> Result<()> {
        if x.len() as u64 != self.header.n_dofs {
            return Err(Error::DimensionMismatch {
                context: "trajectory record",
                expected: self.header.n_dofs as usize,
                got: x.len(),
            });
        }
        self.w.write_u64::<LE>(step)?;
        self.w.write_f64::<LE>(time)?;
        write_f64s(&mut self.w, x)
    }

    pub fn finish(mut self) -> Result<()> {
        self.w.flush()?;
        Ok(())
    }
}

/// Sequential reader of a `DMGT` file.
pub struct TrajectoryReader {
    r: BufReader<File>,
    pub header: TrajectoryHeader,
}

impl TrajectoryReader {
    pub fn open(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        read_header(&mut r, TRAJECTORY_MAGIC, TRAJECTORY_VERSION)?;
        let header = TrajectoryHeader {
            dim: r.read_u32::<LE>()?,
            level: r.read_u32::<LE>()?,
            n_dofs: r.read_u64::<LE>()?,
        };
        Ok(Self { r, header })
    }

    /// Next `(step, time, state)`, or `None` at the end of the file.
    pub fn next_record(&mut self) -> Result<Option<(u64, f64, Vec<f64>)>> {
        let step = match self.r.read_u64::<LE>() {
            Ok(s) => s,
            Err(e) if e.kind() == ErrorKind::UnexpectedEof => return Ok(None),
            Err(e) => return Err(e.into()),
        };
        let t = self.r.read_f64::<LE>()?;
        let x = read_f64s(&mut self.r, self.header.n_dofs as usize)?;
        Ok(Some((step, t, x)))
    }

    pub fn read_all(mut self) -> Result<Vec<(u64, f64, Vec<f64>)>> {
        let mut out = Vec::new();
        while let Some(rec) = self.next_record()? {
            out.push(rec);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.bin");
        let mut c = Checkpoint {
            step: 7,
            time: 0.07,
            fields: vec![],
        };
        c.insert("x", vec![1.0, -2.5, 1e-300]);
        c.insert("b", vec![]);
        c.write(&p).unwrap();
        assert_eq!(Checkpoint::read(&p).unwrap(), c);
    }

    #[test]
    fn wrong_magic_and_version_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.bin");
        std::fs::write(&p, b"XXXX\x01\0\0\0").unwrap();
        assert!(matches!(Checkpoint::read(&p), Err(Error::Format(_))));
        std::fs::write(&p, b"DMGC\x09\0\0\0").unwrap();
        match Checkpoint::read(&p) {
            Err(Error::Format(m)) => assert!(m.contains("version 9")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn trajectory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.dmgt");
        let h = TrajectoryHeader {
            dim: 2,
            level: 3,
            n_dofs: 3,
        };
        let mut w = TrajectoryWriter::create(&p, h).unwrap();
        w.push(0, 0.0, &[1.0, 2.0, 3.0]).unwrap();
        w.push(1, 0.5, &[4.0, 5.0, 6.0]).unwrap();
        assert!(w.push(2, 1.0, &[1.0]).is_err());
        w.finish().unwrap();
        let r = TrajectoryReader::open(&p).unwrap();
        assert_eq!(r.header, h);
        let recs = r.read_all().unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[1], (1, 0.5, vec![4.0, 5.0, 6.0]));
    }
}
