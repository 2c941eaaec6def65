use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::post::FunctionalSeries;

fn csv_err(e: csv::Error) -> Error {
    Error::Format(format!("csv: {e}"))
}

#[derive(Serialize, Deserialize)]
struct FunctionalRow<'a> {
    t: f64,
    drag: f64,
    lift: f64,
    method: &'a str,
    level: usize,
}

pub fn write_functionals(path: &Path, s: &FunctionalSeries) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for i in 0..s.len() {
        w.serialize(FunctionalRow {
            t: s.time[i],
            drag: s.drag[i],
            lift: s.lift[i],
            method: &s.method,
            level: s.level,
        })
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_functionals(path: &Path) -> Result<FunctionalSeries> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let mut s = FunctionalSeries::default();
    for row in r.deserialize::<(f64, f64, f64, String, usize)>() {
        let (t, drag, lift, method, level) = row.map_err(csv_err)?;
        s.method = method;
        s.level = level;
        s.push(t, drag, lift)?;
    }
    Ok(s)
}

pub fn write_spectrum(path: &Path, spectrum: &[(f64, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["freq_hz", "amplitude"]).map_err(csv_err)?;
    for (f, a) in spectrum {
        w.serialize((f, a)).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Rows `(t, e_v, e_p)`.
pub fn write_errors(path: &Path, rows: &[(f64, f64, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["t", "e_v", "e_p"]).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}
