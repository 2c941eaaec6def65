use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Drag and lift coefficients over time for one run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FunctionalSeries {
    pub time: Vec<f64>,
    pub drag: Vec<f64>,
    pub lift: Vec<f64>,
    pub level: usize,
    pub method: String,
}

impl FunctionalSeries {
    pub fn new(method: impl Into<String>, level: usize) -> Self {
        Self {
            method: method.into(),
            level,
            ..Default::default()
        }
    }

    pub fn push(&mut self, t: f64, drag: f64, lift: f64) -> Result<()> {
        if self.time.last().is_some_and(|&last| t <= last) {
            return Err(Error::InvalidInput(format!("time {t} does not increase")));
        }
        self.time.push(t);
        self.drag.push(drag);
        self.lift.push(lift);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.time.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time.is_empty()
    }

    /// Values of `series` whose time lies in `[t0, t1]`.
    pub fn window<'a>(&'a self, series: &'a [f64], t0: f64, t1: f64) -> impl Iterator<Item = f64> + 'a {
        let eps = 1e-9 * (1.0 + t1.abs());
        self.time
            .iter()
            .zip(series)
            .filter(move |(&t, _)| t >= t0 - eps && t <= t1 + eps)
            .map(|(_, &v)| v)
    }
}

/// Relative Euclidean errors `(e_v, e_p)` of the velocity and pressure
/// blocks of `test` against `reference`, both node-major with `dim + 1`
/// components.
pub fn relative_errors(test: &[f64], reference: &[f64], dim: usize) -> Result<(f64, f64)> {
    if test.len() != reference.len() {
        return Err(Error::DimensionMismatch {
            context: "relative error vectors",
            expected: reference.len(),
            got: test.len(),
        });
    }
    let (dv, rv, dp, rp) = block_norms(test, reference, dim);
    if rv == 0.0 || rp == 0.0 {
        return Err(Error::InvalidInput("reference norm is zero".into()));
    }
    Ok(((dv / rv).sqrt(), (dp / rp).sqrt()))
}

/// Squared norms `(‖Δv‖², ‖v‖², ‖Δp‖², ‖p‖²)`.
pub fn block_norms(test: &[f64], reference: &[f64], dim: usize) -> (f64, f64, f64, f64) {
    let b = dim + 1;
    let mut out = (0.0, 0.0, 0.0, 0.0);
    for (i, (&a, &r)) in test.iter().zip(reference).enumerate() {
        let e = (a - r) * (a - r);
        if i % b == 0 {
            out.2 += e;
            out.3 += r * r;
        } else {
            out.0 += e;
            out.1 += r * r;
        }
    }
    out
}

/// `sqrt(Σ‖diff_n‖² k / Σ‖ref_n‖² k)` from per-step norms.
pub fn time_integrated_error(diff_norms: &[f64], ref_norms: &[f64], k: f64) -> Result<f64> {
    if diff_norms.is_empty() || diff_norms.len() != ref_norms.len() {
        return Err(Error::InvalidInput("error series empty or of unequal length".into()));
    }
    let num: f64 = diff_norms.iter().map(|v| v * v * k).sum();
    let den: f64 = ref_norms.iter().map(|v| v * v * k).sum();
    if den == 0.0 {
        return Err(Error::InvalidInput("reference norm is zero".into()));
    }
    Ok((num / den).sqrt())
}

/// One-sided amplitude spectrum of a uniformly sampled series after
/// removing its mean (rectangular window, no padding). Bin `j` has
/// frequency `j/(N k)` and amplitude `2|X_j|/N`, except the zero and
/// Nyquist bins which use `|X_j|/N`.
pub fn lift_spectrum(series: &[f64], k: f64) -> Result<Vec<(f64, f64)>> {
    let n = series.len();
    if n < 16 {
        return Err(Error::InvalidInput(format!("spectrum needs at least 16 samples, got {n}")));
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let mut buf: Vec<Complex<f64>> = series.iter().map(|&v| Complex::new(v - mean, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    Ok((0..=n / 2)
        .map(|j| {
            let edge = j == 0 || (n % 2 == 0 && j == n / 2);
            let a = buf[j].norm() / n as f64 * if edge { 1.0 } else { 2.0 };
            (j as f64 / (n as f64 * k), a)
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    /// `max − min`
    pub amp: f64,
}

pub fn summarize(values: impl IntoIterator<Item = f64>) -> Result<Summary> {
    let mut n = 0usize;
    let mut s = Summary {
        min: f64::INFINITY,
        max: f64::NEG_INFINITY,
        mean: 0.0,
        amp: 0.0,
    };
    for v in values {
        s.min = s.min.min(v);
        s.max = s.max.max(v);
        s.mean += v;
        n += 1;
    }
    if n == 0 {
        return Err(Error::InvalidInput("empty summary window".into()));
    }
    s.mean /= n as f64;
    s.amp = s.max - s.min;
    Ok(s)
}

/// Drag and lift summaries of a series over `[t0, t1]`.
pub fn summarize_window(series: &FunctionalSeries, t0: f64, t1: f64) -> Result<(Summary, Summary)> {
    Ok((
        summarize(series.window(&series.drag, t0, t1))?,
        summarize(series.window(&series.lift, t0, t1))?,
    ))
}
