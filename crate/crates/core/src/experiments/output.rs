//! File writers and small statistics shared by the experiment commands.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::ParamId;

/// Where and how a command writes its results.
#[derive(Clone, Debug)]
pub struct RunContext {
    pub out_dir: PathBuf,
    /// Added to every configured seed before seeding the generator.
    pub seed_offset: i64,
    /// Also render SVG charts.
    pub svg: bool,
}

impl RunContext {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        Self {
            out_dir: out_dir.into(),
            seed_offset: 0,
            svg: false,
        }
    }

    pub fn path(&self, file: &str) -> PathBuf {
        self.out_dir.join(file)
    }

    pub fn ensure_dir(&self) -> Result<()> {
        fs::create_dir_all(&self.out_dir).map_err(|e| io_err(&self.out_dir, e))
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Config(format!("cannot write {}: {e}", path.display()))
}

/// UTF-8 CSV with a header row. Floats use the shortest representation that
/// parses back to the same double.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    for row in rows {
        w.serialize(row).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| io_err(path, e))?;
    fs::write(path, text + "\n").map_err(|e| io_err(path, e))
}

/// Label of a Hessian block, e.g. `Q:K` or `h1.Q:V`.
pub fn block_name(row: ParamId, col: ParamId) -> String {
    format!("{row}:{col}")
}

/// Upper-triangular pairs `(i <= j)` of a parameter list.
pub fn upper_pairs(params: &[ParamId]) -> Vec<(ParamId, ParamId)> {
    let mut out = Vec::new();
    for (i, &a) in params.iter().enumerate() {
        for &b in &params[i..] {
            out.push((a, b));
        }
    }
    out
}

/// Mean and standard error of the mean (zero for a single value).
pub fn mean_sem(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Least-squares line `y = a + b x`; returns `(b, stderr(b))`.
pub fn fit_slope(x: &[f64], y: &[f64]) -> Option<(f64, f64)> {
    let n = x.len();
    if n < 2 || n != y.len() {
        return None;
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let stderr = if n > 2 {
        let intercept = my - slope * mx;
        let rss: f64 = x
            .iter()
            .zip(y)
            .map(|(a, b)| (b - intercept - slope * a).powi(2))
            .sum();
        (rss / (nf - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    Some((slope, stderr))
}

/// Log-log slope of `norms` against `sigmas`; `None` if any norm is zero.
pub fn log_log_slope(sigmas: &[f64], norms: &[f64]) -> Option<(f64, f64)> {
    if norms.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
        return None;
    }
    let lx: Vec<f64> = sigmas.iter().map(|s| s.ln()).collect();
    let ly: Vec<f64> = norms.iter().map(|s| s.ln()).collect();
    fit_slope(&lx, &ly)
}

/// Median of a nonempty slice (mean of the middle pair for even lengths).
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}
