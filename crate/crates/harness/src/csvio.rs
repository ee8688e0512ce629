//! CSV emission. Schema: one header row, fixed column order, 17
//! significant digits, LF line endings. Rows are streamed so a run that
//! blows up leaves its partial output on disk.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::DVector;

use crate::error::{HarnessError, Result};

/// `{:.16e}` renders 17 significant digits, enough to round-trip f64.
pub fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

pub struct CsvWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl CsvWriter {
    pub fn create(path: &Path, header: &[&str]) -> Result<Self> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(HarnessError::io(parent))?;
        }
        let file = File::create(path).map_err(HarnessError::io(path))?;
        let mut out = BufWriter::new(file);
        out.write_all(header.join(",").as_bytes())
            .and_then(|_| out.write_all(b"\n"))
            .map_err(HarnessError::io(path))?;
        Ok(Self {
            path: path.to_path_buf(),
            out,
        })
    }

    pub fn row(&mut self, fields: &[String]) -> Result<()> {
        self.out
            .write_all(fields.join(",").as_bytes())
            .and_then(|_| self.out.write_all(b"\n"))
            .map_err(HarnessError::io(&self.path))
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush().map_err(HarnessError::io(&self.path))
    }
}

/// Writes `trajectory.csv` with columns `t, y0, ..., y(d-1)`.
pub fn write_trajectory(path: &Path, times: &[f64], states: &[DVector<f64>]) -> Result<()> {
    let dim = states.first().map_or(0, |y| y.len());
    let cols: Vec<String> = std::iter::once("t".to_string())
        .chain((0..dim).map(|i| format!("y{i}")))
        .collect();
    let header: Vec<&str> = cols.iter().map(|s| s.as_str()).collect();
    let mut w = CsvWriter::create(path, &header)?;
    for (t, y) in times.iter().zip(states) {
        let mut row = Vec::with_capacity(dim + 1);
        row.push(fmt(*t));
        row.extend(y.iter().map(|x| fmt(*x)));
        w.row(&row)?;
    }
    w.finish()
}

/// Writes `energy.csv` with columns `t, H, H_minus_H0`.
pub fn write_energy(path: &Path, times: &[f64], energies: &[f64]) -> Result<()> {
    let mut w = CsvWriter::create(path, &["t", "H", "H_minus_H0"])?;
    let h0 = energies.first().copied().unwrap_or(0.0);
    for (t, h) in times.iter().zip(energies) {
        w.row(&[fmt(*t), fmt(*h), fmt(h - h0)])?;
    }
    w.finish()
}

/// Writes `diagnostics.csv` with columns `step, iterations, residual,
/// converged`.
pub fn write_diagnostics(
    path: &Path,
    iterations: &[u32],
    residuals: &[f64],
    converged: &[bool],
) -> Result<()> {
    let mut w = CsvWriter::create(path, &["step", "iterations", "residual", "converged"])?;
    for (n, ((it, res), ok)) in iterations.iter().zip(residuals).zip(converged).enumerate() {
        w.row(&[
            n.to_string(),
            it.to_string(),
            fmt(*res),
            (if *ok { "1" } else { "0" }).to_string(),
        ])?;
    }
    w.finish()
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(HarnessError::io(parent))?;
    }
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| HarnessError::Config(format!("serialization failed: {e}")))?;
    text.push('\n');
    std::fs::write(path, text).map_err(HarnessError::io(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_significant_digits_round_trip() {
        for &x in &[0.1, 1.0 / 3.0, 1.2345678901234567e-10, -987654.321] {
            let s = fmt(x);
            let back: f64 = s.parse().unwrap();
            assert_eq!(back.to_bits(), x.to_bits(), "{s}");
        }
    }

    #[test]
    fn lf_line_endings_and_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        write_energy(&path, &[0.0, 0.5], &[2.0, 1.5]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("t,H,H_minus_H0\n"));
        assert!(!text.contains('\r'));
        assert_eq!(text.lines().count(), 3);
    }
}
