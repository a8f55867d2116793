//! Report files: `report.json`, `report.csv` and one curve CSV per mode.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ablation::{ModeSummary, Report};
use crate::error::{Error, Result};

/// One `report.csv` row. Empty cells stand for missing values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub mode: String,
    pub runs: usize,
    pub failures: usize,
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
    pub lpips: Option<f64>,
    pub correct: Option<f64>,
    pub total: Option<f64>,
    pub step_ns: f64,
    pub mask_ns: f64,
    pub optimize_ns: f64,
    pub denoise_ns: f64,
    pub correspondence_ns: f64,
}

impl From<&ModeSummary> for CsvRow {
    fn from(m: &ModeSummary) -> Self {
        Self {
            mode: m.mode.clone(),
            runs: m.runs,
            failures: m.failures,
            psnr: m.psnr,
            ssim: m.ssim,
            lpips: m.lpips,
            correct: m.correct,
            total: m.total,
            step_ns: m.timing.step_ns,
            mask_ns: m.timing.mask_ns,
            optimize_ns: m.timing.optimize_ns,
            denoise_ns: m.timing.denoise_ns,
            correspondence_ns: m.timing.correspondence_ns,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step_index: usize,
    pub t: usize,
    pub correct: f64,
}

pub fn write_json(path: &Path, report: &Report) -> Result<()> {
    let mut text = serde_json::to_string_pretty(report).expect("report serializes");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json(path: &Path) -> Result<Report> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::format(path, e.to_string())
}

fn write_rows<T: Serialize>(path: &Path, headers: &[&str], rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path).map_err(|e| csv_error(path, e))?;
    // Written by hand so an empty report still gets its header row.
    w.write_record(headers).map_err(|e| csv_error(path, e))?;
    for row in rows {
        w.serialize(row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub const CSV_HEADER: [&str; 13] = [
    "mode", "runs", "failures", "psnr", "ssim", "lpips", "correct", "total", "step_ns", "mask_ns", "optimize_ns", "denoise_ns",
    "correspondence_ns",
];

pub fn write_csv(path: &Path, report: &Report) -> Result<()> {
    write_rows(path, &CSV_HEADER, report.modes.iter().map(CsvRow::from))
}

pub fn read_csv(path: &Path) -> Result<Vec<CsvRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    r.deserialize().collect::<std::result::Result<_, _>>().map_err(|e| csv_error(path, e))
}

pub fn curve_path(dir: &Path, mode: &str) -> PathBuf {
    dir.join(format!("curve_{mode}.csv"))
}

pub fn write_curve(path: &Path, summary: &ModeSummary, steps_total: usize) -> Result<()> {
    let points = summary.correct_curve.iter().enumerate().map(|(k, &c)| CurvePoint { step_index: k, t: steps_total - k, correct: c });
    write_rows(path, &["step_index", "t", "correct"], points)
}

/// Writes the JSON, the summary CSV and every curve into `dir`, creating it.
pub fn write_report(dir: &Path, report: &Report) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_json(&dir.join("report.json"), report)?;
    write_csv(&dir.join("report.csv"), report)?;
    for m in &report.modes {
        write_curve(&curve_path(dir, &m.mode), m, report.steps_total)?;
    }
    Ok(())
}
