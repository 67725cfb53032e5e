//! Versioned text file formats for forecasts, synthesized samples, and
//! evaluation reports.
//!
//! Every file starts with a format tag on line 1. Forecast and sample files
//! carry a provenance line (`# config <json>`, the full resolved
//! configuration) followed by one JSON record per line. Reports are a tag
//! line plus a pretty-printed JSON document.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ensemble::ForecastEnsemble;
use crate::error::{Error, Result};

/// Format tag of forecast files.
pub const FORECAST_TAG: &str = "diffseries/forecast v1";
/// Format tag of synthesized-sample files.
pub const SAMPLES_TAG: &str = "diffseries/samples v1";
/// Format tag of evaluation reports.
pub const REPORT_TAG: &str = "diffseries/report v1";

/// One series' forecast: sample paths over its target positions plus the
/// quantile summary at the nine standard levels.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ForecastRecord {
    /// Series index in the dataset.
    pub series: usize,
    /// Window start within the series.
    pub window_offset: usize,
    /// Window length.
    pub window_len: usize,
    /// Target positions within the window.
    pub target_indices: Vec<usize>,
    /// `n` sample paths over the targets.
    pub paths: Vec<Vec<f64>>,
    /// Quantile levels of `quantiles`.
    pub quantile_levels: Vec<f64>,
    /// `quantiles[level][timestep]`.
    pub quantiles: Vec<Vec<f64>>,
}

impl From<&ForecastEnsemble> for ForecastRecord {
    fn from(e: &ForecastEnsemble) -> Self {
        let summary = e.quantile_summary();
        let (n, k) = e.paths.dim();
        let paths = (0..n)
            .map(|i| (0..k).map(|j| e.paths[[i, j]]).collect())
            .collect();
        Self {
            series: e.series,
            window_offset: e.window_offset,
            window_len: e.window_len,
            target_indices: e.target_indices.clone(),
            paths,
            quantile_levels: summary.levels,
            quantiles: summary.values,
        }
    }
}

impl ForecastRecord {
    /// Rebuild the ensemble (drops the cached quantile summary).
    pub fn to_ensemble(&self) -> Result<ForecastEnsemble> {
        ForecastEnsemble::from_paths(
            self.series,
            self.window_offset,
            self.window_len,
            self.target_indices.clone(),
            self.paths.clone(),
        )
    }
}

/// One synthesized window in data units, with the scale it was
/// de-normalized by.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleRecord {
    /// Sample index.
    pub index: usize,
    /// De-normalization scale drawn from the training-scale distribution.
    pub scale: f64,
    /// The window values (channel 0).
    pub values: Vec<f64>,
}

fn write_tagged_lines<T: Serialize>(
    path: &Path,
    tag: &str,
    provenance: &serde_json::Value,
    records: impl Iterator<Item = T>,
) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "{tag}").unwrap();
    writeln!(out, "# config {provenance}").unwrap();
    for rec in records {
        serde_json::to_writer(&mut out, &rec).expect("serializable record");
        out.push(b'\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn read_tagged_lines<T: for<'de> Deserialize<'de>>(
    path: &Path,
    tag: &str,
) -> Result<(serde_json::Value, Vec<T>)> {
    let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = content.lines().enumerate();
    let parse_err = |line: usize, reason: String| Error::Parse {
        path: path.display().to_string(),
        line,
        reason,
    };
    let (_, first) = lines
        .next()
        .ok_or_else(|| parse_err(1, "empty file".into()))?;
    if first != tag {
        return Err(parse_err(1, format!("expected tag {tag:?}, found {first:?}")));
    }
    let mut provenance = serde_json::Value::Null;
    let mut records = Vec::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("# config ") {
            provenance = serde_json::from_str(rest)
                .map_err(|e| parse_err(idx + 1, format!("bad provenance: {e}")))?;
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        records.push(
            serde_json::from_str(line).map_err(|e| parse_err(idx + 1, e.to_string()))?,
        );
    }
    Ok((provenance, records))
}

/// Write a forecast file.
pub fn write_forecasts(
    path: impl AsRef<Path>,
    provenance: &serde_json::Value,
    ensembles: &[ForecastEnsemble],
) -> Result<()> {
    write_tagged_lines(
        path.as_ref(),
        FORECAST_TAG,
        provenance,
        ensembles.iter().map(ForecastRecord::from),
    )
}

/// Read a forecast file: the provenance and the records.
pub fn read_forecasts(path: impl AsRef<Path>) -> Result<(serde_json::Value, Vec<ForecastRecord>)> {
    read_tagged_lines(path.as_ref(), FORECAST_TAG)
}

/// Write a synthesized-samples file.
pub fn write_samples(
    path: impl AsRef<Path>,
    provenance: &serde_json::Value,
    samples: &[SampleRecord],
) -> Result<()> {
    write_tagged_lines(path.as_ref(), SAMPLES_TAG, provenance, samples.iter())
}

/// Read a synthesized-samples file.
pub fn read_samples(path: impl AsRef<Path>) -> Result<(serde_json::Value, Vec<SampleRecord>)> {
    read_tagged_lines(path.as_ref(), SAMPLES_TAG)
}

/// Per-series score inside a report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeriesScore {
    /// Series index.
    pub series: usize,
    /// The score.
    pub score: f64,
}

/// An evaluation report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Report {
    /// The resolved configuration that produced this report.
    pub config: serde_json::Value,
    /// Which metric `aggregate` holds (`"crps"` or `"lps"`).
    pub metric: String,
    /// Dataset-level score.
    pub aggregate: f64,
    /// Per-series scores (empty for LPS).
    pub per_series: Vec<SeriesScore>,
}

/// Write a report file.
pub fn write_report(path: impl AsRef<Path>, report: &Report) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    writeln!(out, "{REPORT_TAG}").unwrap();
    serde_json::to_writer_pretty(&mut out, report).expect("serializable report");
    out.push(b'\n');
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Read a report file back.
pub fn read_report(path: impl AsRef<Path>) -> Result<Report> {
    let path = path.as_ref();
    let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let body = content
        .strip_prefix(REPORT_TAG)
        .ok_or_else(|| Error::Parse {
            path: path.display().to_string(),
            line: 1,
            reason: format!("expected tag {REPORT_TAG:?}"),
        })?;
    serde_json::from_str(body).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        line: 2,
        reason: e.to_string(),
    })
}
