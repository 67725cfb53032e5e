//! Dataset ingestion, windowing, normalization, lag channels, and
//! missingness masks.
//!
//! Input data is JSON lines, one record per series with fields `start`
//! (ISO-8601 string), `freq` (`"H"` or `"D"`), and `target` (numeric array).

mod synth;

pub use synth::{synth_generate, SynthSpec};

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::guidance::ObservationMask;

/// Sampling frequency of a series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Freq {
    /// Hourly observations.
    #[serde(rename = "H")]
    Hourly,
    /// Daily observations.
    #[serde(rename = "D")]
    Daily,
}

/// One univariate series.
#[derive(Debug, Clone)]
pub struct Series {
    /// ISO-8601 timestamp of the first observation.
    pub start: String,
    /// Observation frequency.
    pub freq: Freq,
    /// The values; always finite.
    pub values: Vec<f64>,
}

/// A collection of series plus the window protocol used for training and
/// evaluation.
#[derive(Debug, Clone)]
pub struct Dataset {
    /// The series.
    pub series: Vec<Series>,
    /// Observed history length per evaluation window.
    pub context_length: usize,
    /// Forecast horizon per evaluation window.
    pub prediction_length: usize,
}

#[derive(Deserialize)]
struct JsonRecord {
    start: String,
    freq: String,
    target: Vec<f64>,
}

impl Dataset {
    /// Full window length: context plus horizon.
    pub fn window_len(&self) -> usize {
        self.context_length + self.prediction_length
    }

    /// Load a JSON-lines file. Context and prediction lengths default by
    /// majority frequency (hourly: 336/24, daily: 360/30) and can be
    /// overridden with [`Dataset::with_lengths`].
    pub fn from_jsonl(path: impl AsRef<Path>) -> Result<Dataset> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let reader = BufReader::new(file);
        let mut series = Vec::new();
        for (idx, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: JsonRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
                path: path.display().to_string(),
                line: idx + 1,
                reason: e.to_string(),
            })?;
            let freq = match rec.freq.as_str() {
                "H" => Freq::Hourly,
                "D" => Freq::Daily,
                other => {
                    return Err(Error::Parse {
                        path: path.display().to_string(),
                        line: idx + 1,
                        reason: format!("unknown freq {other:?}, expected \"H\" or \"D\""),
                    })
                }
            };
            if let Some(pos) = rec.target.iter().position(|v| !v.is_finite()) {
                return Err(Error::Parse {
                    path: path.display().to_string(),
                    line: idx + 1,
                    reason: format!("non-finite target value at position {pos}"),
                });
            }
            series.push(Series {
                start: rec.start,
                freq,
                values: rec.target,
            });
        }
        let hourly = series.iter().filter(|s| s.freq == Freq::Hourly).count();
        let (ctx, pred) = if hourly * 2 >= series.len() {
            (336, 24)
        } else {
            (360, 30)
        };
        Ok(Dataset {
            series,
            context_length: ctx,
            prediction_length: pred,
        })
    }

    /// Override the window protocol.
    pub fn with_lengths(mut self, context_length: usize, prediction_length: usize) -> Dataset {
        self.context_length = context_length;
        self.prediction_length = prediction_length;
        self
    }

    /// Write the series back out as JSON lines.
    pub fn to_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        use std::io::Write;
        let path = path.as_ref();
        let mut out = Vec::new();
        for s in &self.series {
            let rec = serde_json::json!({
                "start": s.start,
                "freq": match s.freq { Freq::Hourly => "H", Freq::Daily => "D" },
                "target": s.values,
            });
            writeln!(out, "{rec}").unwrap();
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    /// Actual values over the final window's horizon of one series.
    pub fn horizon_actuals(&self, series: usize) -> Result<&[f64]> {
        let s = self.series.get(series).ok_or_else(|| {
            Error::Alignment(format!("series {series} not present in dataset"))
        })?;
        let n = s.values.len();
        let h = self.prediction_length;
        if n < self.window_len() {
            return Err(Error::Alignment(format!(
                "series {series} has {n} values, shorter than one window ({})",
                self.window_len()
            )));
        }
        Ok(&s.values[n - h..])
    }
}

/// A normalized window. `values` hold the slice divided by `scale`; the
/// original slice is retained so the round trip is exact.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaledWindow {
    /// Normalized values.
    pub values: Vec<f64>,
    /// The divisor: mean absolute value of the window, or 1 if that is 0.
    pub scale: f64,
    /// `(series index, offset)` the window was cut from.
    pub origin: (usize, usize),
    raw: Vec<f64>,
}

impl ScaledWindow {
    /// The original, unscaled slice.
    pub fn inverse(&self) -> &[f64] {
        &self.raw
    }
}

/// Mean absolute value with the all-zero fallback of 1.
pub fn mean_abs_scale(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 1.0;
    }
    let m = values.iter().map(|v| v.abs()).sum::<f64>() / values.len() as f64;
    if m == 0.0 {
        1.0
    } else {
        m
    }
}

/// Normalize a window by the mean of its absolute values.
pub fn mean_scale(window: &[f64]) -> ScaledWindow {
    let scale = mean_abs_scale(window);
    ScaledWindow {
        values: window.iter().map(|v| v / scale).collect(),
        scale,
        origin: (0, 0),
        raw: window.to_vec(),
    }
}

/// Cut a uniformly random window of length `len` from a series.
pub fn slice_random_window(
    series: &Series,
    series_idx: usize,
    len: usize,
    rng: &mut impl Rng,
) -> Result<ScaledWindow> {
    if series.values.len() < len {
        return Err(Error::Parameter {
            name: "series",
            reason: format!(
                "series {series_idx} has {} values, need {len}",
                series.values.len()
            ),
        });
    }
    let offset = rng.random_range(0..=series.values.len() - len);
    let mut w = mean_scale(&series.values[offset..offset + len]);
    w.origin = (series_idx, offset);
    Ok(w)
}

/// Stack a window and its lagged copies along the channel axis.
///
/// Channel 0 is `values[offset..offset+len]`; channel `j` is the same window
/// shifted back by `lags[j-1]`.
pub fn build_lag_matrix(
    values: &[f64],
    offset: usize,
    len: usize,
    lags: &[usize],
) -> Result<Array2<f64>> {
    if offset + len > values.len() {
        return Err(Error::Parameter {
            name: "offset",
            reason: format!(
                "window [{offset}, {}) exceeds series length {}",
                offset + len,
                values.len()
            ),
        });
    }
    for &lag in lags {
        if lag > offset {
            return Err(Error::Parameter {
                name: "lags",
                reason: format!("lag {lag} requires offset >= {lag}, got {offset}"),
            });
        }
    }
    let c = 1 + lags.len();
    let mut x = Array2::zeros((len, c));
    for l in 0..len {
        x[[l, 0]] = values[offset + l];
        for (j, &lag) in lags.iter().enumerate() {
            x[[l, j + 1]] = values[offset + l - lag];
        }
    }
    Ok(x)
}

/// The three context-missingness patterns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MissingScenario {
    /// Uniformly random context positions are unobserved.
    Random,
    /// A contiguous block at the start of the context is unobserved.
    BlackoutStart,
    /// A contiguous block at the end of the context is unobserved.
    BlackoutEnd,
}

/// Build a channel-0 observation pattern over a `context + horizon` window.
///
/// `floor(ratio * context_len)` context positions are marked unobserved
/// according to the scenario; horizon positions are always unobserved.
/// Observed values are left at zero and filled in later from a window.
pub fn make_missing_mask(
    scenario: MissingScenario,
    ratio: f64,
    context_len: usize,
    horizon: usize,
    rng: &mut impl Rng,
) -> Result<ObservationMask> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::Parameter {
            name: "ratio",
            reason: format!("must be in [0, 1], got {ratio}"),
        });
    }
    let len = context_len + horizon;
    let k = (ratio * context_len as f64).floor() as usize;
    let mut obs = Array2::from_elem((len, 1), false);
    for l in 0..context_len {
        obs[[l, 0]] = true;
    }
    match scenario {
        MissingScenario::Random => {
            // Partial Fisher-Yates over the context indices.
            let mut idx: Vec<usize> = (0..context_len).collect();
            for i in 0..k.min(context_len) {
                let j = rng.random_range(i..context_len);
                idx.swap(i, j);
                obs[[idx[i], 0]] = false;
            }
        }
        MissingScenario::BlackoutStart => {
            for l in 0..k.min(context_len) {
                obs[[l, 0]] = false;
            }
        }
        MissingScenario::BlackoutEnd => {
            for l in context_len.saturating_sub(k)..context_len {
                obs[[l, 0]] = false;
            }
        }
    }
    Ok(ObservationMask {
        values: Array2::zeros((len, 1)),
        obs,
    })
}

/// A forecasting task over one window: the observation mask (with normalized
/// observed values), the scale factor, and where the window came from.
#[derive(Debug, Clone)]
pub struct SeriesWindow {
    /// Series index in the dataset.
    pub series: usize,
    /// Window start within the series.
    pub offset: usize,
    /// The normalizer: mean absolute value of the observed context entries.
    pub scale: f64,
    /// Observed positions and their normalized values, `L x C`.
    pub mask: ObservationMask,
}

impl SeriesWindow {
    /// Build the final-window forecasting task for one series.
    ///
    /// The window is the last `context + horizon` values. `pattern`, when
    /// given, supplies the channel-0 observation pattern (a missing-value
    /// scenario); otherwise the full context is observed. Lag channels are
    /// derived from history before the window and, being known at inference,
    /// are marked observed when `guide_lags` is set.
    pub fn forecast_task(
        dataset: &Dataset,
        series_idx: usize,
        lags: &[usize],
        pattern: Option<&ObservationMask>,
        guide_lags: bool,
    ) -> Result<SeriesWindow> {
        let s = dataset.series.get(series_idx).ok_or_else(|| {
            Error::Alignment(format!("series {series_idx} not present in dataset"))
        })?;
        let len = dataset.window_len();
        if s.values.len() < len {
            return Err(Error::Parameter {
                name: "series",
                reason: format!(
                    "series {series_idx} has {} values, need {len} for a window",
                    s.values.len()
                ),
            });
        }
        Self::forecast_task_at(
            dataset,
            series_idx,
            s.values.len() - len,
            lags,
            pattern,
            guide_lags,
        )
    }

    /// Build a forecasting task over the window starting at `offset`.
    pub fn forecast_task_at(
        dataset: &Dataset,
        series_idx: usize,
        offset: usize,
        lags: &[usize],
        pattern: Option<&ObservationMask>,
        guide_lags: bool,
    ) -> Result<SeriesWindow> {
        let s = dataset.series.get(series_idx).ok_or_else(|| {
            Error::Alignment(format!("series {series_idx} not present in dataset"))
        })?;
        let len = dataset.window_len();
        let max_lag = lags.iter().copied().max().unwrap_or(0);
        if offset < max_lag || offset + len > s.values.len() {
            return Err(Error::Parameter {
                name: "offset",
                reason: format!(
                    "window [{offset}, {}) with max lag {max_lag} outside series {series_idx} \
                     of length {}",
                    offset + len,
                    s.values.len()
                ),
            });
        }
        let c = 1 + lags.len();

        let mut obs = Array2::from_elem((len, c), false);
        for l in 0..len {
            let in_context = l < dataset.context_length;
            let observed0 = match pattern {
                Some(p) => {
                    if p.obs.dim() != (len, 1) {
                        return Err(Error::Shape {
                            context: "missingness pattern",
                            expected: vec![len, 1],
                            actual: vec![p.obs.dim().0, p.obs.dim().1],
                        });
                    }
                    p.obs[[l, 0]]
                }
                None => in_context,
            };
            obs[[l, 0]] = observed0;
            for j in 1..c {
                obs[[l, j]] = guide_lags;
            }
        }

        let raw = build_lag_matrix(&s.values, offset, len, lags)?;
        let observed_ctx: Vec<f64> = (0..dataset.context_length)
            .filter(|&l| obs[[l, 0]])
            .map(|l| raw[[l, 0]])
            .collect();
        let scale = mean_abs_scale(&observed_ctx);

        let mut values = Array2::zeros((len, c));
        for l in 0..len {
            for j in 0..c {
                if obs[[l, j]] {
                    values[[l, j]] = raw[[l, j]] / scale;
                }
            }
        }
        Ok(SeriesWindow {
            series: series_idx,
            offset,
            scale,
            mask: ObservationMask { obs, values },
        })
    }

    /// Window length.
    pub fn len(&self) -> usize {
        self.mask.obs.dim().0
    }

    /// True when the window is empty (never the case for valid tasks).
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Channel count.
    pub fn channels(&self) -> usize {
        self.mask.obs.dim().1
    }
}

/// One normalized training example.
#[derive(Debug, Clone)]
pub struct TrainWindow {
    /// Normalized window with lag channels, `L x C`.
    pub x: Array2<f64>,
    /// The divisor applied to every channel.
    pub scale: f64,
    /// `(series index, offset)`.
    pub origin: (usize, usize),
}

/// Draws random normalized training windows from a dataset.
///
/// Series too short for a window (plus lag history) are skipped with a
/// warning and excluded from sampling.
#[derive(Debug)]
pub struct WindowSampler<'a> {
    dataset: &'a Dataset,
    lags: Vec<usize>,
    max_lag: usize,
    holdout_last_window: bool,
    eligible: Vec<usize>,
}

impl<'a> WindowSampler<'a> {
    /// Set up sampling. With `holdout_last_window`, the final window of each
    /// series is excluded from the sampled range so inference-time contexts
    /// stay unseen.
    pub fn new(dataset: &'a Dataset, lags: &[usize], holdout_last_window: bool) -> Result<Self> {
        let len = dataset.window_len();
        let max_lag = lags.iter().copied().max().unwrap_or(0);
        let mut eligible = Vec::new();
        for (i, s) in dataset.series.iter().enumerate() {
            let effective = s.values.len().saturating_sub(if holdout_last_window { len } else { 0 });
            if effective >= len + max_lag {
                eligible.push(i);
            } else {
                log::warn!(
                    "skipping series {i}: {} values, need {} (window {len} + max lag {max_lag}{})",
                    s.values.len(),
                    len + max_lag + if holdout_last_window { len } else { 0 },
                    if holdout_last_window { " + held-out window" } else { "" },
                );
            }
        }
        if eligible.is_empty() {
            return Err(Error::Parameter {
                name: "dataset",
                reason: format!("no series long enough for window length {len} with lags {lags:?}"),
            });
        }
        Ok(Self {
            dataset,
            lags: lags.to_vec(),
            max_lag,
            holdout_last_window,
            eligible,
        })
    }

    /// Window length produced by [`Self::sample`].
    pub fn window_len(&self) -> usize {
        self.dataset.window_len()
    }

    /// Channel count produced by [`Self::sample`].
    pub fn channels(&self) -> usize {
        1 + self.lags.len()
    }

    /// Number of series eligible for sampling.
    pub fn eligible_series(&self) -> usize {
        self.eligible.len()
    }

    /// Draw one normalized window uniformly over (eligible series, offset).
    pub fn sample(&self, rng: &mut impl Rng) -> TrainWindow {
        let len = self.window_len();
        let series_idx = self.eligible[rng.random_range(0..self.eligible.len())];
        let s = &self.dataset.series[series_idx];
        let effective = s.values.len() - if self.holdout_last_window { len } else { 0 };
        let offset = rng.random_range(self.max_lag..=effective - len);
        let mut x = build_lag_matrix(&s.values, offset, len, &self.lags)
            .expect("eligibility checked at construction");
        let col0: Vec<f64> = (0..len).map(|l| x[[l, 0]]).collect();
        let scale = mean_abs_scale(&col0);
        x.mapv_inplace(|v| v / scale);
        TrainWindow {
            x,
            scale,
            origin: (series_idx, offset),
        }
    }
}
