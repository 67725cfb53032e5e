//! Forecast evaluation: pinball loss, sample-based CRPS, and the linear
//! predictive score.

use ndarray::Array2;

use crate::baselines::LinearForecaster;
use crate::error::{Error, Result};

/// The nine standard quantile levels used throughout evaluation.
pub const STANDARD_LEVELS: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

/// Pinball (quantile) loss `(kappa - 1{y < q}) * (y - q)` of quantile
/// estimate `q` against outcome `y`; nonnegative.
pub fn pinball_loss(q: f64, y: f64, kappa: f64) -> f64 {
    debug_assert!(kappa > 0.0 && kappa < 1.0);
    let indicator = if y < q { 1.0 } else { 0.0 };
    (kappa - indicator) * (y - q)
}

/// Empirical quantile of a sorted sample by linear interpolation between
/// order statistics with the midpoint plotting position `(i - 1/2) / n`,
/// clamped at the extremes.
pub fn empirical_quantile(sorted: &[f64], kappa: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let n = sorted.len();
    let h = n as f64 * kappa + 0.5;
    if h <= 1.0 {
        return sorted[0];
    }
    if h >= n as f64 {
        return sorted[n - 1];
    }
    let i = h.floor() as usize; // 1-based lower order statistic
    let frac = h - i as f64;
    sorted[i - 1] + frac * (sorted[i] - sorted[i - 1])
}

/// Per-timestep empirical quantiles of an `n x h` path matrix.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct QuantileSummary {
    /// The levels, ascending.
    pub levels: Vec<f64>,
    /// `values[level][timestep]`, non-decreasing across levels at every
    /// timestep.
    pub values: Vec<Vec<f64>>,
}

/// Summarize sample paths into per-timestep quantiles.
pub fn quantile_summary(paths: &Array2<f64>, levels: &[f64]) -> QuantileSummary {
    let (n, h) = paths.dim();
    let mut values = vec![vec![0.0; h]; levels.len()];
    let mut col = vec![0.0; n];
    for ts in 0..h {
        for (i, c) in col.iter_mut().enumerate() {
            *c = paths[[i, ts]];
        }
        col.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (li, &kappa) in levels.iter().enumerate() {
            values[li][ts] = empirical_quantile(&col, kappa);
        }
    }
    QuantileSummary {
        levels: levels.to_vec(),
        values,
    }
}

/// Sample-based CRPS of one ensemble against one outcome: the mean over the
/// nine standard levels of twice the pinball loss at the empirical quantile.
pub fn crps(samples: &[f64], y: f64) -> Result<f64> {
    crps_at_levels(samples, y, &STANDARD_LEVELS)
}

/// CRPS over a custom level set.
pub fn crps_at_levels(samples: &[f64], y: f64, levels: &[f64]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Parameter {
            name: "samples",
            reason: "need at least one sample".into(),
        });
    }
    if levels.is_empty() {
        return Err(Error::Parameter {
            name: "levels",
            reason: "need at least one quantile level".into(),
        });
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let total: f64 = levels
        .iter()
        .map(|&k| 2.0 * pinball_loss(empirical_quantile(&sorted, k), y, k))
        .sum();
    Ok(total / levels.len() as f64)
}

/// One window's paths and the matching actuals, both over the horizon.
#[derive(Debug, Clone, Copy)]
pub struct EvalItem<'a> {
    /// `n x h` sample paths.
    pub paths: &'a Array2<f64>,
    /// The `h` realized values.
    pub actuals: &'a [f64],
}

/// Normalized average quantile loss over a whole evaluation set:
/// `sum over (window, timestep, level) of 2 * pinball / (9 * sum |y|)`.
/// Invariant under simultaneous positive rescaling of paths and actuals.
pub fn aggregate_crps(items: &[EvalItem]) -> Result<f64> {
    let mut loss_sum = 0.0;
    let mut abs_sum = 0.0;
    let mut col = Vec::new();
    for (idx, item) in items.iter().enumerate() {
        let (n, h) = item.paths.dim();
        if h != item.actuals.len() {
            return Err(Error::Shape {
                context: "aggregate_crps",
                expected: vec![h],
                actual: vec![item.actuals.len()],
            });
        }
        if n == 0 {
            return Err(Error::Parameter {
                name: "items",
                reason: format!("item {idx} has no sample paths"),
            });
        }
        col.resize(n, 0.0);
        for ts in 0..h {
            for (i, c) in col.iter_mut().enumerate() {
                *c = item.paths[[i, ts]];
            }
            col.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let y = item.actuals[ts];
            abs_sum += y.abs();
            for &k in &STANDARD_LEVELS {
                loss_sum += 2.0 * pinball_loss(empirical_quantile(&col, k), y, k);
            }
        }
    }
    if abs_sum == 0.0 {
        return Err(Error::Numeric(
            "aggregate CRPS undefined: actual values sum to zero in absolute value".into(),
        ));
    }
    Ok(loss_sum / (STANDARD_LEVELS.len() as f64 * abs_sum))
}

/// Normalized absolute deviation of point forecasts: the 0.5-quantile-loss
/// aggregation `sum |y - q| / sum |y|`, which is what the CRPS of a
/// replicated point forecast reduces to.
pub fn normalized_deviation(pairs: &[(&[f64], &[f64])]) -> Result<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    for (forecast, actual) in pairs {
        if forecast.len() != actual.len() {
            return Err(Error::Shape {
                context: "normalized_deviation",
                expected: vec![actual.len()],
                actual: vec![forecast.len()],
            });
        }
        for (q, y) in forecast.iter().zip(*actual) {
            num += (y - q).abs();
            den += y.abs();
        }
    }
    if den == 0.0 {
        return Err(Error::Numeric(
            "normalized deviation undefined: actual values sum to zero in absolute value".into(),
        ));
    }
    Ok(num / den)
}

/// Generative-quality score of synthetic windows: fit a closed-form ridge
/// regressor (context to horizon) on the synthetic windows, then report its
/// point-forecast score on the real test pairs. Deterministic given its
/// inputs.
pub fn linear_predictive_score(
    synthetic: &[Vec<f64>],
    test: &[(Vec<f64>, Vec<f64>)],
    context_len: usize,
    horizon: usize,
    alpha: f64,
) -> Result<f64> {
    let model = LinearForecaster::fit(synthetic, context_len, horizon, alpha)?;
    let mut forecasts = Vec::with_capacity(test.len());
    for (context, _) in test {
        forecasts.push(model.forecast(context)?);
    }
    let pairs: Vec<(&[f64], &[f64])> = forecasts
        .iter()
        .map(|f| f.as_slice())
        .zip(test.iter().map(|(_, a)| a.as_slice()))
        .collect();
    normalized_deviation(&pairs)
}
