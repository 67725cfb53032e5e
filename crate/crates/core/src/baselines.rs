//! The two base forecasters: seasonal naive and a closed-form ridge
//! regressor over raw context values.

use ndarray::Array2;

use crate::data::mean_abs_scale;
use crate::error::{Error, Result};

/// Forecast by repeating the last observed season:
/// `forecast[h] = context[len - season + (h mod season)]`.
pub fn seasonal_naive(context: &[f64], season: usize, horizon: usize) -> Result<Vec<f64>> {
    if season == 0 {
        return Err(Error::Parameter {
            name: "season",
            reason: "must be positive".into(),
        });
    }
    if context.len() < season {
        return Err(Error::Parameter {
            name: "context",
            reason: format!("need at least {season} values, got {}", context.len()),
        });
    }
    let tail = &context[context.len() - season..];
    Ok((0..horizon).map(|h| tail[h % season]).collect())
}

/// Solve the ridge normal equations `(X^T X + alpha I) W = X^T Y` by a
/// symmetric Cholesky factorization. `alpha > 0` guarantees solvability;
/// with `alpha = 0`, rank-deficient designs are reported as numeric errors.
pub fn ridge_fit(x: &Array2<f64>, y: &Array2<f64>, alpha: f64) -> Result<Array2<f64>> {
    let (n, p) = x.dim();
    let (ny, h) = y.dim();
    if n != ny {
        return Err(Error::Shape {
            context: "ridge_fit",
            expected: vec![n],
            actual: vec![ny],
        });
    }
    if !(alpha.is_finite() && alpha >= 0.0) {
        return Err(Error::Parameter {
            name: "alpha",
            reason: format!("must be nonnegative and finite, got {alpha}"),
        });
    }

    // Gram matrix plus the ridge diagonal.
    let mut gram = Array2::<f64>::zeros((p, p));
    for i in 0..p {
        for j in i..p {
            let mut acc = 0.0;
            for r in 0..n {
                acc += x[[r, i]] * x[[r, j]];
            }
            gram[[i, j]] = acc;
            gram[[j, i]] = acc;
        }
        gram[[i, i]] += alpha;
    }
    let mut rhs = Array2::<f64>::zeros((p, h));
    for i in 0..p {
        for c in 0..h {
            let mut acc = 0.0;
            for r in 0..n {
                acc += x[[r, i]] * y[[r, c]];
            }
            rhs[[i, c]] = acc;
        }
    }

    cholesky_in_place(&mut gram)?;
    cholesky_solve(&gram, &mut rhs);
    Ok(rhs)
}

/// Lower-triangular Cholesky factorization, in place.
fn cholesky_in_place(a: &mut Array2<f64>) -> Result<()> {
    let p = a.dim().0;
    for j in 0..p {
        let mut diag = a[[j, j]];
        for k in 0..j {
            diag -= a[[j, k]] * a[[j, k]];
        }
        if diag <= 0.0 {
            return Err(Error::Numeric(format!(
                "ridge normal equations are not positive definite at pivot {j}; \
                 the design is rank deficient and alpha = 0"
            )));
        }
        let root = diag.sqrt();
        a[[j, j]] = root;
        for i in j + 1..p {
            let mut acc = a[[i, j]];
            for k in 0..j {
                acc -= a[[i, k]] * a[[j, k]];
            }
            a[[i, j]] = acc / root;
        }
    }
    Ok(())
}

/// Solve `L L^T X = B` in place given the lower factor.
fn cholesky_solve(l: &Array2<f64>, b: &mut Array2<f64>) {
    let (p, h) = b.dim();
    for c in 0..h {
        for i in 0..p {
            let mut acc = b[[i, c]];
            for k in 0..i {
                acc -= l[[i, k]] * b[[k, c]];
            }
            b[[i, c]] = acc / l[[i, i]];
        }
        for i in (0..p).rev() {
            let mut acc = b[[i, c]];
            for k in i + 1..p {
                acc -= l[[k, i]] * b[[k, c]];
            }
            b[[i, c]] = acc / l[[i, i]];
        }
    }
}

/// Apply fitted ridge weights to one context: `context^T W`.
pub fn ridge_forecast(weights: &Array2<f64>, context: &[f64]) -> Result<Vec<f64>> {
    let (p, h) = weights.dim();
    if context.len() != p {
        return Err(Error::Shape {
            context: "ridge_forecast",
            expected: vec![p],
            actual: vec![context.len()],
        });
    }
    let mut out = vec![0.0; h];
    for (i, v) in context.iter().enumerate() {
        for (o, w) in out.iter_mut().zip(weights.row(i)) {
            *o += v * w;
        }
    }
    Ok(out)
}

/// Ridge regression from context to horizon over mean-scaled windows. No
/// intercept; the per-window scaling removes the level, matching the rest of
/// the pipeline.
#[derive(Debug, Clone)]
pub struct LinearForecaster {
    weights: Array2<f64>,
    context_len: usize,
}

impl LinearForecaster {
    /// Fit on full windows of length `context_len + horizon`. Each window is
    /// normalized by the mean absolute value of its context before entering
    /// the normal equations.
    pub fn fit(
        windows: &[Vec<f64>],
        context_len: usize,
        horizon: usize,
        alpha: f64,
    ) -> Result<Self> {
        if windows.is_empty() {
            return Err(Error::Parameter {
                name: "windows",
                reason: "need at least one training window".into(),
            });
        }
        let len = context_len + horizon;
        let n = windows.len();
        let mut x = Array2::zeros((n, context_len));
        let mut y = Array2::zeros((n, horizon));
        for (r, w) in windows.iter().enumerate() {
            if w.len() != len {
                return Err(Error::Shape {
                    context: "LinearForecaster::fit",
                    expected: vec![len],
                    actual: vec![w.len()],
                });
            }
            let scale = mean_abs_scale(&w[..context_len]);
            for i in 0..context_len {
                x[[r, i]] = w[i] / scale;
            }
            for j in 0..horizon {
                y[[r, j]] = w[context_len + j] / scale;
            }
        }
        Ok(Self {
            weights: ridge_fit(&x, &y, alpha)?,
            context_len,
        })
    }

    /// Forecast the horizon from one raw context.
    pub fn forecast(&self, context: &[f64]) -> Result<Vec<f64>> {
        if context.len() != self.context_len {
            return Err(Error::Shape {
                context: "LinearForecaster::forecast",
                expected: vec![self.context_len],
                actual: vec![context.len()],
            });
        }
        let scale = mean_abs_scale(context);
        let scaled: Vec<f64> = context.iter().map(|v| v / scale).collect();
        let mut out = ridge_forecast(&self.weights, &scaled)?;
        for v in out.iter_mut() {
            *v *= scale;
        }
        Ok(out)
    }

    /// The fitted weight matrix, `context_len x horizon`.
    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{standard_normal_matrix, substream};
    use approx::assert_relative_eq;

    #[test]
    fn seasonal_naive_by_definition() {
        assert_eq!(
            seasonal_naive(&[1.0, 2.0, 3.0, 4.0], 2, 3).unwrap(),
            vec![3.0, 4.0, 3.0]
        );
    }

    #[test]
    fn whole_context_season_repeats_it() {
        assert_eq!(
            seasonal_naive(&[5.0, 6.0, 7.0], 3, 6).unwrap(),
            vec![5.0, 6.0, 7.0, 5.0, 6.0, 7.0]
        );
    }

    #[test]
    fn exactly_periodic_series_forecasts_without_error() {
        let period = 5;
        let series: Vec<f64> = (0..25)
            .map(|t| (std::f64::consts::TAU * t as f64 / period as f64).sin())
            .collect();
        let forecast = seasonal_naive(&series[..20], period, 5).unwrap();
        for (f, y) in forecast.iter().zip(&series[20..]) {
            assert_relative_eq!(*f, *y, epsilon = 1e-12);
        }
    }

    #[test]
    fn seasonal_naive_rejects_short_context() {
        assert!(seasonal_naive(&[1.0], 2, 1).is_err());
    }

    #[test]
    fn identity_design_closed_forms() {
        let x = Array2::eye(3);
        let mut y = Array2::zeros((3, 2));
        for i in 0..3 {
            y[[i, 0]] = (i + 1) as f64;
            y[[i, 1]] = -(i as f64);
        }
        let w0 = ridge_fit(&x, &y, 0.0).unwrap();
        for (a, b) in w0.iter().zip(y.iter()) {
            assert_relative_eq!(*a, *b, epsilon = 1e-12);
        }
        let w1 = ridge_fit(&x, &y, 1.0).unwrap();
        for (a, b) in w1.iter().zip(y.iter()) {
            assert_relative_eq!(*a, b / 2.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn normal_equation_residual_vanishes() {
        let mut rng = substream(1, &[]);
        let x = standard_normal_matrix(&mut rng, 20, 5);
        let y = standard_normal_matrix(&mut rng, 20, 3);
        let alpha = 0.7;
        let w = ridge_fit(&x, &y, alpha).unwrap();
        // Residual of X^T X W + alpha W - X^T Y, relative to X^T Y.
        let xt_x = x.t().dot(&x);
        let xt_y = x.t().dot(&y);
        let resid = xt_x.dot(&w) + &w * alpha - &xt_y;
        let rel = resid.iter().map(|v| v * v).sum::<f64>().sqrt()
            / xt_y.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(rel < 1e-8, "relative residual {rel}");
    }

    #[test]
    fn rank_deficient_without_ridge_is_an_error() {
        // Two identical columns.
        let mut x = Array2::zeros((4, 2));
        for r in 0..4 {
            x[[r, 0]] = r as f64;
            x[[r, 1]] = r as f64;
        }
        let y = Array2::zeros((4, 1));
        assert!(ridge_fit(&x, &y, 0.0).is_err());
        assert!(ridge_fit(&x, &y, 1e-6).is_ok());
    }

    #[test]
    fn forecast_applies_weights() {
        let mut w = Array2::zeros((2, 3));
        w[[0, 0]] = 1.0;
        w[[1, 1]] = 1.0;
        // Identity-ish weights echo the context prefix.
        let f = ridge_forecast(&w, &[4.0, -2.0]).unwrap();
        assert_eq!(f, vec![4.0, -2.0, 0.0]);
        assert_eq!(ridge_forecast(&w, &[0.0, 0.0]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn linear_forecaster_recovers_linear_dynamics() {
        // y[t+1] = 2 y[t]: windows from geometric series.
        let mut windows = Vec::new();
        for start in 0..32 {
            let base = 1.0 + start as f64 * 0.1;
            let w: Vec<f64> = (0..6).map(|i| base * 2f64.powi(i)).collect();
            windows.push(w);
        }
        let model = LinearForecaster::fit(&windows, 4, 2, 1e-8).unwrap();
        let context = [3.0, 6.0, 12.0, 24.0];
        let f = model.forecast(&context).unwrap();
        assert_relative_eq!(f[0], 48.0, max_relative = 1e-4);
        assert_relative_eq!(f[1], 96.0, max_relative = 1e-4);
    }

    #[test]
    fn zero_context_forecasts_zero() {
        let windows = vec![vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; 8];
        let model = LinearForecaster::fit(&windows, 4, 2, 1.0).unwrap();
        let f = model.forecast(&[0.0; 4]).unwrap();
        assert_eq!(f, vec![0.0, 0.0]);
    }
}
