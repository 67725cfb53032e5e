//! Sample-path ensembles produced by forecasting and refinement.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::metrics::{QuantileSummary, STANDARD_LEVELS};

/// `n` sample paths over the target positions of one window, in data units.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastEnsemble {
    /// Series index in the dataset the window came from.
    pub series: usize,
    /// Window start within the series.
    pub window_offset: usize,
    /// Window length (context plus horizon).
    pub window_len: usize,
    /// Positions within the window the paths cover (channel 0, ascending).
    pub target_indices: Vec<usize>,
    /// `n x target_indices.len()` sample paths.
    pub paths: Array2<f64>,
}

impl ForecastEnsemble {
    /// Assemble an ensemble from per-chain target slices.
    pub fn from_paths(
        series: usize,
        window_offset: usize,
        window_len: usize,
        target_indices: Vec<usize>,
        chains: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let k = target_indices.len();
        let n = chains.len();
        let mut flat = Vec::with_capacity(n * k);
        for (i, chain) in chains.iter().enumerate() {
            if chain.len() != k {
                return Err(Error::Shape {
                    context: "ensemble path",
                    expected: vec![k],
                    actual: vec![chains[i].len()],
                });
            }
            flat.extend_from_slice(chain);
        }
        Ok(Self {
            series,
            window_offset,
            window_len,
            target_indices,
            paths: Array2::from_shape_vec((n, k), flat).expect("shape"),
        })
    }

    /// Number of sample paths.
    pub fn num_paths(&self) -> usize {
        self.paths.dim().0
    }

    /// Per-timestep empirical quantiles at the nine standard levels.
    pub fn quantile_summary(&self) -> QuantileSummary {
        self.quantile_summary_at(&STANDARD_LEVELS)
    }

    /// Per-timestep empirical quantiles at the given levels.
    pub fn quantile_summary_at(&self, levels: &[f64]) -> QuantileSummary {
        crate::metrics::quantile_summary(&self.paths, levels)
    }

    /// Restrict the ensemble to target positions at or beyond
    /// `from_index` — the forecast horizon when `from_index` is the context
    /// length.
    pub fn restrict_from(&self, from_index: usize) -> ForecastEnsemble {
        let keep: Vec<usize> = self
            .target_indices
            .iter()
            .enumerate()
            .filter(|(_, &ti)| ti >= from_index)
            .map(|(i, _)| i)
            .collect();
        let n = self.num_paths();
        let mut paths = Array2::zeros((n, keep.len()));
        for r in 0..n {
            for (j, &col) in keep.iter().enumerate() {
                paths[[r, j]] = self.paths[[r, col]];
            }
        }
        ForecastEnsemble {
            series: self.series,
            window_offset: self.window_offset,
            window_len: self.window_len,
            target_indices: keep.iter().map(|&i| self.target_indices[i]).collect(),
            paths,
        }
    }
}
