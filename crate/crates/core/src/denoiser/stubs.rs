//! Closed-form noise predictors with known Jacobians.
//!
//! These stand in for a trained network wherever a result must be checked
//! against hand arithmetic: guidance scores, reduction identities, and the
//! refinement energy all have simple closed forms under these stubs.

use ndarray::Array2;

use super::NoisePredictor;
use crate::error::{Error, Result};

/// Predicts zero noise for every input; the Jacobian is zero.
///
/// Matches a freshly initialized [`super::Denoiser`] without the
/// input-to-output skip.
#[derive(Debug, Clone)]
pub struct ZeroNoise {
    /// Window length.
    pub window_len: usize,
    /// Channel count.
    pub channels: usize,
}

impl NoisePredictor for ZeroNoise {
    fn dims(&self) -> (usize, usize) {
        (self.window_len, self.channels)
    }

    fn predict(&self, x: &Array2<f64>, _t: usize) -> Result<Array2<f64>> {
        check(self.dims(), x)?;
        Ok(Array2::zeros(x.dim()))
    }

    fn vjp_input(
        &self,
        x: &Array2<f64>,
        _t: usize,
        cotangent: &Array2<f64>,
    ) -> Result<Array2<f64>> {
        check(self.dims(), x)?;
        check(self.dims(), cotangent)?;
        Ok(Array2::zeros(x.dim()))
    }
}

/// Predicts a fixed noise array regardless of input; the Jacobian is zero.
///
/// Useful as the "perfect denoiser" when the input was diffused with exactly
/// this noise.
#[derive(Debug, Clone)]
pub struct FixedNoise {
    /// The constant prediction.
    pub eps: Array2<f64>,
}

impl NoisePredictor for FixedNoise {
    fn dims(&self) -> (usize, usize) {
        self.eps.dim()
    }

    fn predict(&self, x: &Array2<f64>, _t: usize) -> Result<Array2<f64>> {
        check(self.dims(), x)?;
        Ok(self.eps.clone())
    }

    fn vjp_input(
        &self,
        x: &Array2<f64>,
        _t: usize,
        cotangent: &Array2<f64>,
    ) -> Result<Array2<f64>> {
        check(self.dims(), x)?;
        check(self.dims(), cotangent)?;
        Ok(Array2::zeros(x.dim()))
    }
}

/// Predicts `coef * x`; the Jacobian is `coef * I`. Handy for checking that
/// the guidance chain rule picks up the network term.
#[derive(Debug, Clone)]
pub struct ScaledInput {
    /// Window length.
    pub window_len: usize,
    /// Channel count.
    pub channels: usize,
    /// The multiplier applied elementwise.
    pub coef: f64,
}

impl NoisePredictor for ScaledInput {
    fn dims(&self) -> (usize, usize) {
        (self.window_len, self.channels)
    }

    fn predict(&self, x: &Array2<f64>, _t: usize) -> Result<Array2<f64>> {
        check(self.dims(), x)?;
        Ok(x * self.coef)
    }

    fn vjp_input(
        &self,
        x: &Array2<f64>,
        _t: usize,
        cotangent: &Array2<f64>,
    ) -> Result<Array2<f64>> {
        check(self.dims(), x)?;
        Ok(cotangent * self.coef)
    }
}

fn check(dims: (usize, usize), x: &Array2<f64>) -> Result<()> {
    if x.dim() == dims {
        Ok(())
    } else {
        Err(Error::Shape {
            context: "stub predictor",
            expected: vec![dims.0, dims.1],
            actual: vec![x.dim().0, x.dim().1],
        })
    }
}
