//! The learnable noise-prediction network and its training loop.
//!
//! The network maps a noisy `L x C` window plus a diffusion-step index to a
//! same-shape noise estimate. It is a stack of residual blocks, each of which
//! runs a dilated temporal convolution (kernel 3, dilation doubling per
//! layer) over the time axis, a gated activation, a 1x1 channel-mixing map,
//! and an additive projection of the sinusoidal step embedding. Gradients of
//! scalar functions of the output with respect to the input and the
//! parameters are exact reverse-mode, computed by hand in [`net`]; guidance
//! and refinement depend on them.

mod net;
mod train;

pub mod stubs;

use ndarray::Array2;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::substream;

pub use train::{train, TrainConfig, TrainReport};

pub(crate) use net::Layout;

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct DenoiserConfig {
    /// Window length `L`.
    pub window_len: usize,
    /// Input channel count `C` (1 plus the number of lag channels).
    pub input_channels: usize,
    /// Number of residual blocks.
    pub residual_layers: usize,
    /// Hidden width of each block.
    pub channels: usize,
    /// Dimension of the sinusoidal step embedding; must be even.
    pub time_emb_dim: usize,
    /// Add the raw input to the output. Off by default.
    pub skip_input_to_output: bool,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            window_len: 96,
            input_channels: 1,
            residual_layers: 3,
            channels: 64,
            time_emb_dim: 128,
            skip_input_to_output: false,
        }
    }
}

impl DenoiserConfig {
    /// Check the invariants: all sizes positive, embedding dimension even.
    pub fn validate(&self) -> Result<()> {
        let positive: [(&'static str, usize); 5] = [
            ("window_len", self.window_len),
            ("input_channels", self.input_channels),
            ("residual_layers", self.residual_layers),
            ("channels", self.channels),
            ("time_emb_dim", self.time_emb_dim),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Parameter {
                    name,
                    reason: "must be positive".into(),
                });
            }
        }
        if self.time_emb_dim % 2 != 0 {
            return Err(Error::Parameter {
                name: "time_emb_dim",
                reason: format!("must be even, got {}", self.time_emb_dim),
            });
        }
        Ok(())
    }

    /// Total parameter count; a pure function of the configuration.
    pub fn param_count(&self) -> usize {
        Layout::new(self).total()
    }
}

/// The flat parameter vector of a network, with the seed it was drawn from.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserParams {
    /// All weights and biases, in the fixed layout order.
    pub values: Vec<f64>,
    /// Seed used by [`Denoiser::init`].
    pub init_seed: u64,
}

/// Sinusoidal embedding of a diffusion step: interleaved
/// `(sin(t * w_k), cos(t * w_k))` pairs with `w_k = 10000^(-2k/dim)`.
pub fn embed_timestep(t: usize, dim: usize) -> Result<Vec<f64>> {
    if dim == 0 || dim % 2 != 0 {
        return Err(Error::Parameter {
            name: "dim",
            reason: format!("embedding dimension must be positive and even, got {dim}"),
        });
    }
    let mut emb = vec![0.0; dim];
    let half = dim / 2;
    for k in 0..half {
        let freq = (-(2.0 * k as f64 / dim as f64) * 10_000f64.ln()).exp();
        let angle = t as f64 * freq;
        emb[2 * k] = angle.sin();
        emb[2 * k + 1] = angle.cos();
    }
    Ok(emb)
}

/// Anything that predicts the noise component of a diffused window and can
/// pull cotangents back to the window. Implemented by [`Denoiser`] and by the
/// closed-form test stubs in [`stubs`].
pub trait NoisePredictor: Sync {
    /// `(L, C)` of the windows this predictor accepts.
    fn dims(&self) -> (usize, usize);

    /// Predicted noise for the diffused input at step `t`; same shape as `x`.
    fn predict(&self, x: &Array2<f64>, t: usize) -> Result<Array2<f64>>;

    /// `J^T * cotangent` where `J` is the Jacobian of [`Self::predict`] with
    /// respect to `x`. Exact reverse mode, not an approximation.
    fn vjp_input(&self, x: &Array2<f64>, t: usize, cotangent: &Array2<f64>)
        -> Result<Array2<f64>>;

    /// Prediction together with an input VJP whose cotangent depends on the
    /// prediction. Implementations may reuse forward intermediates.
    fn predict_with_vjp(
        &self,
        x: &Array2<f64>,
        t: usize,
        make_cotangent: &dyn Fn(&Array2<f64>) -> Array2<f64>,
    ) -> Result<(Array2<f64>, Array2<f64>)> {
        let pred = self.predict(x, t)?;
        let cot = make_cotangent(&pred);
        let grad = self.vjp_input(x, t, &cot)?;
        Ok((pred, grad))
    }
}

/// A noise-prediction network: configuration plus bound parameters.
#[derive(Debug, Clone)]
pub struct Denoiser {
    cfg: DenoiserConfig,
    params: DenoiserParams,
    layout: Layout,
}

impl Denoiser {
    /// Draw fresh parameters for `cfg`, deterministically from `seed`.
    ///
    /// Weights come from a fan-in-scaled uniform distribution
    /// `U(-sqrt(1/fan_in), sqrt(1/fan_in))`; biases and the output head start
    /// at zero, so a fresh network predicts exactly zero noise.
    pub fn init(cfg: DenoiserConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let layout = Layout::new(&cfg);
        let mut values = vec![0.0; layout.total()];
        let mut rng = substream(seed, &[]);
        let mut fill = |range: std::ops::Range<usize>, fan_in: usize, values: &mut Vec<f64>| {
            let bound = (1.0 / fan_in as f64).sqrt();
            for v in &mut values[range] {
                *v = rng.random::<f64>() * 2.0 * bound - bound;
            }
        };
        fill(layout.input_w(), cfg.input_channels, &mut values);
        for i in 0..cfg.residual_layers {
            fill(layout.conv_w(i), 3 * cfg.channels, &mut values);
            fill(layout.mix_w(i), cfg.channels, &mut values);
            fill(layout.temb_w(i), cfg.time_emb_dim, &mut values);
        }
        // Head weights stay zero.
        Ok(Self {
            cfg,
            params: DenoiserParams {
                values,
                init_seed: seed,
            },
            layout,
        })
    }

    /// Rebuild a network from an existing parameter vector.
    pub fn from_parts(cfg: DenoiserConfig, params: DenoiserParams) -> Result<Self> {
        cfg.validate()?;
        let layout = Layout::new(&cfg);
        if params.values.len() != layout.total() {
            return Err(Error::Parameter {
                name: "params",
                reason: format!(
                    "parameter vector has {} entries, config requires {}",
                    params.values.len(),
                    layout.total()
                ),
            });
        }
        if !params.values.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric(
                "parameter vector contains non-finite values".into(),
            ));
        }
        Ok(Self {
            cfg,
            params,
            layout,
        })
    }

    /// The architecture this network was built with.
    pub fn config(&self) -> &DenoiserConfig {
        &self.cfg
    }

    /// The bound parameters.
    pub fn params(&self) -> &DenoiserParams {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut Vec<f64> {
        &mut self.params.values
    }

    fn check_input(&self, x: &Array2<f64>) -> Result<()> {
        let want = (self.cfg.window_len, self.cfg.input_channels);
        if x.dim() != want {
            return Err(Error::Shape {
                context: "denoiser input",
                expected: vec![want.0, want.1],
                actual: vec![x.dim().0, x.dim().1],
            });
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric("denoiser input contains non-finite values".into()));
        }
        Ok(())
    }

    /// Forward pass returning the cache needed for a later VJP.
    pub fn forward_with_cache(&self, x: &Array2<f64>, t: usize) -> Result<(Array2<f64>, net::EvalCache)> {
        self.check_input(x)?;
        Ok(net::forward(&self.cfg, &self.layout, &self.params.values, x, t))
    }

    /// `eps_theta(x, t)`: predicted noise, same shape as the input.
    pub fn forward(&self, x: &Array2<f64>, t: usize) -> Result<Array2<f64>> {
        Ok(self.forward_with_cache(x, t)?.0)
    }

    /// Input VJP reusing a cache from [`Self::forward_with_cache`].
    pub fn vjp_input_cached(&self, cache: &net::EvalCache, cotangent: &Array2<f64>) -> Array2<f64> {
        net::backward(&self.cfg, &self.layout, &self.params.values, cache, cotangent, true, false)
            .0
            .expect("input gradient requested")
    }

    /// Parameter VJP reusing a cache from [`Self::forward_with_cache`].
    pub fn vjp_params_cached(&self, cache: &net::EvalCache, cotangent: &Array2<f64>) -> Vec<f64> {
        net::backward(&self.cfg, &self.layout, &self.params.values, cache, cotangent, false, true)
            .1
            .expect("parameter gradient requested")
    }

    /// `J^T * cotangent` against the parameter vector.
    pub fn vjp_params(&self, x: &Array2<f64>, t: usize, cotangent: &Array2<f64>) -> Result<Vec<f64>> {
        let (_, cache) = self.forward_with_cache(x, t)?;
        Ok(self.vjp_params_cached(&cache, cotangent))
    }
}

impl NoisePredictor for Denoiser {
    fn dims(&self) -> (usize, usize) {
        (self.cfg.window_len, self.cfg.input_channels)
    }

    fn predict(&self, x: &Array2<f64>, t: usize) -> Result<Array2<f64>> {
        self.forward(x, t)
    }

    fn vjp_input(&self, x: &Array2<f64>, t: usize, cotangent: &Array2<f64>) -> Result<Array2<f64>> {
        let (_, cache) = self.forward_with_cache(x, t)?;
        Ok(self.vjp_input_cached(&cache, cotangent))
    }

    fn predict_with_vjp(
        &self,
        x: &Array2<f64>,
        t: usize,
        make_cotangent: &dyn Fn(&Array2<f64>) -> Array2<f64>,
    ) -> Result<(Array2<f64>, Array2<f64>)> {
        let (pred, cache) = self.forward_with_cache(x, t)?;
        let cot = make_cotangent(&pred);
        let grad = self.vjp_input_cached(&cache, &cot);
        Ok((pred, grad))
    }
}
