//! Noise-prediction training: Adam with global-norm gradient clipping.

use ndarray::Array2;
use rand::Rng;
use rayon::prelude::*;

use super::Denoiser;
use crate::data::WindowSampler;
use crate::error::{Error, Result};
use crate::rng::{standard_normal_matrix, substream};
use crate::schedule::{denoising_loss, forward_sample, NoiseSchedule};

/// Optimization hyperparameters. Defaults follow the reference protocol:
/// Adam at 1e-3, batches of 64 windows, 128 batches per epoch, gradient
/// clipping at global norm 0.5.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Adam learning rate.
    pub learning_rate: f64,
    /// Windows per batch.
    pub batch_size: usize,
    /// Number of epochs.
    pub epochs: usize,
    /// Batches per epoch.
    pub batches_per_epoch: usize,
    /// Global-norm clipping threshold for the averaged gradient.
    pub grad_clip: f64,
    /// Seed for window sampling, step sampling, and noise draws.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 64,
            epochs: 1000,
            batches_per_epoch: 128,
            grad_clip: 0.5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        let positive = [
            ("batch_size", self.batch_size),
            ("epochs", self.epochs),
            ("batches_per_epoch", self.batches_per_epoch),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Parameter {
                    name,
                    reason: "must be positive".into(),
                });
            }
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Parameter {
                name: "learning_rate",
                reason: format!("must be positive and finite, got {}", self.learning_rate),
            });
        }
        if !(self.grad_clip > 0.0 && self.grad_clip.is_finite()) {
            return Err(Error::Parameter {
                name: "grad_clip",
                reason: format!("must be positive and finite, got {}", self.grad_clip),
            });
        }
        Ok(())
    }
}

/// What a training run produced besides the updated parameters.
#[derive(Debug, Clone)]
pub struct TrainReport {
    /// Mean loss per epoch.
    pub epoch_losses: Vec<f64>,
    /// Window scales observed during the first epoch (up to 1024), the
    /// empirical scale distribution used when de-normalizing synthesized
    /// windows.
    pub scales: Vec<f64>,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: usize,
    lr: f64,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(dim: usize, lr: f64) -> Self {
        Self {
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            step: 0,
            lr,
        }
    }

    fn update(&mut self, params: &mut [f64], grad: &[f64]) {
        self.step += 1;
        let bc1 = 1.0 - Self::BETA1.powi(self.step as i32);
        let bc2 = 1.0 - Self::BETA2.powi(self.step as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grad)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * g;
            *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + Self::EPS);
        }
    }
}

/// Scale `grad` in place so its global norm does not exceed `threshold`.
/// Returns the pre-clip norm.
pub fn clip_global_norm(grad: &mut [f64], threshold: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > threshold {
        let s = threshold / norm;
        for g in grad.iter_mut() {
            *g *= s;
        }
    }
    norm
}

/// Train the denoiser on windows drawn from `sampler`.
///
/// Each example draws a window, a step `t` uniform in `1..=T`, and a noise
/// array; the loss is the mean squared error between predicted and drawn
/// noise at the diffused input. Per-example gradients are computed in
/// parallel but reduced in a fixed order, so a fixed seed reproduces the run
/// exactly. Aborts with diagnostics if a loss turns non-finite.
pub fn train(
    denoiser: &mut Denoiser,
    sampler: &WindowSampler,
    sched: &NoiseSchedule,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    let (l_len, c) = (
        denoiser.config().window_len,
        denoiser.config().input_channels,
    );
    if sampler.window_len() != l_len || sampler.channels() != c {
        return Err(Error::Shape {
            context: "train sampler vs denoiser",
            expected: vec![l_len, c],
            actual: vec![sampler.window_len(), sampler.channels()],
        });
    }

    let mut rng = substream(cfg.seed, &[]);
    let mut adam = Adam::new(denoiser.params().values.len(), cfg.learning_rate);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut scales = Vec::new();
    let elems = (l_len * c) as f64;

    struct Example {
        x: Array2<f64>,
        origin: (usize, usize),
        t: usize,
        eps: Array2<f64>,
    }

    for epoch in 0..cfg.epochs {
        let mut epoch_loss = 0.0;
        for batch in 0..cfg.batches_per_epoch {
            // Draw all randomness sequentially so the run is reproducible.
            let mut examples = Vec::with_capacity(cfg.batch_size);
            for _ in 0..cfg.batch_size {
                let win = sampler.sample(&mut rng);
                if epoch == 0 && scales.len() < 1024 {
                    scales.push(win.scale);
                }
                let t = rng.random_range(1..=sched.steps());
                let eps = standard_normal_matrix(&mut rng, l_len, c);
                examples.push(Example {
                    x: win.x,
                    origin: win.origin,
                    t,
                    eps,
                });
            }

            let net: &Denoiser = denoiser;
            let results: Result<Vec<(f64, Vec<f64>)>> = examples
                .par_iter()
                .map(|ex| {
                    let x_t = forward_sample(&ex.x, ex.t, &ex.eps, sched)?;
                    let (pred, cache) = net.forward_with_cache(&x_t, ex.t)?;
                    let loss = denoising_loss(&pred, &ex.eps);
                    let cot = (&pred - &ex.eps) * (2.0 / elems);
                    let grad = net.vjp_params_cached(&cache, &cot);
                    Ok((loss, grad))
                })
                .collect();
            let results = results?;

            if let Some((bad, _)) = results.iter().enumerate().find(|(_, (l, _))| !l.is_finite()) {
                let ex = &examples[bad];
                return Err(Error::Numeric(format!(
                    "non-finite loss at epoch {epoch} batch {batch}: t={}, window=(series {}, offset {})",
                    ex.t, ex.origin.0, ex.origin.1
                )));
            }

            let batch_loss =
                results.iter().map(|(l, _)| l).sum::<f64>() / cfg.batch_size as f64;
            epoch_loss += batch_loss;

            let mut grad = vec![0.0; denoiser.params().values.len()];
            for (_, g) in &results {
                for (acc, v) in grad.iter_mut().zip(g) {
                    *acc += v;
                }
            }
            let inv = 1.0 / cfg.batch_size as f64;
            for g in grad.iter_mut() {
                *g *= inv;
            }
            clip_global_norm(&mut grad, cfg.grad_clip);
            adam.update(denoiser.params_mut(), &grad);
        }
        epoch_losses.push(epoch_loss / cfg.batches_per_epoch as f64);
    }

    Ok(TrainReport {
        epoch_losses,
        scales,
    })
}
