//! Denoising diffusion models for univariate time series.
//!
//! The model is trained unconditionally on fixed-length windows; everything
//! task-specific happens at inference time:
//!
//! - **Forecast** — [`guidance`] steers the reverse diffusion chain toward
//!   observed values with a score term derived from the model's own one-step
//!   denoised estimate, so arbitrary observation patterns (forecasting, gaps
//!   in the context) need no retraining.
//! - **Refine** — [`refine`] treats the trained model as a prior and
//!   improves forecasts of any external base forecaster by Langevin
//!   iteration on a regularized energy, directly in data space.
//! - **Synthesize** — unconditional sampling produces synthetic windows
//!   whose quality is measured by training a closed-form downstream
//!   forecaster on them ([`metrics::linear_predictive_score`]).
//!
//! [`schedule`] holds the exact diffusion arithmetic, [`denoiser`] the
//! noise-prediction network with hand-rolled reverse-mode gradients (the
//! guidance and refinement scores depend on exact input gradients),
//! [`data`] the dataset tooling, [`baselines`] the seasonal-naive and ridge
//! forecasters, and [`metrics`] the CRPS machinery. The `examples/`
//! directory has one runnable program per capability; the `diffseries`
//! binary wires the same pipeline into subcommands.

#![warn(missing_docs)]

pub mod baselines;
pub mod cli;
pub mod config;
pub mod data;
pub mod denoiser;
pub mod ensemble;
pub mod error;
pub mod formats;
pub mod guidance;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod refine;
pub mod rng;
pub mod schedule;

pub use denoiser::{Denoiser, DenoiserConfig, NoisePredictor, TrainConfig};
pub use ensemble::ForecastEnsemble;
pub use error::{Error, Result};
pub use guidance::{GuidanceConfig, GuidanceVariant, ObservationMask};
pub use model::DiffusionModel;
pub use refine::{RefinementConfig, Regularizer};
pub use schedule::NoiseSchedule;
