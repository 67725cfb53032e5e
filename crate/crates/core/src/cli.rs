//! Command-line interface: train, forecast, refine, synthesize, evaluate.
//!
//! Every command is deterministic under `--seed`, embeds its resolved
//! configuration in the output file, and exits 0 on success, 1 on
//! runtime/numeric failures, and 2 on configuration errors. Thread count
//! follows `RAYON_NUM_THREADS`.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::RunConfig;
use crate::data::{Dataset, MissingScenario};
use crate::error::Result;
use crate::formats;
use crate::guidance::GuidanceVariant;
use crate::model::DiffusionModel;
use crate::pipeline;
use crate::refine::{Regularizer, RefinementConfig};

/// Diffusion-based generative modeling for univariate time series.
#[derive(Debug, Parser)]
#[command(name = "diffseries", version, about)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model and write a checkpoint plus a loss history.
    Train(TrainArgs),
    /// Forecast with observation-guided sampling.
    Forecast(ForecastArgs),
    /// Refine a base forecast file against a trained model.
    Refine(RefineArgs),
    /// Sample unconditional windows from a trained model.
    Synthesize(SynthesizeArgs),
    /// Score a forecast or samples file against a dataset.
    Evaluate(EvaluateArgs),
}

impl Cli {
    /// Dispatch the parsed command.
    pub fn run(&self) -> Result<()> {
        match &self.command {
            Command::Train(args) => cmd_train(args),
            Command::Forecast(args) => cmd_forecast(args),
            Command::Refine(args) => cmd_refine(args),
            Command::Synthesize(args) => cmd_synthesize(args),
            Command::Evaluate(args) => cmd_evaluate(args),
        }
    }
}

/// Arguments of `diffseries train`.
#[derive(Debug, Args)]
pub struct TrainArgs {
    /// TOML run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Checkpoint output path.
    #[arg(long)]
    pub out: PathBuf,
    /// Loss-history output path; defaults to `<out>.loss`.
    #[arg(long)]
    pub loss_out: Option<PathBuf>,
    /// Override `train.epochs`.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Override `train.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override `train.learning_rate`.
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Override `train.batch_size`.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Override `train.batches_per_epoch`.
    #[arg(long)]
    pub batches_per_epoch: Option<usize>,
    /// Override `train.grad_clip`.
    #[arg(long)]
    pub grad_clip: Option<f64>,
}

/// Run `train`.
pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(v) = args.epochs {
        cfg.train.epochs = v;
    }
    if let Some(v) = args.seed {
        cfg.train.seed = v;
    }
    if let Some(v) = args.learning_rate {
        cfg.train.learning_rate = v;
    }
    if let Some(v) = args.batch_size {
        cfg.train.batch_size = v;
    }
    if let Some(v) = args.batches_per_epoch {
        cfg.train.batches_per_epoch = v;
    }
    if let Some(v) = args.grad_clip {
        cfg.train.grad_clip = v;
    }
    let dataset = cfg.load_dataset()?;
    let (model, report) = pipeline::train_model(&cfg, &dataset)?;
    model.save(&args.out)?;
    let loss_path = args
        .loss_out
        .clone()
        .unwrap_or_else(|| with_suffix(&args.out, ".loss"));
    crate::model::write_loss_history(loss_path, &cfg.provenance(), &report.epoch_losses)?;
    log::info!(
        "trained {} epochs, final loss {:.6}",
        report.epoch_losses.len(),
        report.epoch_losses.last().unwrap_or(&f64::NAN)
    );
    Ok(())
}

fn with_suffix(path: &std::path::Path, suffix: &str) -> PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(suffix);
    PathBuf::from(os)
}

/// Guidance variant flag.
#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum VariantArg {
    /// Mean-square guidance.
    Ms,
    /// Quantile guidance.
    Q,
}

/// Missingness scenario flag.
#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ScenarioArg {
    /// Random missing.
    Rm,
    /// Blackout at the beginning of the context.
    BmB,
    /// Blackout at the end of the context.
    BmE,
}

impl From<ScenarioArg> for MissingScenario {
    fn from(s: ScenarioArg) -> Self {
        match s {
            ScenarioArg::Rm => MissingScenario::Random,
            ScenarioArg::BmB => MissingScenario::BlackoutStart,
            ScenarioArg::BmE => MissingScenario::BlackoutEnd,
        }
    }
}

/// Arguments of `diffseries forecast`.
#[derive(Debug, Args)]
pub struct ForecastArgs {
    /// Trained checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// JSON-lines dataset to forecast.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Forecast file output path.
    #[arg(long)]
    pub out: PathBuf,
    /// Guidance variant.
    #[arg(long, value_enum, default_value = "q")]
    pub variant: VariantArg,
    /// Guidance strength; defaults to 4 for quantile and 0.125 for
    /// mean-square guidance.
    #[arg(long)]
    pub scale: Option<f64>,
    /// Sample paths per series.
    #[arg(long, default_value_t = 100)]
    pub samples: usize,
    /// Context-missingness scenario.
    #[arg(long, value_enum)]
    pub missing: Option<ScenarioArg>,
    /// Fraction of the context masked under `--missing`.
    #[arg(long, default_value_t = 0.5)]
    pub ratio: f64,
    /// Seed for masks and sampling chains.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Override the dataset's context length.
    #[arg(long)]
    pub context_length: Option<usize>,
    /// Override the dataset's prediction length.
    #[arg(long)]
    pub prediction_length: Option<usize>,
    /// Lag offsets, comma separated (must match the checkpoint's channels).
    #[arg(long, value_delimiter = ',')]
    pub lags: Vec<usize>,
    /// Guide on lag channels too (they are known at inference).
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    pub guide_lags: bool,
}

fn load_dataset_with_overrides(
    path: &std::path::Path,
    context_length: Option<usize>,
    prediction_length: Option<usize>,
) -> Result<Dataset> {
    let mut ds = Dataset::from_jsonl(path)?;
    if let Some(v) = context_length {
        ds.context_length = v;
    }
    if let Some(v) = prediction_length {
        ds.prediction_length = v;
    }
    Ok(ds)
}

/// Run `forecast`.
pub fn cmd_forecast(args: &ForecastArgs) -> Result<()> {
    let model = DiffusionModel::load(&args.checkpoint)?;
    let dataset =
        load_dataset_with_overrides(&args.dataset, args.context_length, args.prediction_length)?;
    let (variant, scale) = match args.variant {
        VariantArg::Ms => (
            GuidanceVariant::MeanSquare,
            args.scale.unwrap_or(4.0 / 32.0),
        ),
        VariantArg::Q => (GuidanceVariant::Quantile, args.scale.unwrap_or(4.0)),
    };
    let job = pipeline::ForecastJob {
        variant,
        scale,
        n_paths: args.samples,
        missing: args.missing.map(|s| (s.into(), args.ratio)),
        lags: args.lags.clone(),
        guide_lags: args.guide_lags,
        seed: args.seed,
    };
    let ensembles = pipeline::forecast_dataset(&model, &dataset, &job)?;
    let provenance = serde_json::json!({
        "command": "forecast",
        "checkpoint": args.checkpoint.display().to_string(),
        "dataset": args.dataset.display().to_string(),
        "context_length": dataset.context_length,
        "prediction_length": dataset.prediction_length,
        "job": job,
    });
    formats::write_forecasts(&args.out, &provenance, &ensembles)
}

/// Refinement iteration style flag.
#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MethodArg {
    /// Langevin sampling (noise factor as given).
    Lmc,
    /// Maximum-likelihood descent (noise factor forced to zero).
    Ml,
}

/// Refinement anchor penalty flag.
#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum RegArg {
    /// Squared-error anchor.
    Ms,
    /// Pinball anchor at per-path levels.
    Q,
}

/// Arguments of `diffseries refine`.
#[derive(Debug, Args)]
pub struct RefineArgs {
    /// Trained checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset the base forecasts align to.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Base forecast file.
    #[arg(long)]
    pub base: PathBuf,
    /// Refined forecast output path.
    #[arg(long)]
    pub out: PathBuf,
    /// Iteration style.
    #[arg(long, value_enum, default_value = "lmc")]
    pub variant: MethodArg,
    /// Anchor penalty.
    #[arg(long, value_enum, default_value = "q")]
    pub regularizer: RegArg,
    /// Refinement iterations.
    #[arg(long, default_value_t = 20)]
    pub iters: usize,
    /// Step size.
    #[arg(long, default_value_t = 0.05)]
    pub eta: f64,
    /// Noise factor (ignored under --variant ml).
    #[arg(long, default_value_t = 1.0)]
    pub gamma: f64,
    /// Anchor weight.
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    /// Representative diffusion step; computed from the dataset when absent.
    #[arg(long)]
    pub tau: Option<usize>,
    /// Windows used to compute the representative step.
    #[arg(long, default_value_t = 1024)]
    pub tau_batch: usize,
    /// Paths to refine when the base is a single-path (point) forecast.
    #[arg(long, default_value_t = 100)]
    pub paths: usize,
    /// Seed for noise draws.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Override the dataset's context length.
    #[arg(long)]
    pub context_length: Option<usize>,
    /// Override the dataset's prediction length.
    #[arg(long)]
    pub prediction_length: Option<usize>,
}

/// Run `refine`.
pub fn cmd_refine(args: &RefineArgs) -> Result<()> {
    let model = DiffusionModel::load(&args.checkpoint)?;
    let dataset =
        load_dataset_with_overrides(&args.dataset, args.context_length, args.prediction_length)?;
    let (_, records) = formats::read_forecasts(&args.base)?;
    let base: Result<Vec<_>> = records.iter().map(|r| r.to_ensemble()).collect();
    let base = base?;
    let tau = match args.tau {
        Some(t) => t,
        None => pipeline::representative_step_for(&model, &dataset, args.tau_batch, args.seed)?,
    };
    let gamma = match args.variant {
        MethodArg::Lmc => args.gamma,
        MethodArg::Ml => 0.0,
    };
    let cfg = RefinementConfig {
        regularizer: match args.regularizer {
            RegArg::Ms => Regularizer::MeanSquare,
            RegArg::Q => Regularizer::Quantile,
        },
        step_size: args.eta,
        noise_factor: gamma,
        lambda: args.lambda,
        iterations: args.iters,
        tau,
        fresh_eps_per_iter: true,
    };
    let refined = pipeline::refine_forecasts(&model, &dataset, &base, &cfg, args.paths, args.seed)?;
    let provenance = serde_json::json!({
        "command": "refine",
        "checkpoint": args.checkpoint.display().to_string(),
        "dataset": args.dataset.display().to_string(),
        "base": args.base.display().to_string(),
        "eta": cfg.step_size,
        "gamma": cfg.noise_factor,
        "lambda": cfg.lambda,
        "tau": cfg.tau,
        "iterations": cfg.iterations,
        "regularizer": cfg.regularizer,
        "paths": args.paths,
        "seed": args.seed,
    });
    formats::write_forecasts(&args.out, &provenance, &refined)
}

/// Arguments of `diffseries synthesize`.
#[derive(Debug, Args)]
pub struct SynthesizeArgs {
    /// Trained checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Samples file output path.
    #[arg(long)]
    pub out: PathBuf,
    /// Number of windows to generate.
    #[arg(long, default_value_t = 100)]
    pub samples: usize,
    /// Seed for the sampling chains and scale draws.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Run `synthesize`.
pub fn cmd_synthesize(args: &SynthesizeArgs) -> Result<()> {
    let model = DiffusionModel::load(&args.checkpoint)?;
    let samples = pipeline::synthesize_windows(&model, args.samples, args.seed)?;
    let provenance = serde_json::json!({
        "command": "synthesize",
        "checkpoint": args.checkpoint.display().to_string(),
        "samples": args.samples,
        "seed": args.seed,
    });
    formats::write_samples(&args.out, &provenance, &samples)
}

/// Evaluation metric flag.
#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MetricArg {
    /// Sample-based CRPS of a forecast file.
    Crps,
    /// Linear predictive score of a samples file.
    Lps,
}

/// Arguments of `diffseries evaluate`.
#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Forecast file (crps) or samples file (lps).
    #[arg(long)]
    pub input: PathBuf,
    /// Dataset with the realized values.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Which metric to compute.
    #[arg(long, value_enum, default_value = "crps")]
    pub metric: MetricArg,
    /// Report output path; printed to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Ridge strength for the linear predictive score.
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    /// Override the dataset's context length.
    #[arg(long)]
    pub context_length: Option<usize>,
    /// Override the dataset's prediction length.
    #[arg(long)]
    pub prediction_length: Option<usize>,
}

/// Run `evaluate`.
pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<()> {
    let dataset =
        load_dataset_with_overrides(&args.dataset, args.context_length, args.prediction_length)?;
    let config = serde_json::json!({
        "command": "evaluate",
        "input": args.input.display().to_string(),
        "dataset": args.dataset.display().to_string(),
        "context_length": dataset.context_length,
        "prediction_length": dataset.prediction_length,
        "alpha": args.alpha,
    });
    let report = match args.metric {
        MetricArg::Crps => {
            let (_, records) = formats::read_forecasts(&args.input)?;
            let ensembles: Result<Vec<_>> = records.iter().map(|r| r.to_ensemble()).collect();
            let eval = pipeline::evaluate_crps(&dataset, &ensembles?)?;
            formats::Report {
                config,
                metric: "crps".into(),
                aggregate: eval.aggregate,
                per_series: eval
                    .per_series
                    .into_iter()
                    .map(|(series, score)| formats::SeriesScore { series, score })
                    .collect(),
            }
        }
        MetricArg::Lps => {
            let (_, samples) = formats::read_samples(&args.input)?;
            let score = pipeline::evaluate_lps(&dataset, &samples, args.alpha)?;
            formats::Report {
                config,
                metric: "lps".into(),
                aggregate: score,
                per_series: Vec::new(),
            }
        }
    };
    match &args.out {
        Some(path) => formats::write_report(path, &report)?,
        None => println!(
            "{}\n{}",
            formats::REPORT_TAG,
            serde_json::to_string_pretty(&report).expect("serializable report")
        ),
    }
    log::info!("{} = {:.6}", report.metric, report.aggregate);
    Ok(())
}
