//! End-to-end orchestration shared by the CLI and the example programs:
//! training over a dataset, per-series guided forecasting, refinement of
//! forecast files, unconditional synthesis, and evaluation.

use rand::Rng;

use crate::baselines::seasonal_naive;
use crate::config::RunConfig;
use crate::data::{make_missing_mask, Dataset, MissingScenario, SeriesWindow, WindowSampler};
use crate::denoiser::{train, Denoiser, TrainReport};
use crate::ensemble::ForecastEnsemble;
use crate::error::{Error, Result};
use crate::formats::SampleRecord;
use crate::guidance::{self_guided_sample, GuidanceConfig, GuidanceVariant};
use crate::metrics::{aggregate_crps, linear_predictive_score, EvalItem};
use crate::model::{DiffusionModel, TrainMeta};
use crate::refine::{refine_ensemble, representative_step, RefinementConfig};
use crate::rng::{derive_key, substream};

// Stream tags keeping the per-purpose RNG streams apart.
const TAG_MASK: u64 = 0x4D41_534B;
const TAG_CHAIN: u64 = 0x4348_4149;
const TAG_SYNTH: u64 = 0x5359_4E54;
const TAG_SCALE: u64 = 0x5343_414C;
const TAG_TAU: u64 = 0x5441_5542;

/// Train a model according to a run configuration.
pub fn train_model(cfg: &RunConfig, dataset: &Dataset) -> Result<(DiffusionModel, TrainReport)> {
    let sampler = WindowSampler::new(dataset, &cfg.dataset.lags, cfg.dataset.holdout_last_window)?;
    let den_cfg = cfg.denoiser_config(dataset.window_len());
    let mut denoiser = Denoiser::init(den_cfg, cfg.model.init_seed)?;
    let mut model = DiffusionModel::new(
        denoiser.clone(),
        cfg.schedule.steps,
        cfg.schedule.beta_first,
        cfg.schedule.beta_last,
        TrainMeta::default(),
    )?;
    let report = train(&mut denoiser, &sampler, &model.schedule, &cfg.train)?;
    model.denoiser = denoiser;
    model.meta = TrainMeta {
        train_seed: cfg.train.seed,
        epochs: cfg.train.epochs,
        final_loss: *report.epoch_losses.last().unwrap_or(&f64::NAN),
        scales: report.scales.clone(),
    };
    Ok((model, report))
}

/// Settings of one forecasting pass over a dataset.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ForecastJob {
    /// Guidance likelihood.
    pub variant: GuidanceVariant,
    /// Guidance strength.
    pub scale: f64,
    /// Sample paths per series.
    pub n_paths: usize,
    /// Optional context-missingness scenario and ratio.
    pub missing: Option<(MissingScenario, f64)>,
    /// Lag channels (must match the model's input channels).
    pub lags: Vec<usize>,
    /// Treat lag channels as observed during guidance.
    pub guide_lags: bool,
    /// Seed for masks and chains.
    pub seed: u64,
}

impl ForecastJob {
    /// A quantile-guidance job with everything else at its defaults.
    pub fn quantile(scale: f64, n_paths: usize, seed: u64) -> Self {
        Self {
            variant: GuidanceVariant::Quantile,
            scale,
            n_paths,
            missing: None,
            lags: Vec::new(),
            guide_lags: true,
            seed,
        }
    }

    /// A mean-square-guidance job.
    pub fn mean_square(scale: f64, n_paths: usize, seed: u64) -> Self {
        Self {
            variant: GuidanceVariant::MeanSquare,
            ..Self::quantile(scale, n_paths, seed)
        }
    }
}

/// Forecast the final window of every (long enough) series. Series too
/// short for a window are skipped with a warning.
pub fn forecast_dataset(
    model: &DiffusionModel,
    dataset: &Dataset,
    job: &ForecastJob,
) -> Result<Vec<ForecastEnsemble>> {
    let expect_channels = 1 + job.lags.len();
    if model.denoiser.config().input_channels != expect_channels
        || model.denoiser.config().window_len != dataset.window_len()
    {
        return Err(Error::Shape {
            context: "forecast model vs dataset",
            expected: vec![
                model.denoiser.config().window_len,
                model.denoiser.config().input_channels,
            ],
            actual: vec![dataset.window_len(), expect_channels],
        });
    }
    let cfg = GuidanceConfig {
        variant: job.variant,
        scale: job.scale,
        quantile_levels: Vec::new(),
        laplace_scale: 1.0,
    };
    let max_lag = job.lags.iter().copied().max().unwrap_or(0);
    let mut out = Vec::new();
    for s in 0..dataset.series.len() {
        if dataset.series[s].values.len() < dataset.window_len() + max_lag {
            log::warn!(
                "skipping series {s}: too short for one window with lags ({} < {})",
                dataset.series[s].values.len(),
                dataset.window_len() + max_lag
            );
            continue;
        }
        let pattern = match job.missing {
            Some((scenario, ratio)) => {
                let mut rng = substream(job.seed, &[TAG_MASK, s as u64]);
                Some(make_missing_mask(
                    scenario,
                    ratio,
                    dataset.context_length,
                    dataset.prediction_length,
                    &mut rng,
                )?)
            }
            None => None,
        };
        let window =
            SeriesWindow::forecast_task(dataset, s, &job.lags, pattern.as_ref(), job.guide_lags)?;
        let series_seed = derive_key(job.seed, &[TAG_CHAIN, s as u64]);
        out.push(self_guided_sample(
            model,
            &window,
            &cfg,
            job.n_paths,
            series_seed,
        )?);
    }
    Ok(out)
}

/// Synthesize `count` unconditional windows, de-normalized with scales
/// resampled from the training-scale distribution recorded in the
/// checkpoint (scale 1 when the model carries none).
pub fn synthesize_windows(
    model: &DiffusionModel,
    count: usize,
    seed: u64,
) -> Result<Vec<SampleRecord>> {
    let states =
        crate::guidance::sample_unconditional(model, count, derive_key(seed, &[TAG_SYNTH]))?;
    let mut scale_rng = substream(seed, &[TAG_SCALE]);
    if model.meta.scales.is_empty() && count > 0 {
        log::warn!("model carries no training scales; synthesized windows keep scale 1");
    }
    Ok(states
        .into_iter()
        .enumerate()
        .map(|(index, x)| {
            let scale = if model.meta.scales.is_empty() {
                1.0
            } else {
                model.meta.scales[scale_rng.random_range(0..model.meta.scales.len())]
            };
            let values = (0..x.dim().0).map(|l| x[[l, 0]] * scale).collect();
            SampleRecord {
                index,
                scale,
                values,
            }
        })
        .collect())
}

/// Seasonal-naive point forecasts over every series' final window, as
/// single-path ensembles ready for refinement or evaluation.
pub fn seasonal_naive_ensembles(dataset: &Dataset, season: usize) -> Result<Vec<ForecastEnsemble>> {
    let mut out = Vec::new();
    for (s, series) in dataset.series.iter().enumerate() {
        let len = dataset.window_len();
        if series.values.len() < len {
            log::warn!("skipping series {s}: too short for one window");
            continue;
        }
        let offset = series.values.len() - len;
        let context = &series.values[offset..offset + dataset.context_length];
        let forecast = seasonal_naive(context, season, dataset.prediction_length)?;
        let targets: Vec<usize> = (dataset.context_length..len).collect();
        out.push(ForecastEnsemble::from_paths(
            s,
            offset,
            len,
            targets,
            vec![forecast],
        )?);
    }
    Ok(out)
}

/// Rebuild the forecasting window a forecast record refers to, taking the
/// observed set as the complement of the record's target indices.
pub fn window_from_record(
    dataset: &Dataset,
    series: usize,
    window_offset: usize,
    window_len: usize,
    target_indices: &[usize],
) -> Result<SeriesWindow> {
    let s = dataset
        .series
        .get(series)
        .ok_or_else(|| Error::Alignment(format!("series {series} not present in dataset")))?;
    if window_offset + window_len > s.values.len() {
        return Err(Error::Alignment(format!(
            "series {series}: window [{window_offset}, {}) out of range ({} values)",
            window_offset + window_len,
            s.values.len()
        )));
    }
    let mut obs = ndarray::Array2::from_elem((window_len, 1), true);
    for &ti in target_indices {
        if ti >= window_len {
            return Err(Error::Alignment(format!(
                "series {series}: target index {ti} outside window of length {window_len}"
            )));
        }
        obs[[ti, 0]] = false;
    }
    let raw = &s.values[window_offset..window_offset + window_len];
    let observed: Vec<f64> = (0..window_len).filter(|&l| obs[[l, 0]]).map(|l| raw[l]).collect();
    let scale = crate::data::mean_abs_scale(&observed);
    let mut values = ndarray::Array2::zeros((window_len, 1));
    for l in 0..window_len {
        if obs[[l, 0]] {
            values[[l, 0]] = raw[l] / scale;
        }
    }
    Ok(SeriesWindow {
        series,
        offset: window_offset,
        scale,
        mask: crate::guidance::ObservationMask { obs, values },
    })
}

/// Compute the representative diffusion step on a batch of training windows.
pub fn representative_step_for(
    model: &DiffusionModel,
    dataset: &Dataset,
    batch: usize,
    seed: u64,
) -> Result<usize> {
    let sampler = WindowSampler::new(dataset, &[], false)?;
    let mut rng = substream(seed, &[TAG_TAU]);
    let windows: Vec<ndarray::Array2<f64>> =
        (0..batch).map(|_| sampler.sample(&mut rng).x).collect();
    representative_step(&model.denoiser, &model.schedule, &windows, seed)
}

/// Refine every record of a base forecast against the model.
pub fn refine_forecasts(
    model: &DiffusionModel,
    dataset: &Dataset,
    base: &[ForecastEnsemble],
    cfg: &RefinementConfig,
    n_paths: usize,
    seed: u64,
) -> Result<Vec<ForecastEnsemble>> {
    base.iter()
        .enumerate()
        .map(|(i, b)| {
            let window = window_from_record(
                dataset,
                b.series,
                b.window_offset,
                b.window_len,
                &b.target_indices,
            )?;
            refine_ensemble(
                model,
                &window,
                b,
                cfg,
                n_paths,
                derive_key(seed, &[i as u64]),
            )
        })
        .collect()
}

/// Per-series and aggregate CRPS of forecasts against the dataset.
#[derive(Debug, Clone)]
pub struct CrpsEvaluation {
    /// Dataset-level normalized average quantile loss.
    pub aggregate: f64,
    /// `(series, score)` pairs in input order.
    pub per_series: Vec<(usize, f64)>,
}

/// Evaluate forecasts over the forecast horizon (target positions at or
/// beyond the context length).
pub fn evaluate_crps(
    dataset: &Dataset,
    ensembles: &[ForecastEnsemble],
) -> Result<CrpsEvaluation> {
    let mut horizons = Vec::with_capacity(ensembles.len());
    let mut actuals = Vec::with_capacity(ensembles.len());
    for e in ensembles {
        let s = dataset.series.get(e.series).ok_or_else(|| {
            Error::Alignment(format!("series {} not present in dataset", e.series))
        })?;
        let horizon = e.restrict_from(dataset.context_length);
        let mut act = Vec::with_capacity(horizon.target_indices.len());
        for &ti in &horizon.target_indices {
            let pos = e.window_offset + ti;
            if pos >= s.values.len() {
                return Err(Error::Alignment(format!(
                    "series {}: target position {pos} beyond series end {}",
                    e.series,
                    s.values.len()
                )));
            }
            act.push(s.values[pos]);
        }
        horizons.push(horizon);
        actuals.push(act);
    }
    let mut per_series = Vec::with_capacity(horizons.len());
    for (h, a) in horizons.iter().zip(&actuals) {
        let score = aggregate_crps(&[EvalItem {
            paths: &h.paths,
            actuals: a,
        }])?;
        per_series.push((h.series, score));
    }
    let items: Vec<EvalItem> = horizons
        .iter()
        .zip(&actuals)
        .map(|(h, a)| EvalItem {
            paths: &h.paths,
            actuals: a,
        })
        .collect();
    Ok(CrpsEvaluation {
        aggregate: aggregate_crps(&items)?,
        per_series,
    })
}

/// Evaluate synthesized samples by the linear predictive score against the
/// dataset's final windows.
pub fn evaluate_lps(dataset: &Dataset, samples: &[SampleRecord], alpha: f64) -> Result<f64> {
    let len = dataset.window_len();
    let mut windows = Vec::with_capacity(samples.len());
    for rec in samples {
        if rec.values.len() != len {
            return Err(Error::Alignment(format!(
                "sample {} has {} values, dataset window length is {len}",
                rec.index,
                rec.values.len()
            )));
        }
        windows.push(rec.values.clone());
    }
    let mut test = Vec::with_capacity(dataset.series.len());
    for (s, series) in dataset.series.iter().enumerate() {
        if series.values.len() < len {
            return Err(Error::Alignment(format!(
                "series {s} too short for one evaluation window"
            )));
        }
        let n = series.values.len();
        test.push((
            series.values[n - len..n - dataset.prediction_length].to_vec(),
            series.values[n - dataset.prediction_length..].to_vec(),
        ));
    }
    linear_predictive_score(
        &windows,
        &test,
        dataset.context_length,
        dataset.prediction_length,
        alpha,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_generate, SynthSpec};

    fn toy_dataset() -> Dataset {
        synth_generate(
            &SynthSpec::SeasonalNoise {
                pattern: vec![1.0, 2.0, 3.0, 4.0],
                noise_std: 0.05,
            },
            4,
            80,
            11,
        )
        .unwrap()
        .with_lengths(12, 4)
    }

    fn tiny_model(window_len: usize) -> DiffusionModel {
        let cfg = crate::denoiser::DenoiserConfig {
            window_len,
            input_channels: 1,
            residual_layers: 1,
            channels: 4,
            time_emb_dim: 4,
            skip_input_to_output: false,
        };
        DiffusionModel::new(
            Denoiser::init(cfg, 1).unwrap(),
            20,
            1e-4,
            0.1,
            TrainMeta::default(),
        )
        .unwrap()
    }

    #[test]
    fn forecast_covers_every_series_and_is_deterministic() {
        let ds = toy_dataset();
        let model = tiny_model(ds.window_len());
        let job = ForecastJob::quantile(1.0, 3, 7);
        let a = forecast_dataset(&model, &ds, &job).unwrap();
        let b = forecast_dataset(&model, &ds, &job).unwrap();
        assert_eq!(a.len(), 4);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x, y);
        }
        assert_eq!(a[0].num_paths(), 3);
        assert_eq!(a[0].target_indices, (12..16).collect::<Vec<_>>());
    }

    #[test]
    fn seasonal_naive_ensembles_echo_last_season() {
        let ds = toy_dataset();
        let base = seasonal_naive_ensembles(&ds, 4).unwrap();
        assert_eq!(base.len(), 4);
        assert_eq!(base[0].num_paths(), 1);
        assert_eq!(base[0].target_indices.len(), 4);
    }

    #[test]
    fn evaluate_crps_runs_on_naive_base() {
        let ds = toy_dataset();
        let base = seasonal_naive_ensembles(&ds, 4).unwrap();
        let eval = evaluate_crps(&ds, &base).unwrap();
        assert!(eval.aggregate.is_finite() && eval.aggregate >= 0.0);
        assert_eq!(eval.per_series.len(), 4);
    }

    #[test]
    fn window_from_record_matches_forecast_task() {
        let ds = toy_dataset();
        let direct = SeriesWindow::forecast_task(&ds, 1, &[], None, true).unwrap();
        let rebuilt = window_from_record(
            &ds,
            1,
            direct.offset,
            direct.len(),
            &direct.mask.channel0_targets(),
        )
        .unwrap();
        assert_eq!(direct.scale, rebuilt.scale);
        assert_eq!(direct.mask.obs, rebuilt.mask.obs);
        assert_eq!(direct.mask.values, rebuilt.mask.values);
    }

    #[test]
    fn synthesized_windows_resample_training_scales() {
        let ds = toy_dataset();
        let mut model = tiny_model(ds.window_len());
        model.meta.scales = vec![2.0, 4.0];
        let samples = synthesize_windows(&model, 5, 3).unwrap();
        assert_eq!(samples.len(), 5);
        for rec in &samples {
            assert!(rec.scale == 2.0 || rec.scale == 4.0);
            assert_eq!(rec.values.len(), ds.window_len());
        }
    }

    #[test]
    fn misaligned_sample_length_is_reported() {
        let ds = toy_dataset();
        let samples = vec![SampleRecord {
            index: 0,
            scale: 1.0,
            values: vec![0.0; 3],
        }];
        match evaluate_lps(&ds, &samples, 1.0) {
            Err(Error::Alignment(msg)) => assert!(msg.contains("sample 0"), "{msg}"),
            other => panic!("expected alignment error, got {other:?}"),
        }
    }
}
