//! Forecast with half the context unobserved under the three missingness
//! patterns. The model is trained once, unconditionally; the scenarios only
//! change the observation mask handed to guidance at inference time.
//!
//! Run with: `cargo run --release --example forecast_missing_values`

use diffseries::config::RunConfig;
use diffseries::data::{synth_generate, MissingScenario, SynthSpec};
use diffseries::pipeline::{evaluate_crps, forecast_dataset, train_model, ForecastJob};

fn main() -> diffseries::Result<()> {
    let dataset = synth_generate(
        &SynthSpec::SineMixture {
            periods: vec![12.0],
            amplitudes: vec![1.0],
            noise_std: 0.15,
        },
        8,
        240,
        3,
    )?
    .with_lengths(36, 12);

    let mut cfg = RunConfig::default();
    cfg.dataset.holdout_last_window = true;
    cfg.model.residual_layers = 4;
    cfg.model.channels = 12;
    cfg.model.time_emb_dim = 16;
    cfg.train.epochs = 25;
    cfg.train.batch_size = 16;
    cfg.train.batches_per_epoch = 16;
    cfg.train.seed = 5;
    println!("training once, unconditionally...");
    let (model, _) = train_model(&cfg, &dataset)?;

    let base_job = ForecastJob::quantile(4.0, 19, 11);
    let full = forecast_dataset(&model, &dataset, &base_job)?;
    let full_crps = evaluate_crps(&dataset, &full)?.aggregate;
    println!("fully observed context: crps {full_crps:.4}");

    for scenario in [
        MissingScenario::Random,
        MissingScenario::BlackoutStart,
        MissingScenario::BlackoutEnd,
    ] {
        let mut job = base_job.clone();
        job.missing = Some((scenario, 0.5));
        let forecasts = forecast_dataset(&model, &dataset, &job)?;
        let crps = evaluate_crps(&dataset, &forecasts)?.aggregate;
        println!(
            "{scenario:?} at ratio 0.5: crps {crps:.4} ({:+.1}% vs fully observed)",
            (crps / full_crps - 1.0) * 100.0
        );
    }
    Ok(())
}
