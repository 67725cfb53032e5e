//! Forecast with observation-guided sampling and compare both guidance
//! variants against the realized values.
//!
//! Run with: `cargo run --release --example forecast_guided`

use diffseries::config::RunConfig;
use diffseries::data::{synth_generate, SynthSpec};
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
    println!("training...");
    let (model, _) = train_model(&cfg, &dataset)?;

    for (name, job) in [
        ("quantile  s=4", ForecastJob::quantile(4.0, 19, 11)),
        ("mean-sq   s=0.125", ForecastJob::mean_square(0.125, 19, 11)),
        ("unguided  s=0", ForecastJob::quantile(0.0, 19, 11)),
    ] {
        let forecasts = forecast_dataset(&model, &dataset, &job)?;
        let eval = evaluate_crps(&dataset, &forecasts)?;
        println!("{name}: aggregate crps {:.4}", eval.aggregate);
    }

    // Show one forecast in detail.
    let job = ForecastJob::quantile(4.0, 19, 11);
    let forecasts = forecast_dataset(&model, &dataset, &job)?;
    let e = &forecasts[0];
    let summary = e.quantile_summary();
    let actual = dataset.horizon_actuals(e.series)?;
    println!("\nseries 0 horizon (median / 10%..90% band / actual):");
    let h_offset = e.target_indices.len() - actual.len();
    for (i, y) in actual.iter().enumerate() {
        let ti = h_offset + i;
        println!(
            "  step {:2}: {:7.3}  [{:7.3}, {:7.3}]  y = {:7.3}",
            i + 1,
            summary.values[4][ti],
            summary.values[0][ti],
            summary.values[8][ti],
            y
        );
    }
    Ok(())
}
