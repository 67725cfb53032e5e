//! Improve a seasonal-naive point forecast by Langevin refinement against a
//! trained model, without re-running reverse diffusion.
//!
//! Run with: `cargo run --release --example refine_base_forecast`

use diffseries::config::RunConfig;
use diffseries::data::{synth_generate, SynthSpec};
use diffseries::pipeline::{
    evaluate_crps, refine_forecasts, representative_step_for, seasonal_naive_ensembles,
    train_model,
};
use diffseries::refine::{Regularizer, RefinementConfig};

fn main() -> diffseries::Result<()> {
    let dataset = synth_generate(
        &SynthSpec::SineMixture {
            periods: vec![12.0],
            amplitudes: vec![1.0],
            noise_std: 0.2,
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

    let tau = representative_step_for(&model, &dataset, 256, 21)?;
    println!("representative diffusion step: {tau}");

    let base = seasonal_naive_ensembles(&dataset, 12)?;
    let base_crps = evaluate_crps(&dataset, &base)?.aggregate;
    println!("seasonal naive base: crps {base_crps:.4}");

    for (name, noise_factor, regularizer) in [
        ("LMC-Q", 1.0, Regularizer::Quantile),
        ("LMC-MS", 1.0, Regularizer::MeanSquare),
        ("ML-Q ", 0.0, Regularizer::Quantile),
    ] {
        let rcfg = RefinementConfig {
            regularizer,
            step_size: 0.05,
            noise_factor,
            lambda: 1.0,
            iterations: 20,
            tau,
            fresh_eps_per_iter: true,
        };
        let refined = refine_forecasts(&model, &dataset, &base, &rcfg, 19, 4)?;
        let crps = evaluate_crps(&dataset, &refined)?.aggregate;
        println!(
            "{name} (20 iterations): crps {crps:.4} ({:+.1}% vs base)",
            (crps / base_crps - 1.0) * 100.0
        );
    }
    Ok(())
}
