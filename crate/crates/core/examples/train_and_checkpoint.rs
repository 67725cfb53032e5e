//! Train a small model on synthetic data and round-trip it through a
//! checkpoint file.
//!
//! Run with: `cargo run --release --example train_and_checkpoint`

use diffseries::config::RunConfig;
use diffseries::data::{synth_generate, SynthSpec};
use diffseries::model::DiffusionModel;
use diffseries::pipeline::train_model;

fn main() -> diffseries::Result<()> {
    let dataset = synth_generate(
        &SynthSpec::SineMixture {
            periods: vec![24.0],
            amplitudes: vec![1.0],
            noise_std: 0.2,
        },
        8,
        240,
        7,
    )?
    .with_lengths(36, 12);

    let mut cfg = RunConfig::default();
    cfg.model.residual_layers = 3;
    cfg.model.channels = 12;
    cfg.model.time_emb_dim = 16;
    cfg.train.epochs = 15;
    cfg.train.batch_size = 16;
    cfg.train.batches_per_epoch = 8;
    cfg.train.seed = 1;

    println!("training a {}-parameter model...", cfg.denoiser_config(48).param_count());
    let (model, report) = train_model(&cfg, &dataset)?;
    println!(
        "loss: first epoch {:.4}, last epoch {:.4}",
        report.epoch_losses[0],
        report.epoch_losses.last().unwrap()
    );

    let dir = std::env::temp_dir().join("diffseries-example");
    std::fs::create_dir_all(&dir).expect("temp dir");
    let path = dir.join("model.ckpt");
    model.save(&path)?;
    let loaded = DiffusionModel::load(&path)?;
    println!(
        "checkpoint written to {} ({} parameters, schedule T = {})",
        path.display(),
        loaded.denoiser.params().values.len(),
        loaded.schedule.steps()
    );

    // Saving the loaded model again produces the identical file.
    let path2 = dir.join("model2.ckpt");
    loaded.save(&path2)?;
    let identical = std::fs::read(&path).unwrap() == std::fs::read(&path2).unwrap();
    println!("round-trip byte-identical: {identical}");
    Ok(())
}
