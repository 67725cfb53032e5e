//! Sample unconditional windows from a trained model and compare their
//! marginal statistics with the training data.
//!
//! Run with: `cargo run --release --example synthesize_windows`

use diffseries::config::RunConfig;
use diffseries::data::{synth_generate, SynthSpec};
use diffseries::pipeline::{synthesize_windows, train_model};

fn moments(values: impl Iterator<Item = f64>) -> (f64, f64, usize) {
    let v: Vec<f64> = values.collect();
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / v.len() as f64;
    (mean, var.sqrt(), v.len())
}

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
    cfg.model.residual_layers = 4;
    cfg.model.channels = 12;
    cfg.model.time_emb_dim = 16;
    cfg.train.epochs = 25;
    cfg.train.batch_size = 16;
    cfg.train.batches_per_epoch = 16;
    cfg.train.seed = 5;
    println!("training...");
    let (model, _) = train_model(&cfg, &dataset)?;

    let samples = synthesize_windows(&model, 64, 13)?;
    let (gen_mean, gen_std, n) = moments(samples.iter().flat_map(|s| s.values.iter().copied()));
    let (data_mean, data_std, _) =
        moments(dataset.series.iter().flat_map(|s| s.values.iter().copied()));
    println!("generated {n} values over {} windows", samples.len());
    println!("generated marginal: mean {gen_mean:+.3}, std {gen_std:.3}");
    println!("training  marginal: mean {data_mean:+.3}, std {data_std:.3}");

    println!("\nfirst generated window:");
    let w = &samples[0];
    for chunk in w.values.chunks(12) {
        let row: Vec<String> = chunk.iter().map(|v| format!("{v:6.2}")).collect();
        println!("  {}", row.join(" "));
    }
    Ok(())
}
