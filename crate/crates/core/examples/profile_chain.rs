// Scratch calibration: LPS sensitivity to training length and noise level.
use std::time::Instant;

use diffseries::config::RunConfig;
use diffseries::data::{slice_random_window, synth_generate, Dataset, SynthSpec};
use diffseries::metrics::linear_predictive_score;
use diffseries::model::DiffusionModel;
use diffseries::pipeline::{synthesize_windows, train_model};

fn toy_dataset(noise: f64) -> Dataset {
    synth_generate(
        &SynthSpec::SineMixture {
            periods: vec![24.0, 48.0],
            amplitudes: vec![1.0, 0.4],
            noise_std: noise,
        },
        64,
        400,
        2024,
    )
    .unwrap()
    .with_lengths(72, 24)
}

fn train_toy(dataset: &Dataset, seed: u64, epochs: usize) -> DiffusionModel {
    let mut cfg = RunConfig::default();
    cfg.dataset.holdout_last_window = true;
    cfg.model.residual_layers = 5;
    cfg.model.channels = 16;
    cfg.model.time_emb_dim = 32;
    cfg.model.init_seed = seed;
    cfg.train.epochs = epochs;
    cfg.train.batch_size = 32;
    cfg.train.batches_per_epoch = 32;
    cfg.train.seed = seed;
    let t0 = Instant::now();
    let (model, report) = train_model(&cfg, dataset).unwrap();
    println!(
        "  train epochs={epochs}: loss -> {:.4} in {:?}",
        report.epoch_losses.last().unwrap(),
        t0.elapsed()
    );
    model
}

fn lps_triple(model: &DiffusionModel, dataset: &Dataset, n_synth: usize, gen_seed: u64) {
    let samples = synthesize_windows(model, n_synth, gen_seed).unwrap();
    let windows: Vec<Vec<f64>> = samples.iter().map(|s| s.values.clone()).collect();
    let test: Vec<(Vec<f64>, Vec<f64>)> = dataset
        .series
        .iter()
        .map(|s| {
            let n = s.values.len();
            (s.values[n - 96..n - 24].to_vec(), s.values[n - 24..].to_vec())
        })
        .collect();
    let lps_model = linear_predictive_score(&windows, &test, 72, 24, 1.0).unwrap();
    let mut rng = diffseries::rng::substream(77, &[]);
    let mut real = Vec::new();
    for i in 0..n_synth {
        let sidx = i % dataset.series.len();
        let w = slice_random_window(&dataset.series[sidx], sidx, 96, &mut rng).unwrap();
        real.push(w.inverse().to_vec());
    }
    let lps_real = linear_predictive_score(&real, &test, 72, 24, 1.0).unwrap();
    println!(
        "  n={n_synth} gen_seed={gen_seed}: LPS model {lps_model:.4} real {lps_real:.4} ratio {:.3}",
        lps_model / lps_real
    );
}

fn main() {
    println!("== noise 0.25, epochs 100 ==");
    let ds = toy_dataset(0.25);
    let m = train_toy(&ds, 0, 100);
    lps_triple(&m, &ds, 1024, 55);
    lps_triple(&m, &ds, 2048, 55);

    println!("== noise 0.40, epochs 100 ==");
    let ds4 = toy_dataset(0.40);
    let m4 = train_toy(&ds4, 0, 100);
    lps_triple(&m4, &ds4, 1024, 55);
}
