//! The evaluation metrics on their own: CRPS identities on constructed
//! ensembles and the linear predictive score comparing synthetic-sample
//! sources.
//!
//! Run with: `cargo run --release --example evaluate_metrics`

use diffseries::data::{slice_random_window, synth_generate, SynthSpec};
use diffseries::metrics::{crps, linear_predictive_score, pinball_loss, STANDARD_LEVELS};
use diffseries::rng::{standard_normal_vec, substream};

fn main() -> diffseries::Result<()> {
    // Pinball loss basics.
    println!("pinball(q=0, y=1, k=0.9) = {}", pinball_loss(0.0, 1.0, 0.9));
    println!("pinball(q=1, y=0, k=0.9) = {}", pinball_loss(1.0, 0.0, 0.9));

    // CRPS of a point forecast equals the absolute error under the nine
    // standard levels; a perfect ensemble scores zero.
    println!("\ncrps of point forecast 2.0 vs y=3.5: {}", crps(&[2.0], 3.5)?);
    println!("crps of perfect ensemble: {}", crps(&[3.5; 50], 3.5)?);

    // CRPS rewards calibrated spread: score a Gaussian ensemble at several
    // spreads against a fixed outcome drawn off-center.
    let mut rng = substream(5, &[]);
    let noise = standard_normal_vec(&mut rng, 100);
    println!("\nensemble spread vs crps (y = 1.0 off a 0-centered forecast):");
    for spread in [0.25, 0.5, 1.0, 2.0, 4.0] {
        let samples: Vec<f64> = noise.iter().map(|e| spread * e).collect();
        println!("  spread {spread:4}: crps {:.4}", crps(&samples, 1.0)?);
    }
    println!("levels used: {STANDARD_LEVELS:?}");

    // Linear predictive score: train-on-synthetic, test-on-real with a
    // closed-form ridge forecaster. Real windows beat white noise.
    let ds = synth_generate(
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
    let len = ds.window_len();
    let mut rng = substream(7, &[]);
    let mut real = Vec::new();
    for i in 0..256usize {
        let sidx = i % ds.series.len();
        let w = slice_random_window(&ds.series[sidx], sidx, len, &mut rng)?;
        real.push(w.inverse().to_vec());
    }
    let mut noise_rng = substream(8, &[]);
    let white: Vec<Vec<f64>> = (0..256).map(|_| standard_normal_vec(&mut noise_rng, len)).collect();
    let test: Vec<(Vec<f64>, Vec<f64>)> = ds
        .series
        .iter()
        .map(|s| {
            let n = s.values.len();
            (
                s.values[n - len..n - ds.prediction_length].to_vec(),
                s.values[n - ds.prediction_length..].to_vec(),
            )
        })
        .collect();
    let lps_real = linear_predictive_score(&real, &test, 36, 12, 1.0)?;
    let lps_white = linear_predictive_score(&white, &test, 36, 12, 1.0)?;
    println!("\nLPS from real windows:  {lps_real:.4}");
    println!("LPS from white noise:   {lps_white:.4}");
    Ok(())
}
