//! Forward/reverse diffusion arithmetic on a fixed noise schedule.
//!
//! Diffusion steps are 1-indexed: step `t` in `1..=T` applies the `t`-th
//! noising transition, and `t = 0` denotes clean data. All arithmetic is
//! 64-bit; the guidance gradients and Langevin iterations downstream are
//! sensitive to accumulation error.

use ndarray::Array2;

use crate::error::{Error, Result};

/// Per-step variances of the noising process and quantities derived from
/// them.
///
/// For the linear schedule, `beta` interpolates between its endpoints,
/// `alpha[t] = 1 - beta[t]`, `alpha_bar[t]` is the running product of the
/// alphas, and `sigma2[t] = (1 - alpha_bar[t-1]) / (1 - alpha_bar[t]) *
/// beta[t]` is the reverse-transition variance. The boundary convention
/// `alpha_bar(0) = 1` makes `sigma2(1) = 0`, so the final reverse step is
/// deterministic.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    sigma2: Vec<f64>,
}

impl NoiseSchedule {
    /// Build a linear schedule with `steps` entries interpolating from
    /// `beta_first` (step 1) to `beta_last` (step `steps`).
    pub fn linear(steps: usize, beta_first: f64, beta_last: f64) -> Result<Self> {
        if steps < 2 {
            return Err(Error::Parameter {
                name: "steps",
                reason: format!("need at least 2 diffusion steps, got {steps}"),
            });
        }
        if !(beta_first > 0.0 && beta_first <= beta_last && beta_last < 1.0) {
            return Err(Error::Parameter {
                name: "beta",
                reason: format!(
                    "require 0 < beta_first <= beta_last < 1, got ({beta_first}, {beta_last})"
                ),
            });
        }
        let span = beta_last - beta_first;
        let denom = (steps - 1) as f64;
        let beta: Vec<f64> = (0..steps)
            .map(|i| beta_first + i as f64 * span / denom)
            .collect();
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bar = Vec::with_capacity(steps);
        let mut prod = 1.0;
        for a in &alpha {
            prod *= a;
            alpha_bar.push(prod);
        }
        let mut sigma2 = Vec::with_capacity(steps);
        for t in 1..=steps {
            let prev = if t == 1 { 1.0 } else { alpha_bar[t - 2] };
            sigma2.push((1.0 - prev) / (1.0 - alpha_bar[t - 1]) * beta[t - 1]);
        }
        Ok(Self {
            beta,
            alpha,
            alpha_bar,
            sigma2,
        })
    }

    /// Number of diffusion steps `T`.
    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    fn check_step(&self, t: usize) -> Result<()> {
        if t >= 1 && t <= self.steps() {
            Ok(())
        } else {
            Err(Error::Parameter {
                name: "t",
                reason: format!("diffusion step {t} outside 1..={}", self.steps()),
            })
        }
    }

    /// Noise variance added at step `t` (1-indexed).
    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    /// `1 - beta(t)`.
    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t - 1]
    }

    /// Cumulative signal retention after `t` steps; `alpha_bar(0) = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bar[t - 1]
        }
    }

    /// Reverse-transition variance at step `t`; zero at `t = 1`.
    pub fn sigma2(&self, t: usize) -> f64 {
        self.sigma2[t - 1]
    }

    /// Reverse-transition standard deviation at step `t`.
    pub fn sigma(&self, t: usize) -> f64 {
        self.sigma2(t).sqrt()
    }
}

/// A (possibly noisy) sequence together with its diffusion step.
///
/// `t = 0` denotes clean data; `1 <= t <= T` denotes the output of `t`
/// noising steps. Channel 0 holds the series; remaining channels hold lags.
#[derive(Debug, Clone)]
pub struct DiffusedState {
    /// The sequence values, `L x C`.
    pub x: Array2<f64>,
    /// Diffusion step index in `0..=T`.
    pub t: usize,
}

fn check_same_shape(context: &'static str, a: &Array2<f64>, b: &Array2<f64>) -> Result<()> {
    if a.dim() == b.dim() {
        Ok(())
    } else {
        Err(Error::Shape {
            context,
            expected: vec![a.dim().0, a.dim().1],
            actual: vec![b.dim().0, b.dim().1],
        })
    }
}

/// Diffuse clean data `y` to step `t` in closed form:
/// `sqrt(alpha_bar_t) * y + sqrt(1 - alpha_bar_t) * eps`.
///
/// The noise draw is supplied by the caller so tests can control it.
pub fn forward_sample(
    y: &Array2<f64>,
    t: usize,
    eps: &Array2<f64>,
    sched: &NoiseSchedule,
) -> Result<Array2<f64>> {
    sched.check_step(t)?;
    check_same_shape("forward_sample", y, eps)?;
    let ab = sched.alpha_bar(t);
    let (sa, sb) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(y * sa + eps * sb)
}

/// Mean of the reverse transition given the predicted noise:
/// `(x_t - beta_t / sqrt(1 - alpha_bar_t) * eps_pred) / sqrt(alpha_t)`.
pub fn posterior_mean(
    x_t: &Array2<f64>,
    eps_pred: &Array2<f64>,
    t: usize,
    sched: &NoiseSchedule,
) -> Result<Array2<f64>> {
    sched.check_step(t)?;
    check_same_shape("posterior_mean", x_t, eps_pred)?;
    let coef = sched.beta(t) / (1.0 - sched.alpha_bar(t)).sqrt();
    Ok((x_t - eps_pred * coef) / sched.alpha(t).sqrt())
}

/// One ancestral reverse transition: the posterior mean plus
/// `sigma(t) * noise`. At `t = 1` the variance is zero, so the step is
/// deterministic regardless of `noise`.
pub fn reverse_step(
    x_t: &Array2<f64>,
    eps_pred: &Array2<f64>,
    t: usize,
    noise: &Array2<f64>,
    sched: &NoiseSchedule,
) -> Result<Array2<f64>> {
    check_same_shape("reverse_step", x_t, noise)?;
    let mean = posterior_mean(x_t, eps_pred, t, sched)?;
    let sigma = sched.sigma(t);
    if sigma == 0.0 {
        Ok(mean)
    } else {
        Ok(mean + noise * sigma)
    }
}

/// Mean squared error between predicted and true noise, averaged over all
/// elements so the value is invariant to sequence length and channel count.
pub fn denoising_loss(eps_pred: &Array2<f64>, eps: &Array2<f64>) -> f64 {
    assert_eq!(
        eps_pred.dim(),
        eps.dim(),
        "denoising_loss requires equal shapes"
    );
    let n = eps.len() as f64;
    eps_pred
        .iter()
        .zip(eps.iter())
        .map(|(p, e)| (p - e) * (p - e))
        .sum::<f64>()
        / n
}

/// Estimate the clean data from a noisy state by inverting the closed-form
/// diffusion with the predicted noise:
/// `(x_t - sqrt(1 - alpha_bar_t) * eps_pred) / sqrt(alpha_bar_t)`.
pub fn one_step_denoise(
    x_t: &Array2<f64>,
    eps_pred: &Array2<f64>,
    t: usize,
    sched: &NoiseSchedule,
) -> Result<Array2<f64>> {
    sched.check_step(t)?;
    check_same_shape("one_step_denoise", x_t, eps_pred)?;
    let ab = sched.alpha_bar(t);
    Ok((x_t - eps_pred * (1.0 - ab).sqrt()) / ab.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{standard_normal_matrix, substream};
    use approx::assert_relative_eq;
    use ndarray::arr2;
    use rand::Rng;

    fn paper_schedule() -> NoiseSchedule {
        NoiseSchedule::linear(100, 1e-4, 0.1).unwrap()
    }

    #[test]
    fn linear_schedule_midpoint() {
        let s = paper_schedule();
        // beta_50 = 1e-4 + 49 * 0.0999 / 99
        assert_relative_eq!(s.beta(50), 1e-4 + 49.0 * 0.0999 / 99.0, epsilon = 1e-15);
        assert_relative_eq!(s.beta(50), 0.049_545_454_545_454_54, epsilon = 1e-12);
        assert_relative_eq!(s.beta(1), 1e-4, epsilon = 1e-18);
        assert_relative_eq!(s.beta(100), 0.1, epsilon = 1e-15);
    }

    #[test]
    fn alpha_bar_matches_cumulative_product_oracle() {
        let s = paper_schedule();
        let mut prod = 1.0;
        for t in 1..=100 {
            prod *= 1.0 - s.beta(t);
            assert!(
                (s.alpha_bar(t) - prod).abs() <= 1e-12,
                "alpha_bar({t}) off: {} vs {prod}",
                s.alpha_bar(t)
            );
        }
        // Pinned once from the brute-force product; the spec range check.
        assert!(s.alpha_bar(100) > 0.004 && s.alpha_bar(100) < 0.008);
        assert_relative_eq!(s.alpha_bar(100), 5.618_761_019_373_732_5e-3, epsilon = 1e-15);
    }

    #[test]
    fn constant_beta_products() {
        let s = NoiseSchedule::linear(2, 0.5, 0.5).unwrap();
        assert_relative_eq!(s.alpha_bar(1), 0.5, epsilon = 1e-15);
        assert_relative_eq!(s.alpha_bar(2), 0.25, epsilon = 1e-15);
    }

    #[test]
    fn schedule_invariants_hold() {
        let s = paper_schedule();
        for t in 1..=100 {
            assert!(s.beta(t) > 0.0 && s.beta(t) < 1.0);
            if t > 1 {
                assert!(s.beta(t) >= s.beta(t - 1));
                assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
            }
            assert!(s.alpha_bar(t) > 0.0 && s.alpha_bar(t) < 1.0);
            assert!(s.sigma2(t) >= 0.0 && s.sigma2(t) <= s.beta(t));
        }
        assert_eq!(s.sigma2(1), 0.0);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(NoiseSchedule::linear(1, 0.1, 0.2).is_err());
        assert!(NoiseSchedule::linear(10, 0.0, 0.2).is_err());
        assert!(NoiseSchedule::linear(10, 0.3, 0.2).is_err());
        assert!(NoiseSchedule::linear(10, 0.3, 1.0).is_err());
    }

    #[test]
    fn forward_sample_degenerate_cases() {
        let s = paper_schedule();
        let y = arr2(&[[1.0, -2.0], [0.5, 3.0]]);
        let zero = Array2::zeros(y.dim());
        let out = forward_sample(&y, 30, &zero, &s).unwrap();
        let sa = s.alpha_bar(30).sqrt();
        for (o, v) in out.iter().zip(y.iter()) {
            assert_relative_eq!(*o, sa * v, epsilon = 1e-15);
        }
        let eps = arr2(&[[0.3, -0.7], [1.1, 0.0]]);
        let out = forward_sample(&zero, 30, &eps, &s).unwrap();
        let sb = (1.0 - s.alpha_bar(30)).sqrt();
        for (o, e) in out.iter().zip(eps.iter()) {
            assert_relative_eq!(*o, sb * e, epsilon = 1e-15);
        }
    }

    #[test]
    fn forward_sample_monte_carlo_moments() {
        let s = paper_schedule();
        let y = arr2(&[[2.0], [-1.0], [0.5]]);
        let t = 40;
        let n = 100_000;
        let mut rng = substream(11, &[]);
        let mut sum = Array2::<f64>::zeros(y.dim());
        let mut sumsq = Array2::<f64>::zeros(y.dim());
        for _ in 0..n {
            let eps = standard_normal_matrix(&mut rng, 3, 1);
            let x = forward_sample(&y, t, &eps, &s).unwrap();
            sum += &x;
            sumsq += &x.mapv(|v| v * v);
        }
        let mean = sum / n as f64;
        let var = sumsq / n as f64 - mean.mapv(|m| m * m);
        let want_mean = &y * s.alpha_bar(t).sqrt();
        let want_var = 1.0 - s.alpha_bar(t);
        for (m, w) in mean.iter().zip(want_mean.iter()) {
            assert!((m - w).abs() / w.abs() < 0.02, "mean {m} vs {w}");
        }
        for v in var.iter() {
            assert!((v - want_var).abs() / want_var < 0.02, "var {v} vs {want_var}");
        }
    }

    #[test]
    fn posterior_mean_degenerate_denoiser() {
        let s = paper_schedule();
        let x = arr2(&[[0.4, -1.2]]);
        let zero = Array2::zeros(x.dim());
        let mu = posterior_mean(&x, &zero, 17, &s).unwrap();
        for (m, v) in mu.iter().zip(x.iter()) {
            assert_relative_eq!(*m, v / s.alpha(17).sqrt(), epsilon = 1e-15);
        }
    }

    #[test]
    fn posterior_mean_identity_limit() {
        // As beta -> 0 the transition mean approaches the input.
        let s = NoiseSchedule::linear(4, 1e-12, 1e-12).unwrap();
        let x = arr2(&[[0.7], [-0.3]]);
        let zero = Array2::zeros(x.dim());
        let mu = posterior_mean(&x, &zero, 2, &s).unwrap();
        for (m, v) in mu.iter().zip(x.iter()) {
            assert_relative_eq!(*m, *v, epsilon = 1e-9);
        }
    }

    #[test]
    fn posterior_mean_matches_formula_on_random_inputs() {
        let s = paper_schedule();
        let mut rng = substream(5, &[]);
        for &t in &[1usize, 13, 57, 100] {
            let x = standard_normal_matrix(&mut rng, 6, 2);
            let e = standard_normal_matrix(&mut rng, 6, 2);
            let mu = posterior_mean(&x, &e, t, &s).unwrap();
            // Independent re-derivation, element by element.
            let coef = s.beta(t) / (1.0 - s.alpha_bar(t)).sqrt();
            let root_a = s.alpha(t).sqrt();
            for ((m, xv), ev) in mu.iter().zip(x.iter()).zip(e.iter()) {
                assert_relative_eq!(*m, (xv - coef * ev) / root_a, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn reverse_step_zero_noise_is_posterior_mean() {
        let s = paper_schedule();
        let mut rng = substream(6, &[]);
        let x = standard_normal_matrix(&mut rng, 5, 1);
        let e = standard_normal_matrix(&mut rng, 5, 1);
        let zero = Array2::zeros(x.dim());
        let a = reverse_step(&x, &e, 42, &zero, &s).unwrap();
        let b = posterior_mean(&x, &e, 42, &s).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn reverse_step_deterministic_at_final_step() {
        let s = paper_schedule();
        let mut rng = substream(7, &[]);
        let x = standard_normal_matrix(&mut rng, 5, 1);
        let e = standard_normal_matrix(&mut rng, 5, 1);
        let noise = standard_normal_matrix(&mut rng, 5, 1);
        let with_noise = reverse_step(&x, &e, 1, &noise, &s).unwrap();
        let without = reverse_step(&x, &e, 1, &Array2::zeros(x.dim()), &s).unwrap();
        assert_eq!(with_noise, without);
    }

    #[test]
    fn reverse_step_sample_variance_matches_sigma2() {
        let s = paper_schedule();
        let x = arr2(&[[0.9]]);
        let e = arr2(&[[-0.2]]);
        let t = 60;
        let n = 60_000;
        let mut rng = substream(8, &[]);
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..n {
            let noise = standard_normal_matrix(&mut rng, 1, 1);
            let out = reverse_step(&x, &e, t, &noise, &s).unwrap();
            sum += out[[0, 0]];
            sumsq += out[[0, 0]] * out[[0, 0]];
        }
        let mean = sum / n as f64;
        let var = sumsq / n as f64 - mean * mean;
        assert!(
            (var - s.sigma2(t)).abs() / s.sigma2(t) < 0.03,
            "var {var} vs {}",
            s.sigma2(t)
        );
    }

    #[test]
    fn denoising_loss_trivials_and_brute_force() {
        let e = arr2(&[[0.5, -1.0], [2.0, 0.0]]);
        assert_eq!(denoising_loss(&e, &e), 0.0);
        let shifted = &e + 1.0;
        assert_relative_eq!(denoising_loss(&shifted, &e), 1.0, epsilon = 1e-15);

        let mut rng = substream(9, &[]);
        let a = standard_normal_matrix(&mut rng, 7, 3);
        let b = standard_normal_matrix(&mut rng, 7, 3);
        let mut acc = 0.0;
        for (x, y) in a.iter().zip(b.iter()) {
            acc += (x - y) * (x - y);
        }
        assert_relative_eq!(denoising_loss(&a, &b), acc / 21.0, epsilon = 1e-14);
    }

    #[test]
    fn one_step_denoise_inverts_forward_sample() {
        let s = paper_schedule();
        let mut rng = substream(10, &[]);
        let y = standard_normal_matrix(&mut rng, 8, 2);
        for t in 1..=s.steps() {
            let eps = standard_normal_matrix(&mut rng, 8, 2);
            let x = forward_sample(&y, t, &eps, &s).unwrap();
            let back = one_step_denoise(&x, &eps, t, &s).unwrap();
            for (b, v) in back.iter().zip(y.iter()) {
                assert_relative_eq!(*b, *v, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn one_step_denoise_zero_prediction() {
        let s = paper_schedule();
        let x = arr2(&[[0.25, -4.0]]);
        let zero = Array2::zeros(x.dim());
        let out = one_step_denoise(&x, &zero, 33, &s).unwrap();
        let root_ab = s.alpha_bar(33).sqrt();
        for (o, v) in out.iter().zip(x.iter()) {
            assert_relative_eq!(*o, v / root_ab, epsilon = 1e-15);
        }
    }

    #[test]
    fn marginal_consistency_ancestral_vs_closed_form() {
        // Compose t single-step transitions and compare moments with the
        // closed form; smaller sibling of the acceptance-suite check.
        let s = paper_schedule();
        let y = 1.5;
        let t = 25;
        let n = 20_000;
        let mut rng = substream(12, &[]);
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..n {
            let mut x = y;
            for i in 1..=t {
                let eps: f64 = rng.sample(rand_distr::StandardNormal);
                x = (1.0 - s.beta(i)).sqrt() * x + s.beta(i).sqrt() * eps;
            }
            sum += x;
            sumsq += x * x;
        }
        let mean = sum / n as f64;
        let var = sumsq / n as f64 - mean * mean;
        let want_mean = s.alpha_bar(t).sqrt() * y;
        let want_var = 1.0 - s.alpha_bar(t);
        assert!((mean - want_mean).abs() / want_mean.abs() < 0.02);
        assert!((var - want_var).abs() / want_var < 0.02);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let s = paper_schedule();
        let y = Array2::<f64>::zeros((4, 1));
        let eps = Array2::<f64>::zeros((3, 1));
        match forward_sample(&y, 5, &eps, &s) {
            Err(Error::Shape { .. }) => {}
            other => panic!("expected shape error, got {other:?}"),
        }
    }
}
