//! Exact binomial confidence intervals and bootstrap resampling.

use rand::Rng;
use statrs::distribution::{Beta, ContinuousCDF};

use crate::error::{Result, SpoccError};

/// Exact Clopper-Pearson interval for a binomial proportion, from beta
/// quantiles. The boundary cases `s = 0` and `s = n` pin the corresponding
/// endpoint at 0 or 1.
pub fn clopper_pearson(successes: u64, trials: u64, confidence: f64) -> (f64, f64) {
    assert!(trials > 0 && successes <= trials);
    assert!((0.0..1.0).contains(&confidence) && confidence > 0.0);
    let alpha = 1.0 - confidence;
    let s = successes as f64;
    let n = trials as f64;
    let lower = if successes == 0 {
        0.0
    } else {
        Beta::new(s, n - s + 1.0)
            .expect("valid shapes")
            .inverse_cdf(alpha / 2.0)
    };
    let upper = if successes == trials {
        1.0
    } else {
        Beta::new(s + 1.0, n - s)
            .expect("valid shapes")
            .inverse_cdf(1.0 - alpha / 2.0)
    };
    (lower, upper)
}

/// Half-width of the Clopper-Pearson interval.
pub fn clopper_pearson_half_width(successes: u64, trials: u64, confidence: f64) -> f64 {
    let (lower, upper) = clopper_pearson(successes, trials, confidence);
    0.5 * (upper - lower)
}

/// Percentile bootstrap of the sample mean: resample with replacement,
/// take the quantile spread of the resampled means. Returns the sample
/// mean and half the distance between the upper and lower quantiles.
pub fn bootstrap_ci<R: Rng + ?Sized>(
    samples: &[f64],
    resamples: usize,
    level: f64,
    rng: &mut R,
) -> Result<(f64, f64)> {
    if samples.len() < 2 {
        return Err(SpoccError::InvalidParameter(format!(
            "bootstrap needs at least 2 samples, got {}",
            samples.len()
        )));
    }
    if !(0.0 < level && level < 1.0) || resamples == 0 {
        return Err(SpoccError::InvalidParameter(
            "bootstrap needs 0 < level < 1 and at least one resample".into(),
        ));
    }
    let n = samples.len();
    let mean = samples.iter().sum::<f64>() / n as f64;
    let mut means = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        let mut sum = 0.0;
        for _ in 0..n {
            sum += samples[rng.random_range(0..n)];
        }
        means.push(sum / n as f64);
    }
    means.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let alpha = 1.0 - level;
    let lower = quantile_sorted(&means, alpha / 2.0);
    let upper = quantile_sorted(&means, 1.0 - alpha / 2.0);
    Ok((mean, 0.5 * (upper - lower)))
}

/// Linear-interpolation quantile of a sorted slice.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let last = sorted.len() - 1;
    let pos = q * last as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let w = pos - lo as f64;
        sorted[lo] * (1.0 - w) + sorted[hi] * w
    }
}

/// Sample standard deviation (n - 1 denominator); zero for fewer than two
/// samples.
pub fn std_dev(samples: &[f64]) -> f64 {
    if samples.len() < 2 {
        return 0.0;
    }
    let mean = samples.iter().sum::<f64>() / samples.len() as f64;
    let var =
        samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (samples.len() - 1) as f64;
    var.sqrt()
}
