use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::StatsError;

pub const DEFAULT_RESAMPLES: usize = 10_000;
pub const DEFAULT_LEVEL: f64 = 0.95;

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Percentile bootstrap interval for the mean of `values`.
///
/// Resamples with replacement using a ChaCha8 stream seeded from `seed`, so
/// the interval depends only on the data, `resamples`, `level` and `seed`.
pub fn bootstrap_mean_ci<F: Float>(
    values: &[F],
    resamples: usize,
    level: f64,
    seed: u64,
) -> Result<(F, F), StatsError> {
    if values.is_empty() {
        return Err(StatsError::Empty);
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(StatsError::InvalidLevel(level));
    }
    if resamples == 0 {
        return Err(StatsError::NoResamples);
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    if values.iter().all(|v| *v == values[0]) {
        return Ok((values[0], values[0]));
    }
    let data: Vec<f64> = values.iter().map(|v| v.to_f64().expect("finite")).collect();
    let n = data.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| data[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(|a, b| a.partial_cmp(b).expect("finite means"));
    let alpha = (1.0 - level) / 2.0;
    let cast = |x: f64| F::from(x).expect("representable");
    Ok((
        cast(quantile_sorted(&means, alpha)),
        cast(quantile_sorted(&means, 1.0 - alpha)),
    ))
}
