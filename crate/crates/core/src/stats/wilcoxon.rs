use num_traits::Float;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use super::{PairedSample, StatsError};

/// Largest effective sample size that uses the exact null distribution.
pub const EXACT_MAX_N: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestMethod {
    Exact,
    NormalApprox,
    Degenerate,
}

impl TestMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            TestMethod::Exact => "exact",
            TestMethod::NormalApprox => "normal_approx",
            TestMethod::Degenerate => "degenerate",
        }
    }
}

/// Treatment of zero differences.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZeroMethod {
    /// Drop zeros before ranking.
    #[default]
    Wilcoxon,
    /// Rank zeros with the rest, then drop their ranks.
    Pratt,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WilcoxonOptions {
    pub zero_method: ZeroMethod,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult<F> {
    /// Sum of ranks of the positive differences.
    pub statistic: F,
    /// Two-sided.
    pub p_value: F,
    pub n_effective: usize,
    pub method: TestMethod,
    pub zero_method: ZeroMethod,
}

/// Average ranks (1-based) of `values`, ties sharing the mean of their
/// positions. Returned doubled so they stay integral.
pub fn doubled_average_ranks<F: Float>(values: &[F]) -> Vec<u64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("finite values"));
    let mut ranks = vec![0u64; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // positions i+1..=j+1 averaged, doubled
        let doubled = (i + 1 + j + 1) as u64;
        for &ix in &order[i..=j] {
            ranks[ix] = doubled;
        }
        i = j + 1;
    }
    ranks
}

/// Null distribution counts of the doubled positive-rank sum.
fn exact_counts(doubled: &[u64]) -> Vec<u64> {
    let total: u64 = doubled.iter().sum();
    let mut counts = vec![0u64; total as usize + 1];
    counts[0] = 1;
    let mut reach = 0usize;
    for &r in doubled {
        let r = r as usize;
        for t in (0..=reach).rev() {
            if counts[t] > 0 {
                counts[t + r] += counts[t];
            }
        }
        reach += r;
    }
    counts
}

fn exact_p(doubled: &[u64], t_plus: u64) -> f64 {
    let counts = exact_counts(doubled);
    let total = 2f64.powi(doubled.len() as i32);
    let t = t_plus as usize;
    let cdf: u64 = counts[..=t].iter().sum();
    let sf: u64 = counts[t..].iter().sum();
    (2.0 * cdf.min(sf) as f64 / total).min(1.0)
}

fn normal_p(doubled: &[u64], t_plus: u64) -> f64 {
    let ranks: Vec<f64> = doubled.iter().map(|&d| d as f64 / 2.0).collect();
    let mean = ranks.iter().sum::<f64>() / 2.0;
    let var = ranks.iter().map(|r| r * r).sum::<f64>() / 4.0;
    if var == 0.0 {
        return 1.0;
    }
    let w = t_plus as f64 / 2.0;
    let z = ((w - mean).abs() - 0.5).max(0.0) / var.sqrt();
    erfc(z / std::f64::consts::SQRT_2).min(1.0)
}

/// Two-sided Wilcoxon signed-rank test on `after - before`.
pub fn wilcoxon_signed_rank<F: Float>(
    samples: &[PairedSample<F>],
    options: WilcoxonOptions,
) -> Result<WilcoxonResult<F>, StatsError> {
    if samples.is_empty() {
        return Err(StatsError::Empty);
    }
    let diffs: Vec<F> = samples.iter().map(PairedSample::delta).collect();
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let nonzero = diffs.iter().filter(|d| !d.is_zero()).count();
    let cast = |x: f64| F::from(x).expect("representable");
    if nonzero == 0 {
        return Ok(WilcoxonResult {
            statistic: F::zero(),
            p_value: F::one(),
            n_effective: 0,
            method: TestMethod::Degenerate,
            zero_method: options.zero_method,
        });
    }
    let ranked: Vec<F> = match options.zero_method {
        ZeroMethod::Wilcoxon => diffs.iter().copied().filter(|d| !d.is_zero()).collect(),
        ZeroMethod::Pratt => diffs.clone(),
    };
    let doubled_all = doubled_average_ranks(&ranked.iter().map(|d| d.abs()).collect::<Vec<_>>());
    let mut doubled = Vec::with_capacity(nonzero);
    let mut t_plus = 0u64;
    for (d, r) in ranked.iter().zip(&doubled_all) {
        if d.is_zero() {
            continue;
        }
        doubled.push(*r);
        if *d > F::zero() {
            t_plus += r;
        }
    }
    let (p, method) = if nonzero <= EXACT_MAX_N {
        (exact_p(&doubled, t_plus), TestMethod::Exact)
    } else {
        (normal_p(&doubled, t_plus), TestMethod::NormalApprox)
    };
    Ok(WilcoxonResult {
        statistic: cast(t_plus as f64 / 2.0),
        p_value: cast(p),
        n_effective: nonzero,
        method,
        zero_method: options.zero_method,
    })
}

/// Normal approximation regardless of sample size.
pub fn wilcoxon_normal_approx<F: Float>(samples: &[PairedSample<F>]) -> Result<F, StatsError> {
    let diffs: Vec<F> = samples
        .iter()
        .map(PairedSample::delta)
        .filter(|d| !d.is_zero())
        .collect();
    if diffs.is_empty() {
        return Ok(F::one());
    }
    let doubled = doubled_average_ranks(&diffs.iter().map(|d| d.abs()).collect::<Vec<_>>());
    let t_plus: u64 = diffs
        .iter()
        .zip(&doubled)
        .filter(|(d, _)| **d > F::zero())
        .map(|(_, r)| *r)
        .sum();
    Ok(F::from(normal_p(&doubled, t_plus)).expect("representable"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn paired(diffs: &[f64]) -> Vec<PairedSample<f64>> {
        diffs
            .iter()
            .enumerate()
            .map(|(i, d)| PairedSample::new(format!("i{i}"), 0.0, *d))
            .collect()
    }

    #[test]
    fn six_positive_diffs() {
        let r = wilcoxon_signed_rank(&paired(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]), Default::default())
            .unwrap();
        assert!((r.p_value - 0.03125).abs() < 1e-12);
        assert_eq!(r.method, TestMethod::Exact);
        assert_eq!(r.statistic, 21.0);
    }

    #[test]
    fn single_nonzero_and_all_zero() {
        let r = wilcoxon_signed_rank(&paired(&[0.0, 0.4, 0.0]), Default::default()).unwrap();
        assert_eq!(r.p_value, 1.0);
        assert_eq!(r.n_effective, 1);
        let r = wilcoxon_signed_rank(&paired(&[0.0, 0.0]), Default::default()).unwrap();
        assert_eq!(r.p_value, 1.0);
        assert_eq!(r.method, TestMethod::Degenerate);
        assert!(wilcoxon_signed_rank::<f64>(&[], Default::default()).is_err());
    }

    #[test]
    fn tied_ranks_are_averaged() {
        assert_eq!(doubled_average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![7, 2, 7, 4]);
    }

    #[test]
    fn pratt_keeps_zero_ranks() {
        let data = paired(&[0.0, 1.0, 2.0, -3.0]);
        let w = wilcoxon_signed_rank(&data, Default::default()).unwrap();
        let p = wilcoxon_signed_rank(
            &data,
            WilcoxonOptions {
                zero_method: ZeroMethod::Pratt,
            },
        )
        .unwrap();
        assert_eq!(w.statistic, 3.0);
        assert_eq!(p.statistic, 5.0);
        assert_eq!(p.zero_method, ZeroMethod::Pratt);
    }

    #[test]
    fn large_sample_uses_normal_approx() {
        let diffs: Vec<f64> = (1..=30).map(|i| if i % 3 == 0 { -(i as f64) } else { i as f64 }).collect();
        let r = wilcoxon_signed_rank(&paired(&diffs), Default::default()).unwrap();
        assert_eq!(r.method, TestMethod::NormalApprox);
        assert!(r.p_value > 0.0 && r.p_value <= 1.0);
    }
}
