//! Paired significance tests and bootstrap intervals.

mod bootstrap;
mod wilcoxon;

pub use bootstrap::{bootstrap_mean_ci, quantile_sorted, DEFAULT_LEVEL, DEFAULT_RESAMPLES};
pub use wilcoxon::{
    doubled_average_ranks, wilcoxon_normal_approx, wilcoxon_signed_rank, TestMethod,
    WilcoxonOptions, WilcoxonResult, ZeroMethod, EXACT_MAX_N,
};

use num_traits::Float;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Significance level used for verdicts.
pub const ALPHA: f64 = 0.05;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum StatsError {
    #[error("no samples")]
    Empty,
    #[error("non-finite sample value")]
    NonFinite,
    #[error("confidence level {0} is not in (0, 1)")]
    InvalidLevel(f64),
    #[error("resample count must be positive")]
    NoResamples,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedSample<F> {
    pub instance_id: String,
    pub before: F,
    pub after: F,
}

impl<F: Float> PairedSample<F> {
    pub fn new(instance_id: impl Into<String>, before: F, after: F) -> Self {
        PairedSample {
            instance_id: instance_id.into(),
            before,
            after,
        }
    }

    pub fn delta(&self) -> F {
        self.after - self.before
    }
}

/// `100 * (after - before) / before`; `None` for a zero baseline.
pub fn relative_change<F: Float>(before_mean: F, after_mean: F) -> Option<F> {
    if before_mean.is_zero() {
        return None;
    }
    let hundred = F::from(100.0).expect("representable");
    Some(hundred * (after_mean - before_mean) / before_mean)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestOptions {
    pub resamples: usize,
    pub level: f64,
    pub seed: u64,
    pub wilcoxon: WilcoxonOptions,
}

impl Default for TestOptions {
    fn default() -> Self {
        TestOptions {
            resamples: DEFAULT_RESAMPLES,
            level: DEFAULT_LEVEL,
            seed: 0,
            wilcoxon: WilcoxonOptions::default(),
        }
    }
}

/// One row of a significance table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult<F> {
    pub metric: String,
    pub n: usize,
    pub n_effective: usize,
    pub p_value: F,
    pub mean_before: F,
    pub mean_after: F,
    pub mean_delta: F,
    pub ci_low: F,
    pub ci_high: F,
    pub relative_change: Option<F>,
    pub method: TestMethod,
    pub zero_method: ZeroMethod,
    pub level: f64,
    pub resamples: usize,
    pub seed: u64,
}

impl<F: Float> TestResult<F> {
    pub fn significant(&self) -> bool {
        self.p_value.to_f64().expect("finite") < ALPHA
    }

    pub fn verdict(&self) -> &'static str {
        if !self.significant() {
            "not significant"
        } else if self.mean_delta > F::zero() {
            "▲ significant increase"
        } else {
            "▼ significant decrease"
        }
    }
}

/// Wilcoxon test plus percentile bootstrap interval of the mean difference.
pub fn paired_test<F: Float>(
    metric: &str,
    samples: &[PairedSample<F>],
    options: &TestOptions,
) -> Result<TestResult<F>, StatsError> {
    let w = wilcoxon_signed_rank(samples, options.wilcoxon)?;
    let n = F::from(samples.len()).expect("representable");
    let diffs: Vec<F> = samples.iter().map(PairedSample::delta).collect();
    let sum = |it: &mut dyn Iterator<Item = F>| it.fold(F::zero(), |a, b| a + b);
    let mean_before = sum(&mut samples.iter().map(|s| s.before)) / n;
    let mean_after = sum(&mut samples.iter().map(|s| s.after)) / n;
    let mean_delta = sum(&mut diffs.iter().copied()) / n;
    let (ci_low, ci_high) =
        bootstrap_mean_ci(&diffs, options.resamples, options.level, options.seed)?;
    Ok(TestResult {
        metric: metric.to_string(),
        n: samples.len(),
        n_effective: w.n_effective,
        p_value: w.p_value,
        mean_before,
        mean_after,
        mean_delta,
        ci_low,
        ci_high,
        relative_change: relative_change(mean_before, mean_after),
        method: w.method,
        zero_method: w.zero_method,
        level: options.level,
        resamples: options.resamples,
        seed: options.seed,
    })
}

fn signed<F: Float>(v: F, decimals: usize) -> String {
    let x = v.to_f64().expect("finite");
    // avoid "-0.00"
    let x = if x.abs() < 0.5 * 10f64.powi(-(decimals as i32)) { 0.0 } else { x };
    format!("{x:+.decimals$}")
}

fn ci_cell<F: Float>(r: &TestResult<F>) -> String {
    format!("[{}, {}]", signed(r.ci_low, 2), signed(r.ci_high, 2))
}

fn p_cell<F: Float>(r: &TestResult<F>) -> String {
    format!("{:.5}", r.p_value.to_f64().expect("finite"))
}

const TABLE_HEADER: [&str; 7] = ["metric", "p", "mean Δ", "CI", "n_effective", "method", "verdict"];

fn row<F: Float>(r: &TestResult<F>) -> [String; 7] {
    [
        r.metric.clone(),
        p_cell(r),
        signed(r.mean_delta, 2),
        ci_cell(r),
        r.n_effective.to_string(),
        r.method.as_str().to_string(),
        r.verdict().to_string(),
    ]
}

pub fn significance_csv<F: Float>(results: &[TestResult<F>]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(TABLE_HEADER).expect("in-memory write");
    for r in results {
        w.write_record(row(r)).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}

/// Markdown table. Tests are two-sided; the footer names the procedure.
pub fn significance_markdown<F: Float>(results: &[TestResult<F>]) -> String {
    let mut out = format!("| {} |\n|{}\n", TABLE_HEADER.join(" | "), "---|".repeat(7));
    for r in results {
        out.push_str(&format!("| {} |\n", row(r).join(" | ")));
    }
    if let Some(first) = results.first() {
        out.push_str(&format!(
            "\nTwo-sided Wilcoxon signed-rank test (zero differences: {}); percentile bootstrap {}% CI of the mean difference, {} resamples, seed {}. Verdict at p < {ALPHA}.\n",
            match first.zero_method {
                ZeroMethod::Wilcoxon => "dropped",
                ZeroMethod::Pratt => "Pratt",
            },
            first.level * 100.0,
            first.resamples,
            first.seed
        ));
    }
    out
}
