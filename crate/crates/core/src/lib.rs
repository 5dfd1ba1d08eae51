//! Gap-driven iterative enhancement of LLM responses.
//!
//! The engine drives a chat-completion backend through an initial answer
//! followed by rounds of gap analysis, consolidation and revision. The rest
//! of the crate evaluates the resulting trajectories: rationale grounding for
//! claim verification, sentence selection and thematic drift for privacy
//! question answering, NLI-based reasoning attribution, and the paired
//! statistics used to compare pipeline stages.
//!
//! Metric and statistics code is generic over the scalar type. The aliases at
//! the crate root pin the common instantiations.

pub mod attribution;
pub mod backend;
pub mod corpus;
pub mod engine;
pub mod gaps;
pub mod metrics;
pub mod prompting;
pub mod response;
pub mod scalar;
pub mod stats;
pub mod task;

pub use scalar::Scalar;
pub use task::TaskKind;

/// Exact rational scalar used where metric values must compare exactly.
pub type Rational = num_rational::Ratio<i64>;

pub type InstanceMetricsF64 = metrics::InstanceMetrics<f64>;
pub type InstanceMetricsF32 = metrics::InstanceMetrics<f32>;
pub type ExactInstanceMetrics = metrics::InstanceMetrics<Rational>;
pub type MetricReportF64 = metrics::MetricReport<f64>;
pub type ExactMetricReport = metrics::MetricReport<Rational>;

pub type PairedSampleF64 = stats::PairedSample<f64>;
pub type PairedSampleF32 = stats::PairedSample<f32>;
pub type TestResultF64 = stats::TestResult<f64>;
pub type WilcoxonResultF64 = stats::WilcoxonResult<f64>;
