//! Ranking and threshold metrics, resampling statistics and the
//! field/disease correlation table.

mod correlation;
mod ranking;
mod report;
mod resample;

pub use correlation::{correlation, correlation_report, Correlation, CorrelationEntry, CorrelationReport};
pub use ranking::{average_precision, mean_average_precision};
pub use report::{read_scores, summarize, write_scores, ClassMetrics, MetricsReport, ScoredSet, DEFAULT_THRESHOLD};
pub use resample::{
    bootstrap_ci, metric_permutation_test, permutation_test, ConfidenceInterval, PermutationMethod, PermutationResult,
    DEFAULT_PERMUTATION_DRAWS, EXACT_PERMUTATION_LIMIT,
};
