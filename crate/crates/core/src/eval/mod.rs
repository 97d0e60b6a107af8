//! Correlation and classification metrics, degradation/speedup and
//! aggregation over runs.

mod metrics;
mod report;

pub use metrics::{f1, logit_to_binary, pearson, regression_to_binary, ConfusionCounts, F1Score};
pub use report::{
    aggregate_runs, degradation_and_speedup, degradation_pct, evaluate_model, evaluate_predictions, f1_name,
    read_sweep_csv, sample_dump, speedup, write_sweep_csv, EvalReport, MetricTable, SampleRecord, Summary,
    SweepPoint,
};
pub(crate) use report::csv_err;
