//! Error metrics, link-level cross-validation and data-driven baselines.

pub mod baselines;
pub mod folds;
pub mod metrics;
pub mod sweep;

pub use baselines::{historical_mean_rows, least_squares, linear_regression_rows, HistoricalMean, LinearRegression};
pub use folds::{kfold, median_mape, write_metrics_csv, FoldPlan, FoldResult, KFoldReport, MetricsRow, Scope};
pub use metrics::{median, metrics, metrics_pairs, Metrics};
pub use sweep::{lambda_sweep, write_sweep_csv, LossSummary, SweepPoint, DEFAULT_LAMBDA_GRID};

#[cfg(test)]
mod tests;
