//! Operation counting, closed-form predictions and wall-clock scaling runs.

pub mod counter;
mod predict;
mod run;

pub use counter::{measure, uncounted, OpCounter};
pub use predict::{predicted_ops, predicted_peak_bytes, BenchDims, BenchMode, StageCounts};
pub use run::{
    budget_from_env, check_budget, loglog_slope, measured_run, scaling_sweep, RunConfig, RunRecord, RunTiming,
    ScalingReport, Slopes, SweepConfig, TimingReport, BUDGET_ENV, DEFAULT_BUDGET_BYTES, DEFAULT_DIM, DEFAULT_HIDDEN,
    DEFAULT_LENGTHS, DEFAULT_RANK, DEFAULT_REPEATS,
};
