//! Error metrics, success curves and the experiment protocols built on them.

pub mod metrics;
pub mod protocols;
pub mod report;
pub mod trial;

pub use metrics::{error_set, loss_at, mean, median, pose_errors, success_rate_curve, ErrorSet, SuccessCurve};
pub use protocols::{
    ablation_row, compare_loss_options, compare_prior_vs_direct, is_degenerate, lambda_sweep, run_grid, views_ablation, AblationRow,
    Paired,
};
pub use trial::{run_trial, Method, TrialOutput, TrialResult, TrialSpec};
