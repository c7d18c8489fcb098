//! Scoring and experiment harnesses.

mod ablation;
mod experiment;
mod ndcf;

pub use ablation::{ablate, AblationRow, AblationSpec};
pub use experiment::{
    fit, regressor_vs_classifier, report_csv, run_experiment, score_row, set_name, to_csv, Experiment,
    Fitted, ModeComparison, ModelChoice, ReportRow, RunTag, REPORT_COLUMNS,
};
pub use ndcf::{accuracy, binarize, confusion, ndcf, ndcf_from_confusion, ContactRule};
