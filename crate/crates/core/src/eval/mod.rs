//! Per-word surprisal, learning-curve fits, ages of acquisition and reports.

pub mod aoa;
pub mod curve;
pub mod plot;
pub mod report;
pub mod surprisal;

pub use aoa::{aoa_report, effective_vocab, naoa_at, naoa_range_avg, plateau_vs_unigram, thresholds, AoAReport, PlateauRegression};
pub use curve::{fit_double_sigmoid, LearningCurve, SigmoidFit, MIN_CURVE_POINTS};
pub use plot::{Plot, Series};
pub use report::{
    analyze_records, evaluate_run, evaluate_suite, plot_suite, summarize_groups, write_run_evaluation, GroupSummary, RunEvaluation,
    SuiteEvaluation, EVAL_DIR,
};
pub use surprisal::{eval_checkpoint, evaluate_checkpoints, read_surprisal_csv, write_surprisal_csv, EvalConfig, EvalPlan, WordSurprisalRecord};
