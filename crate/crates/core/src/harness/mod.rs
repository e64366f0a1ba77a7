//! Folds, windowing, training loops, evaluation and result tables.

mod evaluate;
mod experiment;
mod folds;
mod results;
mod train;
mod windows;

pub use evaluate::{evaluate, Decoder, EvalContext, EVAL_WINDOWS_S};
pub use experiment::{fit_cca, fit_ridge, Experiment, FoldOutcome, ModelKind};
pub use folds::{check_leakage, make_folds, split_near_equal, Fold, FoldMode, FoldPlan, OUTER_FOLDS};
pub use results::{ResultRow, ResultsTable, SummaryEntry};
pub use train::{finetune_ss, mean_loss, train_si, EpochLog, TrainConfig, TrainReport};
pub use windows::{
    augment_swap, window_count, window_geometry, window_starts, window_stream, Window,
};
