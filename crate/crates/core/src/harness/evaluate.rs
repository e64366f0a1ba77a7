//! Decision-window evaluation of any decoder.

use std::collections::BTreeMap;

use super::results::ResultRow;
use super::windows::window_starts;
use crate::bundle::{Decision, TrialBundle};
use crate::error::{config, Result};

pub const EVAL_WINDOWS_S: [f64; 6] = [1.0, 2.0, 5.0, 10.0, 25.0, 50.0];

/// Anything that turns windows of a trial into attention decisions.
pub trait Decoder {
    fn name(&self) -> String;

    /// One decision per `(start, len)` window of `trial`, in order.
    fn decide(&self, trial: &TrialBundle, windows: &[(usize, usize)]) -> Result<Vec<Decision>>;
}

impl<D: Decoder + ?Sized> Decoder for &D {
    fn name(&self) -> String {
        (**self).name()
    }

    fn decide(&self, trial: &TrialBundle, windows: &[(usize, usize)]) -> Result<Vec<Decision>> {
        (**self).decide(trial, windows)
    }
}

/// Labels of the rows an evaluation produces.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalContext {
    pub dataset: String,
    pub model: String,
    pub mode: String,
    pub fold: usize,
}

/// Accuracy on non-overlapping windows, one row per (subject, window
/// length). Window lengths that fit no trial of a subject produce no row.
pub fn evaluate(
    decoder: &dyn Decoder,
    trials: &[&TrialBundle],
    window_lengths: &[f64],
    ctx: &EvalContext,
) -> Result<Vec<ResultRow>> {
    if trials.is_empty() {
        return config("evaluation needs at least one test trial");
    }
    let mut by_subject: BTreeMap<&str, Vec<&TrialBundle>> = BTreeMap::new();
    for t in trials {
        by_subject.entry(t.subject_id.as_str()).or_default().push(t);
    }
    let mut rows = Vec::new();
    for (subject, subject_trials) in by_subject {
        for &window_s in window_lengths {
            let (mut correct, mut total) = (0usize, 0usize);
            for trial in &subject_trials {
                let len = (window_s * trial.fs).round() as usize;
                let windows: Vec<(usize, usize)> = window_starts(trial.len(), len, len)
                    .into_iter()
                    .map(|s| (s, len))
                    .collect();
                if windows.is_empty() {
                    continue;
                }
                let decisions = decoder.decide(trial, &windows)?;
                total += decisions.len();
                correct += decisions
                    .iter()
                    .filter(|d| d.choice == trial.attended)
                    .count();
            }
            if total > 0 {
                rows.push(ResultRow {
                    dataset: ctx.dataset.clone(),
                    model: ctx.model.clone(),
                    mode: ctx.mode.clone(),
                    subject: subject.to_string(),
                    fold: ctx.fold,
                    window_s,
                    n_windows: total,
                    accuracy: correct as f64 / total as f64,
                });
            }
        }
    }
    Ok(rows)
}
