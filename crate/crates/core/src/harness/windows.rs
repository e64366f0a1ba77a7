//! Decision windows over trials, by reference rather than by copy.

use std::borrow::Borrow;

use crate::bundle::{Candidate, TrialBundle};

/// Number of windows of `len` samples at `stride` in a `t`-sample trial.
pub fn window_count(t: usize, len: usize, stride: usize) -> usize {
    if t < len || len == 0 {
        0
    } else {
        (t - len) / stride + 1
    }
}

pub fn window_starts(t: usize, len: usize, stride: usize) -> Vec<usize> {
    (0..window_count(t, len, stride)).map(|i| i * stride).collect()
}

/// Window and stride in samples for a duration and fractional overlap.
pub fn window_geometry(window_s: f64, overlap: f64, fs: f64) -> (usize, usize) {
    let len = (window_s * fs).round() as usize;
    let stride = ((window_s * (1.0 - overlap) * fs).round() as usize).max(1);
    (len, stride)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub trial: usize,
    pub start: usize,
    pub len: usize,
    /// Candidate envelopes presented in swapped order.
    pub swapped: bool,
}

impl Window {
    pub fn label<T: Borrow<TrialBundle>>(&self, trials: &[T]) -> Candidate {
        let a = trials[self.trial].borrow().attended;
        if self.swapped {
            a.flip()
        } else {
            a
        }
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.len
    }

    /// (envA, envB) as presented to a model.
    pub fn envelopes<'a, T: Borrow<TrialBundle>>(&self, trials: &'a [T]) -> (&'a [f64], &'a [f64]) {
        let t = trials[self.trial].borrow();
        let (a, b) = (&t.env_a[self.range()], &t.env_b[self.range()]);
        if self.swapped {
            (b, a)
        } else {
            (a, b)
        }
    }
}

/// All windows of every trial; trials shorter than the window are skipped.
pub fn window_stream<T: Borrow<TrialBundle>>(trials: &[T], window_s: f64, overlap: f64) -> Vec<Window> {
    let mut out = Vec::new();
    for (i, trial) in trials.iter().enumerate() {
        let trial = trial.borrow();
        let (len, stride) = window_geometry(window_s, overlap, trial.fs);
        if trial.len() < len {
            log::warn!(
                "trial {} ({:.1} s) shorter than {window_s} s window; skipped",
                trial.trial_id,
                trial.duration_s()
            );
            continue;
        }
        out.extend(window_starts(trial.len(), len, stride).into_iter().map(|start| Window {
            trial: i,
            start,
            len,
            swapped: false,
        }));
    }
    out
}

/// Each window followed by its candidate-swapped mirror.
pub fn augment_swap(windows: &[Window]) -> Vec<Window> {
    windows
        .iter()
        .flat_map(|w| {
            [
                *w,
                Window {
                    swapped: !w.swapped,
                    ..*w
                },
            ]
        })
        .collect()
}
