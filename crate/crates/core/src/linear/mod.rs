//! Linear baselines: ridge stimulus reconstruction and CCA with an LDA
//! read-out, plus lag-matrix construction and inner-fold selection.

mod cca;
mod lag;
mod lda;
mod ridge;

pub use cca::{
    cca_classify, cca_fit, inv_sqrt, select_j, window_features, CcaDecoder, CcaModel,
    CrossMoments, CCA_EEG_LAGS, CCA_STIM_LAGS, EIGEN_FLOOR,
};
pub use lag::{build_lag_matrix, lag_signal, LagDirection, LagSpec, PadSide};
pub use lda::{LdaClassifier, LDA_RIDGE};
pub use ridge::{
    lambda_grid, ridge_classify, ridge_fit, select_lambda, NormalEquations, RidgeDecoder,
    RIDGE_LAGS,
};

use crate::bundle::TrialBundle;
use crate::harness::window_starts;

pub const INNER_FOLDS: usize = 5;
/// Decision-window length used to score hyperparameters.
pub const SELECTION_WINDOW_S: f64 = 5.0;

/// Trial `i` goes to inner fold `i mod k`.
pub fn inner_folds(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut folds = vec![Vec::new(); k];
    for i in 0..n {
        folds[i % k].push(i);
    }
    folds
}

/// Non-overlapping selection windows as (start, len).
pub(crate) fn selection_windows(trial: &TrialBundle) -> Vec<(usize, usize)> {
    let len = (SELECTION_WINDOW_S * trial.fs).round() as usize;
    window_starts(trial.len(), len, len)
        .into_iter()
        .map(|s| (s, len))
        .collect()
}
