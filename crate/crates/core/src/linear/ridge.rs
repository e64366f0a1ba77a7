//! Backward (stimulus-reconstruction) model with L2 regularization.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::lag::{build_lag_matrix, LagSpec};
use super::{inner_folds, selection_windows, INNER_FOLDS};
use crate::bundle::{Decision, TrialBundle};
use crate::error::{config, AadError, Result};
use crate::harness::Decoder;
use crate::stats::corr;

/// 0–400 ms of post-stimulus delay at 64 Hz.
pub const RIDGE_LAGS: usize = 26;

/// One point per decade from 1e−7 to 1e7.
pub fn lambda_grid() -> Vec<f64> {
    (-7..=7).map(|e| 10f64.powi(e)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeDecoder {
    pub d: Vec<f64>,
    pub lambda: f64,
    pub lag: LagSpec,
    pub n_channels: usize,
}

/// Accumulated XᵀX and Xᵀs over any number of trials.
#[derive(Debug, Clone)]
pub struct NormalEquations {
    pub xtx: DMatrix<f64>,
    pub xts: DVector<f64>,
}

impl NormalEquations {
    pub fn zeros(dim: usize) -> Self {
        NormalEquations {
            xtx: DMatrix::zeros(dim, dim),
            xts: DVector::zeros(dim),
        }
    }

    pub fn add(&mut self, x_lag: &DMatrix<f64>, s: &[f64]) {
        let xt = x_lag.transpose();
        self.xtx.gemm(1.0, &xt, x_lag, 1.0);
        self.xts.gemv(1.0, &xt, &DVector::from_column_slice(s), 1.0);
    }

    pub fn add_assign(&mut self, other: &NormalEquations) {
        self.xtx += &other.xtx;
        self.xts += &other.xts;
    }

    /// Solve (XᵀX + λI)d = Xᵀs by Cholesky.
    pub fn solve(&self, lambda: f64) -> Result<DVector<f64>> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return config(format!("ridge lambda must be positive, got {lambda}"));
        }
        let n = self.xtx.nrows();
        let a = &self.xtx + DMatrix::identity(n, n) * lambda;
        let chol = a.cholesky().ok_or_else(|| {
            AadError::Numeric(format!("XᵀX + {lambda}·I is not positive definite"))
        })?;
        Ok(chol.solve(&self.xts))
    }
}

fn check_finite(x: &DMatrix<f64>, s: &[f64]) -> Result<()> {
    if x.iter().chain(s).any(|v| !v.is_finite()) {
        return Err(AadError::Data("non-finite value in ridge inputs".into()));
    }
    Ok(())
}

/// Fit on one lag matrix. `lag` records how `x_lag` was built.
pub fn ridge_fit(x_lag: &DMatrix<f64>, s: &[f64], lambda: f64, lag: LagSpec) -> Result<RidgeDecoder> {
    if x_lag.nrows() != s.len() {
        return Err(AadError::Contract(format!(
            "lag matrix has {} rows, target {}",
            x_lag.nrows(),
            s.len()
        )));
    }
    check_finite(x_lag, s)?;
    let mut ne = NormalEquations::zeros(x_lag.ncols());
    ne.add(x_lag, s);
    let d = ne.solve(lambda)?;
    Ok(RidgeDecoder {
        d: d.as_slice().to_vec(),
        lambda,
        lag,
        n_channels: x_lag.ncols() / lag.n_lags,
    })
}

impl RidgeDecoder {
    /// Fit to the attended envelopes of `trials`, lagging each trial whole.
    pub fn train(trials: &[&TrialBundle], lag: LagSpec, lambda: f64) -> Result<Self> {
        let c = first_channels(trials)?;
        let mut ne = NormalEquations::zeros(lag.n_lags * c);
        for t in trials {
            let x = build_lag_matrix(&t.eeg, lag)?;
            check_finite(&x, t.attended_env())?;
            ne.add(&x, t.attended_env());
        }
        Ok(RidgeDecoder {
            d: ne.solve(lambda)?.as_slice().to_vec(),
            lambda,
            lag,
            n_channels: c,
        })
    }

    /// ŝ = X_lag·d
    pub fn reconstruct(&self, x_lag: &DMatrix<f64>) -> Vec<f64> {
        (x_lag * DVector::from_column_slice(&self.d)).as_slice().to_vec()
    }

    /// Correlation margin ρ(ŝ, A) − ρ(ŝ, B) over one reconstructed window.
    /// An undefined correlation counts as zero.
    fn margin(s_hat: &[f64], env_a: &[f64], env_b: &[f64]) -> f64 {
        if corr(s_hat, s_hat).is_none() {
            return 0.0;
        }
        corr(s_hat, env_a).unwrap_or(0.0) - corr(s_hat, env_b).unwrap_or(0.0)
    }
}

fn first_channels(trials: &[&TrialBundle]) -> Result<usize> {
    let c = trials
        .first()
        .ok_or_else(|| AadError::Config("no training trials".into()))?
        .n_channels();
    if trials.iter().any(|t| t.n_channels() != c) {
        return config("training trials disagree on channel count");
    }
    Ok(c)
}

/// Classify one window, lagging inside the window only. A constant
/// reconstruction or exactly equal correlations resolve to A with the tie
/// flag set.
pub fn ridge_classify(
    dec: &RidgeDecoder,
    eeg: &DMatrix<f64>,
    env_a: &[f64],
    env_b: &[f64],
) -> Result<Decision> {
    if eeg.ncols() != dec.n_channels || env_a.len() != eeg.nrows() || env_b.len() != eeg.nrows() {
        return Err(AadError::Contract("window shapes do not match the decoder".into()));
    }
    let s_hat = dec.reconstruct(&build_lag_matrix(eeg, dec.lag)?);
    Ok(Decision::from_score(RidgeDecoder::margin(&s_hat, env_a, env_b)))
}

impl Decoder for RidgeDecoder {
    fn name(&self) -> String {
        "ridge".into()
    }

    /// Lags span the whole trial, so samples just past a window's end feed
    /// its last reconstructed points.
    fn decide(&self, trial: &TrialBundle, windows: &[(usize, usize)]) -> Result<Vec<Decision>> {
        let s_hat = self.reconstruct(&build_lag_matrix(&trial.eeg, self.lag)?);
        Ok(windows
            .iter()
            .map(|&(start, len)| {
                let r = start..start + len;
                Decision::from_score(RidgeDecoder::margin(
                    &s_hat[r.clone()],
                    &trial.env_a[r.clone()],
                    &trial.env_b[r],
                ))
            })
            .collect())
    }
}

/// Inner-fold choice of λ by decision accuracy on 5 s windows. Each fold's
/// Gram matrix is diagonalized once so every grid point costs a matvec.
pub fn select_lambda(trials: &[&TrialBundle], lag: LagSpec, grid: &[f64]) -> Result<f64> {
    if trials.len() < INNER_FOLDS {
        return config(format!(
            "λ selection needs at least {INNER_FOLDS} trials, got {}",
            trials.len()
        ));
    }
    if grid.is_empty() || grid.iter().any(|l| !(*l > 0.0)) {
        return config("λ grid must be non-empty and positive");
    }
    let mut grid = grid.to_vec();
    grid.sort_by(f64::total_cmp);
    let c = first_channels(trials)?;
    let dim = lag.n_lags * c;
    let folds = inner_folds(trials.len(), INNER_FOLDS);
    let mut per_fold: Vec<NormalEquations> = Vec::with_capacity(folds.len());
    for fold in &folds {
        let mut ne = NormalEquations::zeros(dim);
        for &i in fold {
            ne.add(&build_lag_matrix(&trials[i].eeg, lag)?, trials[i].attended_env());
        }
        per_fold.push(ne);
    }
    let mut correct = vec![0usize; grid.len()];
    let mut total = 0usize;
    for (k, fold) in folds.iter().enumerate() {
        let mut train = NormalEquations::zeros(dim);
        for (j, ne) in per_fold.iter().enumerate() {
            if j != k {
                train.add_assign(ne);
            }
        }
        let eig = SymmetricEigen::new(train.xtx);
        let qtb = eig.eigenvectors.transpose() * &train.xts;
        for &i in fold {
            let trial = trials[i];
            let proj = build_lag_matrix(&trial.eeg, lag)? * &eig.eigenvectors;
            let windows = selection_windows(trial);
            total += windows.len();
            for (g, &lambda) in grid.iter().enumerate() {
                let coef = DVector::from_iterator(
                    dim,
                    qtb.iter()
                        .zip(eig.eigenvalues.iter())
                        .map(|(b, e)| b / (e.max(0.0) + lambda)),
                );
                let s_hat = &proj * coef;
                for &(start, len) in &windows {
                    let r = start..start + len;
                    let m = RidgeDecoder::margin(
                        &s_hat.as_slice()[r.clone()],
                        &trial.env_a[r.clone()],
                        &trial.env_b[r],
                    );
                    if Decision::from_score(m).choice == trial.attended {
                        correct[g] += 1;
                    }
                }
            }
        }
    }
    if total == 0 {
        return config("no inner-fold window fits inside the training trials");
    }
    let mut best = 0;
    for g in 1..grid.len() {
        if correct[g] > correct[best] {
            best = g;
        }
    }
    log::debug!("λ accuracies {:?} of {total}; chose {}", correct, grid[best]);
    Ok(grid[best])
}
