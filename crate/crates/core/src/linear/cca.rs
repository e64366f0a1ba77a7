//! Canonical correlation between lagged EEG and lagged stimulus, with an
//! LDA read-out over per-component correlation differences.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::lag::{build_lag_matrix, lag_signal, LagSpec};
use super::lda::LdaClassifier;
use super::{inner_folds, selection_windows, INNER_FOLDS};
use crate::bundle::{Candidate, Decision, TrialBundle};
use crate::error::{config, AadError, Result};
use crate::harness::Decoder;
use crate::stats::corr;

pub const CCA_EEG_LAGS: usize = 16;
pub const CCA_STIM_LAGS: usize = 80;
/// Eigenvalues below this fraction of the largest are floored before the
/// inverse square root.
pub const EIGEN_FLOOR: f64 = 1e-8;

/// Running first and second moments of stacked [x | s] rows.
#[derive(Debug, Clone)]
pub struct CrossMoments {
    pub n: usize,
    dx: usize,
    sum: DVector<f64>,
    outer: DMatrix<f64>,
}

impl CrossMoments {
    pub fn zeros(dx: usize, ds: usize) -> Self {
        CrossMoments {
            n: 0,
            dx,
            sum: DVector::zeros(dx + ds),
            outer: DMatrix::zeros(dx + ds, dx + ds),
        }
    }

    pub fn zeros_like(&self) -> Self {
        CrossMoments::zeros(self.dx, self.sum.len() - self.dx)
    }

    pub fn add(&mut self, x_lag: &DMatrix<f64>, s_lag: &DMatrix<f64>) {
        let z = stack(x_lag, s_lag);
        let zt = z.transpose();
        self.outer.gemm(1.0, &zt, &z, 1.0);
        for (acc, col) in self.sum.iter_mut().zip(z.column_iter()) {
            *acc += col.sum();
        }
        self.n += z.nrows();
    }

    pub fn add_assign(&mut self, other: &CrossMoments) {
        self.n += other.n;
        self.sum += &other.sum;
        self.outer += &other.outer;
    }

    /// Mean-removed covariances with 1/n normalization: (Cxx, Css, Cxs).
    pub fn covariances(&self) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        let n = self.n as f64;
        let mean = &self.sum / n;
        let cov = &self.outer / n - &mean * mean.transpose();
        let (dx, ds) = (self.dx, self.sum.len() - self.dx);
        (
            cov.view((0, 0), (dx, dx)).into_owned(),
            cov.view((dx, dx), (ds, ds)).into_owned(),
            cov.view((0, dx), (dx, ds)).into_owned(),
        )
    }
}

fn stack(x: &DMatrix<f64>, s: &DMatrix<f64>) -> DMatrix<f64> {
    let mut z = DMatrix::zeros(x.nrows(), x.ncols() + s.ncols());
    z.view_mut((0, 0), x.shape()).copy_from(x);
    z.view_mut((0, x.ncols()), s.shape()).copy_from(s);
    z
}

/// C^{−1/2} via symmetric eigendecomposition with a relative floor.
pub fn inv_sqrt(c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(c.clone());
    let max = eig.eigenvalues.max();
    if !(max > 0.0 && max.is_finite()) {
        return Err(AadError::Numeric(format!(
            "covariance has no positive eigenvalue (largest {max:e}, dim {})",
            c.nrows()
        )));
    }
    let floor = EIGEN_FLOOR * max;
    let floored = eig.eigenvalues.iter().filter(|&&e| e < floor).count();
    if floored > 0 {
        log::debug!("{floored} of {} eigenvalues floored at {floor:e}", c.nrows());
    }
    let scale = eig.eigenvalues.map(|e| 1.0 / e.max(floor).sqrt());
    let q = &eig.eigenvectors;
    Ok(q * DMatrix::from_diagonal(&scale) * q.transpose())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CcaModel {
    /// (L_x·C)×J
    pub wx: DMatrix<f64>,
    /// L_s×J
    pub ws: DMatrix<f64>,
    /// Canonical correlations, non-increasing.
    pub correlations: Vec<f64>,
    pub x_lag: LagSpec,
    pub s_lag: LagSpec,
    pub n_channels: usize,
    pub cxx: DMatrix<f64>,
    pub css: DMatrix<f64>,
    pub cxs: DMatrix<f64>,
}

impl CcaModel {
    pub fn n_components(&self) -> usize {
        self.wx.ncols()
    }

    pub fn from_moments(m: &CrossMoments, j: usize, x_lag: LagSpec, s_lag: LagSpec) -> Result<Self> {
        let (cxx, css, cxs) = m.covariances();
        let (dx, ds) = (cxx.nrows(), css.nrows());
        if j == 0 || j > dx.min(ds) {
            return config(format!("component count {j} outside 1..={}", dx.min(ds)));
        }
        if m.n <= dx.max(ds) {
            return Err(AadError::Contract(format!(
                "{} samples cannot support {dx}×{ds} covariances",
                m.n
            )));
        }
        let kx = inv_sqrt(&cxx)?;
        let ks = inv_sqrt(&css)?;
        let mm = &kx * &cxs * &ks;
        let svd = mm.svd(true, true);
        let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
        let order = &order[..j];
        let u_j = DMatrix::from_fn(dx, j, |r, c| u[(r, order[c])]);
        let v_j = DMatrix::from_fn(ds, j, |r, c| vt[(order[c], r)]);
        Ok(CcaModel {
            wx: &kx * u_j,
            ws: &ks * v_j,
            correlations: order.iter().map(|&i| svd.singular_values[i]).collect(),
            x_lag,
            s_lag,
            n_channels: dx / x_lag.n_lags,
            cxx,
            css,
            cxs,
        })
    }

    /// Fit on the attended envelopes of `trials`.
    pub fn train(trials: &[&TrialBundle], j: usize, x_lag: LagSpec, s_lag: LagSpec) -> Result<Self> {
        Self::from_moments(&trial_moments(trials, x_lag, s_lag)?, j, x_lag, s_lag)
    }

    /// Keep only the leading `j` components.
    pub fn truncate(&self, j: usize) -> Self {
        let mut m = self.clone();
        m.wx = self.wx.columns(0, j).into_owned();
        m.ws = self.ws.columns(0, j).into_owned();
        m.correlations.truncate(j);
        m
    }

    /// Projected EEG and both projected candidates, each T×J.
    fn project(
        &self,
        eeg: &DMatrix<f64>,
        env_a: &[f64],
        env_b: &[f64],
    ) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
        if eeg.ncols() != self.n_channels {
            return Err(AadError::Contract(format!(
                "model expects {} channels, window has {}",
                self.n_channels,
                eeg.ncols()
            )));
        }
        Ok((
            build_lag_matrix(eeg, self.x_lag)? * &self.wx,
            lag_signal(env_a, self.s_lag)? * &self.ws,
            lag_signal(env_b, self.s_lag)? * &self.ws,
        ))
    }
}

pub fn cca_fit(
    x_lag_mat: &DMatrix<f64>,
    s_lag_mat: &DMatrix<f64>,
    j: usize,
    x_lag: LagSpec,
    s_lag: LagSpec,
) -> Result<CcaModel> {
    if x_lag_mat.nrows() != s_lag_mat.nrows() {
        return Err(AadError::Contract("EEG and stimulus lag matrices differ in length".into()));
    }
    let mut m = CrossMoments::zeros(x_lag_mat.ncols(), s_lag_mat.ncols());
    m.add(x_lag_mat, s_lag_mat);
    CcaModel::from_moments(&m, j, x_lag, s_lag)
}

fn trial_moments(trials: &[&TrialBundle], x_lag: LagSpec, s_lag: LagSpec) -> Result<CrossMoments> {
    let c = trials
        .first()
        .ok_or_else(|| AadError::Config("no training trials".into()))?
        .n_channels();
    let mut m = CrossMoments::zeros(x_lag.n_lags * c, s_lag.n_lags);
    for t in trials {
        m.add(&build_lag_matrix(&t.eeg, x_lag)?, &lag_signal(t.attended_env(), s_lag)?);
    }
    Ok(m)
}

/// Per-component ρ(x_j, a_j) − ρ(x_j, b_j) over rows `r`. Swapping the
/// candidates negates it exactly.
fn feature(
    xp: &DMatrix<f64>,
    ap: &DMatrix<f64>,
    bp: &DMatrix<f64>,
    r: std::ops::Range<usize>,
    j: usize,
) -> Vec<f64> {
    (0..j)
        .map(|c| {
            let (xc, ac, bc) = (xp.column(c), ap.column(c), bp.column(c));
            let x = &xc.as_slice()[r.clone()];
            let a = &ac.as_slice()[r.clone()];
            let b = &bc.as_slice()[r.clone()];
            corr(x, a).unwrap_or(0.0) - corr(x, b).unwrap_or(0.0)
        })
        .collect()
}

/// Correlation-difference features for every window of one trial.
pub fn window_features(
    model: &CcaModel,
    trial: &TrialBundle,
    windows: &[(usize, usize)],
) -> Result<Vec<Vec<f64>>> {
    let (xp, ap, bp) = model.project(&trial.eeg, &trial.env_a, &trial.env_b)?;
    Ok(windows
        .iter()
        .map(|&(s, l)| feature(&xp, &ap, &bp, s..s + l, model.n_components()))
        .collect())
}

/// Classify one window with lags confined to it.
pub fn cca_classify(
    model: &CcaModel,
    lda: &LdaClassifier,
    eeg: &DMatrix<f64>,
    env_a: &[f64],
    env_b: &[f64],
) -> Result<Decision> {
    let (xp, ap, bp) = model.project(eeg, env_a, env_b)?;
    let f = feature(&xp, &ap, &bp, 0..eeg.nrows(), model.n_components());
    lda.decide(&f)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CcaDecoder {
    pub model: CcaModel,
    pub lda: LdaClassifier,
}

impl CcaDecoder {
    /// Fit CCA, then LDA on swap-augmented 5 s window features of the same
    /// training trials.
    pub fn train(trials: &[&TrialBundle], j: usize, x_lag: LagSpec, s_lag: LagSpec) -> Result<Self> {
        let model = CcaModel::train(trials, j, x_lag, s_lag)?;
        let lda = fit_lda(&model, trials)?;
        Ok(CcaDecoder { model, lda })
    }

    /// Inner-fold J selection followed by a fit on all `trials`.
    pub fn train_selected(trials: &[&TrialBundle], x_lag: LagSpec, s_lag: LagSpec) -> Result<Self> {
        let j = select_j(trials, x_lag, s_lag)?;
        Self::train(trials, j, x_lag, s_lag)
    }
}

fn labelled_features(model: &CcaModel, trials: &[&TrialBundle]) -> Result<(Vec<Vec<f64>>, Vec<Candidate>)> {
    let (mut feats, mut labels) = (Vec::new(), Vec::new());
    for t in trials {
        let w = selection_windows(t);
        for f in window_features(model, t, &w)? {
            feats.push(f);
            labels.push(t.attended);
        }
    }
    Ok((feats, labels))
}

fn fit_lda(model: &CcaModel, trials: &[&TrialBundle]) -> Result<LdaClassifier> {
    let (feats, labels) = labelled_features(model, trials)?;
    LdaClassifier::fit_antisymmetric(&feats, &labels)
}

impl Decoder for CcaDecoder {
    fn name(&self) -> String {
        "cca".into()
    }

    /// Lag matrices span the whole trial; windows slice the projections.
    fn decide(&self, trial: &TrialBundle, windows: &[(usize, usize)]) -> Result<Vec<Decision>> {
        window_features(&self.model, trial, windows)?
            .iter()
            .map(|f| self.lda.decide(f))
            .collect()
    }
}

/// Inner 5-fold choice of the component count over 1..=min(L_x, L_s);
/// ties go to the smaller J.
pub fn select_j(trials: &[&TrialBundle], x_lag: LagSpec, s_lag: LagSpec) -> Result<usize> {
    if trials.len() < INNER_FOLDS {
        return config(format!(
            "J selection needs at least {INNER_FOLDS} trials, got {}",
            trials.len()
        ));
    }
    let j_max = x_lag.n_lags.min(s_lag.n_lags);
    let folds = inner_folds(trials.len(), INNER_FOLDS);
    let mut per_fold = Vec::with_capacity(folds.len());
    for fold in &folds {
        let subset: Vec<&TrialBundle> = fold.iter().map(|&i| trials[i]).collect();
        per_fold.push(trial_moments(&subset, x_lag, s_lag)?);
    }
    let mut correct = vec![0usize; j_max];
    for (k, fold) in folds.iter().enumerate() {
        let mut m = per_fold[k].zeros_like();
        for (i, pf) in per_fold.iter().enumerate() {
            if i != k {
                m.add_assign(pf);
            }
        }
        let full = CcaModel::from_moments(&m, j_max, x_lag, s_lag)?;
        let train: Vec<&TrialBundle> = (0..trials.len())
            .filter(|i| !fold.contains(i))
            .map(|i| trials[i])
            .collect();
        let (train_f, train_y) = labelled_features(&full, &train)?;
        let test: Vec<&TrialBundle> = fold.iter().map(|&i| trials[i]).collect();
        let (test_f, test_y) = labelled_features(&full, &test)?;
        for j in 1..=j_max {
            let cut = |f: &Vec<f64>| f[..j].to_vec();
            let tf: Vec<Vec<f64>> = train_f.iter().map(cut).collect();
            let lda = LdaClassifier::fit_antisymmetric(&tf, &train_y)?;
            for (f, y) in test_f.iter().zip(&test_y) {
                if lda.decide(&f[..j])?.choice == *y {
                    correct[j - 1] += 1;
                }
            }
        }
    }
    let mut best = 0;
    for j in 1..j_max {
        if correct[j] > correct[best] {
            best = j;
        }
    }
    log::debug!("J accuracies {correct:?}; chose {}", best + 1);
    Ok(best + 1)
}
