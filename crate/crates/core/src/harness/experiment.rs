//! Fold-level runs of every decoder, shared by the CLI and the end-to-end
//! checks.

use std::collections::BTreeMap;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::evaluate::{evaluate, Decoder, EvalContext};
use super::folds::{make_folds, Fold, FoldMode, FoldPlan};
use super::results::{ResultRow, ResultsTable};
use super::train::{finetune_ss, train_si, TrainConfig, TrainReport};
use crate::bundle::TrialBundle;
use crate::catcn::{CatcnConfig, CatcnModel};
use crate::error::{config, AadError, Result};
use crate::linear::{
    lambda_grid, select_lambda, CcaDecoder, LagSpec, RidgeDecoder, CCA_EEG_LAGS, CCA_STIM_LAGS,
    RIDGE_LAGS,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Catcn,
    Ridge,
    Cca,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Catcn => "catcn",
            ModelKind::Ridge => "ridge",
            ModelKind::Cca => "cca",
        }
    }
}

impl FromStr for ModelKind {
    type Err = AadError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "catcn" => Ok(ModelKind::Catcn),
            "ridge" => Ok(ModelKind::Ridge),
            "cca" => Ok(ModelKind::Cca),
            other => config(format!("unknown model {other:?}; expected catcn, ridge or cca")),
        }
    }
}

/// Ridge with λ chosen by inner folds over the full grid.
pub fn fit_ridge(trials: &[&TrialBundle]) -> Result<RidgeDecoder> {
    let lag = LagSpec::future(RIDGE_LAGS);
    let lambda = select_lambda(trials, lag, &lambda_grid())?;
    RidgeDecoder::train(trials, lag, lambda)
}

/// CCA with J chosen by inner folds.
pub fn fit_cca(trials: &[&TrialBundle]) -> Result<CcaDecoder> {
    CcaDecoder::train_selected(trials, LagSpec::future(CCA_EEG_LAGS), LagSpec::past(CCA_STIM_LAGS))
}

/// Everything a run needs besides the fold plan.
#[derive(Debug, Clone)]
pub struct Experiment<'a> {
    pub dataset: String,
    pub trials: &'a [TrialBundle],
    pub train: TrainConfig,
    /// Channel count is taken from the data.
    pub catcn: CatcnConfig,
    pub windows: Vec<f64>,
    pub seed: u64,
}

/// Rows of one fold, plus the trained network when there is one.
#[derive(Debug, Clone)]
pub struct FoldOutcome {
    pub subject: String,
    pub fold: usize,
    pub model: ModelKind,
    pub rows: Vec<ResultRow>,
    pub report: Option<TrainReport>,
}

impl Experiment<'_> {
    fn ctx(&self, kind: ModelKind, mode: FoldMode, fold: usize) -> EvalContext {
        EvalContext {
            dataset: self.dataset.clone(),
            model: kind.as_str().to_string(),
            mode: mode.as_str().to_string(),
            fold,
        }
    }

    fn channels(&self) -> Result<usize> {
        let c = self.trials.first().map_or(0, |t| t.n_channels());
        if c == 0 || self.trials.iter().any(|t| t.n_channels() != c) {
            return config("trials must share a nonzero channel count");
        }
        Ok(c)
    }

    /// Fresh network for one fold; the seed varies by fold so folds do not
    /// share an initialization by accident of ordering.
    pub fn new_model(&self, fold: usize) -> Result<CatcnModel> {
        let cfg = CatcnConfig {
            c: self.channels()?,
            ..self.catcn.clone()
        };
        CatcnModel::new(cfg, self.seed.wrapping_add(fold as u64))
    }

    fn pretrain(&self, fold: &Fold) -> Result<TrainReport> {
        let train = Fold::select(self.trials, &fold.train);
        let val = Fold::select(self.trials, &fold.validation);
        let mut report = train_si(self.new_model(fold.index)?, &train, &val, &self.train)?;
        report.meta.subject = Some(fold.subject.clone());
        report.meta.fold = Some(fold.index);
        Ok(report)
    }

    /// Train on a fold's train ∪ validation (linear) or train with early
    /// stopping on validation (CA-TCN), then score its test trials.
    /// `init` replaces the fresh network, which turns CA-TCN training into
    /// fine-tuning.
    pub fn run_fold(
        &self,
        mode: FoldMode,
        fold: &Fold,
        kind: ModelKind,
        init: Option<&CatcnModel>,
    ) -> Result<FoldOutcome> {
        let test = Fold::select(self.trials, &fold.test);
        let ctx = self.ctx(kind, mode, fold.index);
        let (rows, report) = match kind {
            ModelKind::Ridge | ModelKind::Cca => {
                let mut idx = fold.train.clone();
                idx.extend(&fold.validation);
                idx.sort_unstable();
                let fit = Fold::select(self.trials, &idx);
                let decoder: Box<dyn Decoder> = match kind {
                    ModelKind::Ridge => Box::new(fit_ridge(&fit)?),
                    _ => Box::new(fit_cca(&fit)?),
                };
                (evaluate(decoder.as_ref(), &test, &self.windows, &ctx)?, None)
            }
            ModelKind::Catcn => {
                let report = match init {
                    Some(model) => {
                        let train = Fold::select(self.trials, &fold.train);
                        let val = Fold::select(self.trials, &fold.validation);
                        let mut r = finetune_ss(model.clone(), &train, &val, &self.train)?;
                        r.meta.subject = Some(fold.subject.clone());
                        r.meta.fold = Some(fold.index);
                        r
                    }
                    None => self.pretrain(fold)?,
                };
                (evaluate(&report.model, &test, &self.windows, &ctx)?, Some(report))
            }
        };
        log::info!(
            "{} {} fold {} ({}): {}",
            kind.as_str(),
            mode.as_str(),
            fold.index,
            fold.subject,
            rows.iter()
                .map(|r| format!("{} s {:.3}", r.window_s, r.accuracy))
                .collect::<Vec<_>>()
                .join(", ")
        );
        Ok(FoldOutcome {
            subject: fold.subject.clone(),
            fold: fold.index,
            model: kind,
            rows,
            report,
        })
    }

    /// Runs `kinds` on the selected folds of `plan` with up to `jobs`
    /// workers. Results come back in (fold, model) order whatever the
    /// scheduling, so output is identical for any `jobs`.
    ///
    /// SS runs of CA-TCN start from a per-subject network pretrained on that
    /// subject's leave-one-subject-out split.
    pub fn run(
        &self,
        plan: &FoldPlan,
        kinds: &[ModelKind],
        selected: Option<&[usize]>,
        jobs: usize,
    ) -> Result<(ResultsTable, Vec<FoldOutcome>)> {
        let folds: Vec<&Fold> = match selected {
            Some(sel) => {
                if let Some(&bad) = sel.iter().find(|&&i| i >= plan.folds.len()) {
                    return config(format!("fold {bad} out of range; plan has {}", plan.folds.len()));
                }
                sel.iter().map(|&i| &plan.folds[i]).collect()
            }
            None => plan.folds.iter().collect(),
        };

        let mut pretrained: BTreeMap<String, CatcnModel> = BTreeMap::new();
        if plan.mode == FoldMode::Ss && kinds.contains(&ModelKind::Catcn) {
            let si = make_folds(self.trials, FoldMode::Si, self.seed)?;
            let wanted: Vec<&Fold> = si
                .folds
                .iter()
                .filter(|f| folds.iter().any(|g| g.subject == f.subject))
                .collect();
            let reports = parallel(&wanted, jobs, |f| self.pretrain(f))?;
            for (f, r) in wanted.iter().zip(reports) {
                pretrained.insert(f.subject.clone(), r.model);
            }
        }

        let tasks: Vec<(&Fold, ModelKind)> =
            folds.iter().flat_map(|&f| kinds.iter().map(move |&k| (f, k))).collect();
        let outcomes = parallel(&tasks, jobs, |&(fold, kind)| {
            let init = match (plan.mode, kind) {
                (FoldMode::Ss, ModelKind::Catcn) => pretrained.get(&fold.subject),
                _ => None,
            };
            self.run_fold(plan.mode, fold, kind, init)
        })?;
        let mut table = ResultsTable::default();
        for o in &outcomes {
            table.extend(o.rows.iter().cloned());
        }
        Ok((table, outcomes))
    }
}

/// Order-preserving map over `items` on up to `jobs` scoped threads.
fn parallel<T: Sync, R: Send>(
    items: &[T],
    jobs: usize,
    f: impl Fn(&T) -> Result<R> + Sync,
) -> Result<Vec<R>> {
    let jobs = jobs.clamp(1, items.len().max(1));
    if jobs == 1 {
        return items.iter().map(&f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<R>>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..jobs {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                slots.lock().expect("result slots poisoned")[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("result slots poisoned")
        .into_iter()
        .map(|r| r.expect("every task ran"))
        .collect()
}
