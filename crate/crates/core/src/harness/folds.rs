//! Outer cross-validation folds with audio-leakage exclusion.

use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bundle::TrialBundle;
use crate::error::{config, AadError, Result};

pub const OUTER_FOLDS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FoldMode {
    /// Subject-specific: 8 trial folds within each subject.
    Ss,
    /// Subject-independent: leave one subject out.
    Si,
}

impl FoldMode {
    pub fn as_str(self) -> &'static str {
        match self {
            FoldMode::Ss => "ss",
            FoldMode::Si => "si",
        }
    }
}

/// Trial indices into the dataset the plan was built from. `train`,
/// `validation` and `test` are disjoint; `excluded` lists trials dropped
/// from the first two for sharing attended audio with `test`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    /// The subject whose trials form `test`.
    pub subject: String,
    /// Fold number within the subject (SS) or across subjects (SI).
    pub index: usize,
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
    pub excluded: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub mode: FoldMode,
    pub folds: Vec<Fold>,
}

/// Split `n` shuffled items into `k` near-equal parts, larger parts first.
pub fn split_near_equal<T: Clone>(items: &[T], k: usize) -> Vec<Vec<T>> {
    let (base, extra) = (items.len() / k, items.len() % k);
    let mut out = Vec::with_capacity(k);
    let mut at = 0;
    for i in 0..k {
        let n = base + usize::from(i < extra);
        out.push(items[at..at + n].to_vec());
        at += n;
    }
    out
}

fn by_subject(trials: &[TrialBundle]) -> BTreeMap<&str, Vec<usize>> {
    let mut m: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, t) in trials.iter().enumerate() {
        m.entry(t.subject_id.as_str()).or_default().push(i);
    }
    m
}

/// Remove trials whose attended audio appears in `test`.
fn exclude_leaks(trials: &[TrialBundle], test: &[usize], pool: Vec<usize>) -> (Vec<usize>, Vec<usize>) {
    let audio: HashSet<&str> = test
        .iter()
        .map(|&i| trials[i].audio_id_attended.as_str())
        .collect();
    pool.into_iter()
        .partition(|&i| !audio.contains(trials[i].audio_id_attended.as_str()))
}

pub fn make_folds(trials: &[TrialBundle], mode: FoldMode, seed: u64) -> Result<FoldPlan> {
    let subjects = by_subject(trials);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = Vec::new();
    match mode {
        FoldMode::Ss => {
            for (subject, idx) in &subjects {
                if idx.len() < OUTER_FOLDS {
                    return config(format!(
                        "subject {subject} has {} trials; subject-specific folds need {OUTER_FOLDS}",
                        idx.len()
                    ));
                }
                let mut shuffled = idx.clone();
                shuffled.shuffle(&mut rng);
                let parts = split_near_equal(&shuffled, OUTER_FOLDS);
                for (k, test) in parts.iter().enumerate() {
                    let v = (k + rng.random_range(1..OUTER_FOLDS)) % OUTER_FOLDS;
                    let mut excluded = Vec::new();
                    let mut collect = |pool: Vec<usize>| {
                        let (keep, drop) = exclude_leaks(trials, test, pool);
                        excluded.extend(drop);
                        keep
                    };
                    let validation = collect(parts[v].clone());
                    let train = collect(
                        parts
                            .iter()
                            .enumerate()
                            .filter(|&(j, _)| j != k && j != v)
                            .flat_map(|(_, p)| p.iter().copied())
                            .collect(),
                    );
                    folds.push(finish(subject, k, train, validation, test.clone(), excluded));
                }
            }
        }
        FoldMode::Si => {
            if subjects.len() < 2 {
                return config(format!(
                    "leave-one-subject-out needs at least 2 subjects, got {}",
                    subjects.len()
                ));
            }
            for (k, (subject, test)) in subjects.iter().enumerate() {
                let pool: Vec<usize> = subjects
                    .iter()
                    .filter(|(s, _)| *s != subject)
                    .flat_map(|(_, v)| v.iter().copied())
                    .collect();
                let (mut keep, excluded) = exclude_leaks(trials, test, pool);
                if keep.len() < 2 {
                    return config(format!(
                        "holding out {subject} leaves {} training trials after leakage exclusion",
                        keep.len()
                    ));
                }
                keep.shuffle(&mut rng);
                let n_val = (keep.len() / OUTER_FOLDS).max(1);
                let validation = keep.split_off(keep.len() - n_val);
                folds.push(finish(subject, k, keep, validation, test.clone(), excluded));
            }
        }
    }
    let plan = FoldPlan { mode, folds };
    check_leakage(&plan, trials)?;
    Ok(plan)
}

fn finish(
    subject: &str,
    index: usize,
    mut train: Vec<usize>,
    mut validation: Vec<usize>,
    mut test: Vec<usize>,
    mut excluded: Vec<usize>,
) -> Fold {
    for v in [&mut train, &mut validation, &mut test, &mut excluded] {
        v.sort_unstable();
    }
    Fold {
        subject: subject.to_string(),
        index,
        train,
        validation,
        test,
        excluded,
    }
}

/// Fails if any fit trial (train or validation) shares a trial id, an
/// attended audio id or, in SI mode, a subject with the test set.
pub fn check_leakage(plan: &FoldPlan, trials: &[TrialBundle]) -> Result<()> {
    for f in &plan.folds {
        let key = |i: usize| (trials[i].subject_id.as_str(), trials[i].trial_id.as_str());
        let test_ids: HashSet<_> = f.test.iter().map(|&i| key(i)).collect();
        let test_audio: HashSet<&str> = f
            .test
            .iter()
            .map(|&i| trials[i].audio_id_attended.as_str())
            .collect();
        let test_subjects: HashSet<&str> =
            f.test.iter().map(|&i| trials[i].subject_id.as_str()).collect();
        for &i in f.train.iter().chain(&f.validation) {
            let t = &trials[i];
            let leak = if test_ids.contains(&key(i)) {
                Some("trial id")
            } else if test_audio.contains(t.audio_id_attended.as_str()) {
                Some("attended audio id")
            } else if plan.mode == FoldMode::Si && test_subjects.contains(t.subject_id.as_str()) {
                Some("subject id")
            } else {
                None
            };
            if let Some(what) = leak {
                return Err(AadError::Contract(format!(
                    "fold {}/{} leaks {what} of trial {}",
                    f.subject, f.index, t.trial_id
                )));
            }
        }
    }
    Ok(())
}

impl Fold {
    pub fn select<'a>(trials: &'a [TrialBundle], idx: &[usize]) -> Vec<&'a TrialBundle> {
        idx.iter().map(|&i| &trials[i]).collect()
    }
}
