use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use aad_core::bundle::{bundle_dir_name, is_raw_bundle, list_bundles, read_dataset, write_dataset, RawTrial};
use aad_core::catcn::{
    count_macs, count_params, human_count, load_checkpoint, receptive_field, receptive_field_ms,
    save_checkpoint, CatcnConfig,
};
use aad_core::dsp::{preprocess_trial, PreprocessConfig};
use aad_core::harness::{
    evaluate, make_folds, EvalContext, Experiment, Fold, FoldMode, FoldPlan, ModelKind,
    ResultsTable, TrainConfig,
};
use aad_core::spatial::{cluster_filters, write_clusters_csv};
use aad_core::synth::{gen_cohort, gen_raw_cohort, CohortSpec};
use aad_core::AadError;
use anyhow::{Context, Result};
use serde::Serialize;

use crate::config::RunConfig;
use crate::{AblateArgs, Global, ModeArg, ModelArg, RunArgs, SynthArgs};

fn cohort_spec(a: &SynthArgs) -> CohortSpec {
    CohortSpec {
        n_subjects: a.subjects,
        trials_per_subject: a.trials,
        duration_s: a.duration,
        snr_db: a.snr,
        distractor_gain: a.gain,
        channels: a.channels,
        ..CohortSpec::default()
    }
}

pub fn synth(g: &Global, a: &SynthArgs) -> Result<()> {
    let out = g.out()?;
    let spec = cohort_spec(a);
    let seed = g.seed.unwrap_or(0);
    if a.raw {
        for t in gen_raw_cohort(&spec, seed)? {
            t.write_dir(&out.join(bundle_dir_name(&t.subject_id, &t.trial_id)))?;
        }
    } else {
        write_dataset(&out, &gen_cohort(&spec, seed)?)?;
    }
    println!(
        "wrote {} trials ({} subjects) to {}",
        spec.n_subjects * spec.trials_per_subject,
        spec.n_subjects,
        out.display()
    );
    Ok(())
}

pub fn preprocess(g: &Global, input: &Path) -> Result<()> {
    let out = g.out()?;
    if !input.is_dir() {
        return Err(AadError::Config(format!("input {} does not exist", input.display())).into());
    }
    let cfg = PreprocessConfig::default();
    let mut n = 0;
    for dir in list_bundles(input)? {
        if !is_raw_bundle(&dir)? {
            log::warn!("{} is already preprocessed; skipped", dir.display());
            continue;
        }
        let raw = RawTrial::read_dir(&dir)?;
        let t = preprocess_trial(&raw, &cfg).with_context(|| format!("preprocessing {}", dir.display()))?;
        t.write_dir(&out.join(bundle_dir_name(&t.subject_id, &t.trial_id)))?;
        n += 1;
    }
    println!("preprocessed {n} trials into {}", out.display());
    Ok(())
}

fn run_config(g: &Global, a: &RunArgs) -> Result<RunConfig> {
    let mut cfg = match (&g.config, &a.data) {
        (Some(path), _) => RunConfig::load(path)?,
        (None, Some(data)) => RunConfig::with_data(data.clone()),
        (None, None) => return Err(AadError::Config("either --config or --data is required".into()).into()),
    };
    if let Some(d) = &a.data {
        cfg.data = d.clone();
    }
    if let Some(m) = a.mode {
        cfg.mode = match m {
            ModeArg::Si => FoldMode::Si,
            ModeArg::Ss => FoldMode::Ss,
        };
    }
    if let Some(models) = &a.models {
        cfg.models = models
            .iter()
            .map(|m| match m {
                ModelArg::Catcn => ModelKind::Catcn,
                ModelArg::Ridge => ModelKind::Ridge,
                ModelArg::Cca => ModelKind::Cca,
            })
            .collect();
    }
    if let Some(f) = &a.folds {
        cfg.folds = Some(f.clone());
    }
    if let Some(c) = &a.checkpoints {
        cfg.checkpoints = Some(c.clone());
    }
    if let Some(s) = g.seed {
        cfg.seed = s;
        cfg.train.seed = s;
    }
    if let Some(e) = a.epochs {
        cfg.train.max_epochs = e;
    }
    if let Some(m) = a.max_windows {
        cfg.train.max_windows_per_epoch = Some(m);
    }
    if let Some(lr) = a.lr {
        cfg.train.lr_si = lr;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn checkpoint_name(mode: FoldMode, subject: &str, fold: usize) -> String {
    format!("{}-{subject}-fold{fold}", mode.as_str())
}

fn write_results(out: &Path, table: &ResultsTable) -> Result<()> {
    fs::create_dir_all(out)?;
    table.write_csv(&out.join("results.csv"))?;
    table.write_summary_json(&out.join("summary.json"))?;
    for s in table.summary() {
        println!(
            "{:<6} {:<3} {:>5} s  {:.3} ± {:.3}  ({} windows)",
            s.model, s.mode, s.window_s, s.mean, s.std, s.n_windows
        );
    }
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

struct Loaded {
    cfg: RunConfig,
    trials: Vec<aad_core::TrialBundle>,
    plan: FoldPlan,
}

fn load(g: &Global, a: &RunArgs) -> Result<Loaded> {
    let cfg = run_config(g, a)?;
    let trials = read_dataset(&cfg.data)?;
    if trials.is_empty() {
        return Err(AadError::Config(format!("no trial bundles in {}", cfg.data.display())).into());
    }
    let plan = make_folds(&trials, cfg.mode, cfg.seed)?;
    Ok(Loaded { cfg, trials, plan })
}

fn experiment<'a>(cfg: &RunConfig, trials: &'a [aad_core::TrialBundle]) -> Experiment<'a> {
    Experiment {
        dataset: cfg.dataset.clone(),
        trials,
        train: cfg.train.clone(),
        catcn: cfg.catcn(),
        windows: cfg.windows.clone(),
        seed: cfg.seed,
    }
}

pub fn train(g: &Global, a: &RunArgs) -> Result<()> {
    let out = g.out()?;
    let Loaded { cfg, trials, plan } = load(g, a)?;
    let exp = experiment(&cfg, &trials);
    let (table, outcomes) = exp.run(&plan, &cfg.models, cfg.folds.as_deref(), g.jobs)?;
    fs::create_dir_all(&out)?;
    write_json(&out.join("folds.json"), &plan)?;
    write_json(&out.join("config.json"), &cfg)?;
    for o in &outcomes {
        if let Some(r) = &o.report {
            let dir = out.join("checkpoints").join(checkpoint_name(plan.mode, &o.subject, o.fold));
            save_checkpoint(&r.model, &r.meta, &dir)?;
            write_json(&dir.join("history.json"), &r.history)?;
        }
    }
    write_results(&out, &table)
}

pub fn eval(g: &Global, a: &RunArgs) -> Result<()> {
    let out = g.out()?;
    let Loaded { cfg, trials, plan } = load(g, a)?;
    let Some(ckpt_root) = &cfg.checkpoints else {
        // nothing trained yet: train and score in one go
        let (table, _) = experiment(&cfg, &trials).run(&plan, &cfg.models, cfg.folds.as_deref(), g.jobs)?;
        return write_results(&out, &table);
    };
    let linear: Vec<ModelKind> = cfg.models.iter().copied().filter(|&m| m != ModelKind::Catcn).collect();
    let selected: Vec<usize> = cfg.folds.clone().unwrap_or_else(|| (0..plan.folds.len()).collect());
    let mut table = ResultsTable::default();
    if cfg.models.contains(&ModelKind::Catcn) {
        for &i in &selected {
            let fold = plan.folds.get(i).ok_or_else(|| AadError::Config(format!("fold {i} out of range")))?;
            let dir = ckpt_root.join(checkpoint_name(plan.mode, &fold.subject, fold.index));
            let (model, _) = load_checkpoint(&dir).with_context(|| format!("loading {}", dir.display()))?;
            let ctx = EvalContext {
                dataset: cfg.dataset.clone(),
                model: ModelKind::Catcn.as_str().into(),
                mode: plan.mode.as_str().into(),
                fold: fold.index,
            };
            table.extend(evaluate(&model, &Fold::select(&trials, &fold.test), &cfg.windows, &ctx)?);
        }
    }
    if !linear.is_empty() {
        let (t, _) = experiment(&cfg, &trials).run(&plan, &linear, Some(&selected), g.jobs)?;
        table.extend(t.rows);
    }
    write_results(&out, &table)
}

#[derive(Serialize)]
struct AblationRow {
    model: String,
    params: usize,
    params_rounded: String,
    macs_5s: u64,
    eeg_rf: usize,
    stim_rf: usize,
    acc_1s: Option<f64>,
    acc_5s: Option<f64>,
    acc_10s: Option<f64>,
}

pub fn ablate(g: &Global, a: &AblateArgs) -> Result<()> {
    let out = g.out()?;
    let seed = g.seed.unwrap_or(0);
    let spec = CohortSpec {
        n_subjects: a.subjects,
        trials_per_subject: a.trials,
        duration_s: a.duration,
        snr_db: a.snr,
        channels: a.channels,
        ..CohortSpec::default()
    };
    let trials = gen_cohort(&spec, seed)?;
    let plan = make_folds(&trials, FoldMode::Si, seed)?;
    let folds: Vec<usize> = (0..a.folds.min(plan.folds.len())).collect();
    let c = a.channels;
    let variants = [
        ("raw input", CatcnConfig::raw_input(c)),
        ("+ spatial projection", CatcnConfig::stem_only(c)),
        ("+ TCN", CatcnConfig::tcn(c, 5)),
        ("+ causal/anticausal", CatcnConfig::causal(c, 4)),
        ("final (3, 5)", CatcnConfig::final_model(c)),
    ];
    let train = TrainConfig {
        max_epochs: a.epochs,
        max_windows_per_epoch: Some(a.max_windows),
        lr_si: a.lr,
        seed,
        ..TrainConfig::default()
    };
    let windows = vec![1.0, 5.0, 10.0];
    let mut rows = Vec::new();
    for (name, catcn) in variants {
        let exp = Experiment {
            dataset: "synthetic".into(),
            trials: &trials,
            train: train.clone(),
            catcn: catcn.clone(),
            windows: windows.clone(),
            seed,
        };
        let (table, _) = exp.run(&plan, &[ModelKind::Catcn], Some(&folds), g.jobs)?;
        let params = count_params(&catcn);
        let row = AblationRow {
            model: name.into(),
            params,
            params_rounded: human_count(params as u64),
            macs_5s: count_macs(&catcn, (5.0 * catcn.fs) as usize).layers,
            eeg_rf: catcn.eeg_rf(),
            stim_rf: catcn.stim_rf(),
            acc_1s: table.pooled_accuracy("catcn", 1.0),
            acc_5s: table.pooled_accuracy("catcn", 5.0),
            acc_10s: table.pooled_accuracy("catcn", 10.0),
        };
        println!(
            "{:<22} {:>7} params  {:>9} MACs  acc 1/5/10 s: {}",
            row.model,
            row.params_rounded,
            row.macs_5s,
            [row.acc_1s, row.acc_5s, row.acc_10s]
                .iter()
                .map(|x| x.map_or("-".into(), |v| format!("{v:.3}")))
                .collect::<Vec<_>>()
                .join(" / ")
        );
        rows.push(row);
    }
    fs::create_dir_all(&out)?;
    let mut w = csv::Writer::from_path(out.join("ablation.csv"))?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct ClusterReport {
    subject_centroids: Vec<(String, Vec<f64>)>,
    clusters: Vec<aad_core::spatial::Cluster>,
}

pub fn cluster(g: &Global, root: &Path) -> Result<()> {
    let out = g.out()?;
    if !root.is_dir() {
        return Err(AadError::Config(format!("checkpoint directory {} does not exist", root.display())).into());
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    dirs.retain(|d| d.join("manifest.json").is_file());
    dirs.sort();
    let mut by_subject: BTreeMap<String, Vec<Vec<f64>>> = BTreeMap::new();
    for d in &dirs {
        let (model, meta) = load_checkpoint(d)?;
        let subject = meta
            .subject
            .unwrap_or_else(|| d.file_name().unwrap_or_default().to_string_lossy().into_owned());
        let filters = model
            .spatial_filters()
            .ok_or_else(|| AadError::Config(format!("{} has no spatial projection", d.display())))?;
        by_subject.entry(subject).or_default().extend(filters);
    }
    if by_subject.is_empty() {
        return Err(AadError::Config(format!("no checkpoints under {}", root.display())).into());
    }
    let grouped: Vec<(String, Vec<Vec<f64>>)> = by_subject.into_iter().collect();
    let (centroids, clusters) = cluster_filters(&grouped, g.seed.unwrap_or(0))?;
    fs::create_dir_all(&out)?;
    write_clusters_csv(&out.join("clusters.csv"), &clusters)?;
    let per = centroids.len() / grouped.len();
    let report = ClusterReport {
        subject_centroids: centroids
            .iter()
            .enumerate()
            .map(|(i, c)| (grouped[i / per].0.clone(), c.clone()))
            .collect(),
        clusters: clusters.clone(),
    };
    write_json(&out.join("clusters.json"), &report)?;
    for (i, c) in clusters.iter().enumerate() {
        println!("cluster {i}: {} subject centroids", c.members.len());
    }
    Ok(())
}

pub fn rf(k: usize, n: usize, fs: f64) -> Result<()> {
    if k == 0 || !(fs > 0.0) {
        return Err(AadError::Config("kernel size and sampling rate must be positive".into()).into());
    }
    let samples = receptive_field(k, n);
    let unit = if samples == 1 { "sample" } else { "samples" };
    println!("{samples} {unit}, {:.1} ms @ {fs} Hz", receptive_field_ms(k, n, fs));
    Ok(())
}
