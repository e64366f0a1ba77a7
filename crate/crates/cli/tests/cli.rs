use std::fs;
use std::path::Path;

use assert_cmd::Command;
use tempfile::TempDir;

fn aad() -> Command {
    let mut c = Command::cargo_bin("aad").expect("binary");
    c.env("AAD_LOG", "error");
    c
}

fn stdout(c: &mut Command) -> String {
    let out = c.output().expect("run");
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).expect("utf8")
}

fn tree(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                files.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    files.sort();
    files
}

fn synth(dir: &Path, seed: &str) {
    aad()
        .args(["synth", "--subjects", "3", "--trials", "8", "--duration", "10", "--channels", "4"])
        .args(["--seed", seed, "--out"])
        .arg(dir)
        .assert()
        .success();
}

#[test]
fn rf_prints_samples_and_ms() {
    assert_eq!(stdout(aad().args(["rf", "--k", "3", "--n", "4"])).trim(), "31 samples, 484.4 ms @ 64 Hz");
    assert!(stdout(aad().args(["rf", "--k", "1", "--n", "7"])).contains("1 sample,"));
}

#[test]
fn synth_is_deterministic() {
    let tmp = TempDir::new().unwrap();
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    synth(&a, "7");
    synth(&b, "7");
    synth(&c, "8");
    let ta = tree(&a);
    assert!(ta.len() >= 12);
    assert_eq!(ta, tree(&b));
    assert_ne!(ta, tree(&c));
}

#[test]
fn unknown_config_key_is_a_config_error() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("run.json");
    fs::write(&cfg, "{\n  \"data\": \".\",\n  \"learning_rate\": 0.1\n}\n").unwrap();
    let out = aad()
        .args(["train", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(tmp.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("learning_rate") && err.contains("line 3"), "{err}");
}

#[test]
fn missing_data_is_a_config_error() {
    let tmp = TempDir::new().unwrap();
    let out = aad()
        .args(["eval", "--models", "ridge", "--data"])
        .arg(tmp.path().join("nope"))
        .arg("--out")
        .arg(tmp.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("does not exist"));
}

#[test]
fn bad_flag_exits_two() {
    assert_eq!(aad().args(["rf", "--k", "x", "--n", "1"]).output().unwrap().status.code(), Some(2));
}

#[test]
fn train_eval_cluster_round_trip() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    synth(&data, "3");
    let run = tmp.path().join("run");
    aad()
        .args(["train", "--models", "catcn,ridge", "--folds", "0,1", "--epochs", "1", "--max-windows", "32"])
        .arg("--data")
        .arg(&data)
        .arg("--out")
        .arg(&run)
        .assert()
        .success();
    for f in ["folds.json", "config.json", "results.csv", "summary.json"] {
        assert!(run.join(f).is_file(), "{f}");
    }
    let ckpts = run.join("checkpoints");
    let names: Vec<String> = fs::read_dir(&ckpts)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    assert_eq!(names.len(), 2, "{names:?}");
    assert!(names.iter().all(|n| n.starts_with("si-") && ckpts.join(n).join("history.json").is_file()));

    let eval = tmp.path().join("eval");
    aad()
        .args(["eval", "--models", "catcn", "--folds", "0,1"])
        .arg("--data")
        .arg(&data)
        .arg("--checkpoints")
        .arg(&ckpts)
        .arg("--out")
        .arg(&eval)
        .assert()
        .success();
    let trained = fs::read_to_string(run.join("results.csv")).unwrap();
    let scored = fs::read_to_string(eval.join("results.csv")).unwrap();
    // the reloaded networks reproduce the CA-TCN rows exactly
    let catcn = |s: &str| s.lines().filter(|l| l.contains("catcn")).map(String::from).collect::<Vec<_>>();
    assert!(!catcn(&scored).is_empty());
    assert_eq!(catcn(&trained), catcn(&scored));

    let clusters = tmp.path().join("clusters");
    aad().arg("cluster").arg("--checkpoints").arg(&ckpts).arg("--out").arg(&clusters).assert().success();
    let csv = fs::read_to_string(clusters.join("clusters.csv")).unwrap();
    assert!(csv.lines().count() > 1);
    assert!(clusters.join("clusters.json").is_file());
}

#[test]
fn preprocess_turns_raw_into_model_input() {
    let tmp = TempDir::new().unwrap();
    let raw = tmp.path().join("raw");
    aad()
        .args(["synth", "--raw", "--subjects", "2", "--trials", "1", "--duration", "26", "--channels", "2", "--out"])
        .arg(&raw)
        .assert()
        .success();
    let out = tmp.path().join("pre");
    aad().arg("preprocess").arg("--input").arg(&raw).arg("--out").arg(&out).assert().success();
    assert_eq!(fs::read_dir(&out).unwrap().count(), 2);
}
