//! Black-box tests of the `zslforge` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;
use zslforge::dataio::load_dataset;
use zslforge::networks::Parameters;
use zslforge::trainer::Checkpoint;

fn zslforge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_zslforge"))
        .args(args)
        .env_remove("ZSLFORGE_THREADS")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) {
    let out = zslforge(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn code(args: &[&str]) -> i32 {
    zslforge(args).status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap()
}

fn csv_rows(p: &Path) -> Vec<Vec<String>> {
    read(p)
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

/// A small dataset and a 10-iteration run with checkpoints every 5.
fn trained() -> (TempDir, PathBuf, PathBuf) {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let run = tmp.path().join("run");
    ok(&["synth", "--out", s(&data), "--per-class", "12", "--seed", "3"]);
    ok(&["train", "--data", s(&data), "--out", s(&run), "--iters", "10", "--checkpoint-every", "5", "--seed", "1"]);
    (tmp, data, run)
}

#[test]
fn synth_defaults_are_loadable_and_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&["synth", "--out", s(&a)]);
    ok(&["synth", "--out", s(&b)]);
    let ds = load_dataset(&a).unwrap();
    assert_eq!((ds.n_classes(), ds.rep_dim(), ds.feat_dim(), ds.n_samples()), (15, 8, 16, 450));
    assert_eq!(ds.splits().unseen.len(), 3);
    for entry in std::fs::read_dir(&a).unwrap() {
        let name = entry.unwrap().file_name();
        assert_eq!(std::fs::read(a.join(&name)).unwrap(), std::fs::read(b.join(&name)).unwrap());
    }
}

#[test]
fn usage_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&["synth", "--out", s(&tmp.path().join("x")), "--unseen", "0"]), 2);
    assert_eq!(code(&["train"]), 2);
    assert_eq!(code(&["eval", "--checkpoint", "c"]), 2);
}

#[test]
fn missing_files_exit_4() {
    let tmp = tempfile::tempdir().unwrap();
    let nowhere = tmp.path().join("nowhere");
    assert_eq!(code(&["train", "--data", s(&nowhere), "--out", s(&tmp.path().join("o"))]), 4);
    assert_eq!(code(&["curve", "--report", s(&nowhere), "--out", s(&tmp.path().join("p.csv"))]), 4);
}

#[test]
fn train_writes_checkpoints_logs_and_protocols() {
    let (_tmp, data, run) = trained();
    let ckpts: Vec<String> = std::fs::read_dir(&run)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.starts_with("ckpt_") || n == "final.txt")
        .collect();
    assert_eq!(ckpts.len(), 3, "{ckpts:?}");
    assert_eq!(read(&run.join("final.txt")), read(&run.join("ckpt_000010.txt")));

    let log = read(&run.join("trainlog.csv"));
    assert!(log.starts_with("iter,loss_d,loss_g,loss_cls,loss_sr,val_top1,val_h,test_top1,test_h\n"));
    let iters: Vec<String> = csv_rows(&run.join("trainlog.csv")).into_iter().map(|r| r[0].clone()).collect();
    assert_eq!(iters, ["5", "10"]);

    let protocols = csv_rows(&run.join("protocols.csv"));
    assert_eq!(protocols.len(), 2);
    assert_eq!((protocols[0][0].as_str(), protocols[1][0].as_str()), ("validation", "test"));
    assert!(read(&run.join("selected.txt")).contains("mode=val"));

    // combining a manifest with configuration flags is refused
    let manifest = run.join("manifest.txt");
    let again = run.with_file_name("again");
    assert_eq!(code(&["train", "--manifest", s(&manifest), "--out", s(&again), "--iters", "3"]), 2);
    assert_eq!(code(&["train", "--manifest", s(&manifest), "--data", s(&data)]), 2);
}

#[test]
fn rerun_from_manifest_reproduces_the_log() {
    let (tmp, _data, run) = trained();
    let again = tmp.path().join("again");
    ok(&["train", "--manifest", s(&run.join("manifest.txt")), "--out", s(&again)]);
    assert_eq!(read(&run.join("trainlog.csv")), read(&again.join("trainlog.csv")));
    assert_eq!(read(&run.join("final.txt")), read(&again.join("final.txt")));
}

#[test]
fn eval_reports_follow_the_task() {
    let (tmp, data, run) = trained();
    let ckpt = run.join("final.txt");
    let ds = load_dataset(&data).unwrap();

    let zsl = tmp.path().join("zsl");
    ok(&["eval", "--checkpoint", s(&ckpt), "--data", s(&data), "--task", "zsl", "--out", s(&zsl)]);
    let metrics: Vec<String> = csv_rows(&zsl.join("summary.csv")).into_iter().map(|r| r[0].clone()).collect();
    assert_eq!(metrics, ["top1"]);
    assert!(!zsl.join("curve.csv").exists());
    let preds = csv_rows(&zsl.join("predictions.csv"));
    assert!(!preds.is_empty());
    for row in &preds {
        let truth: usize = row[1].parse().unwrap();
        let predicted: usize = row[2].parse().unwrap();
        assert!(ds.splits().unseen.contains(&truth));
        assert!(ds.splits().unseen.contains(&predicted), "ZSL predicted seen class {predicted}");
    }

    let gzsl = tmp.path().join("gzsl");
    ok(&["eval", "--checkpoint", s(&ckpt), "--data", s(&data), "--out", s(&gzsl)]);
    let metrics: Vec<String> = csv_rows(&gzsl.join("summary.csv")).into_iter().map(|r| r[0].clone()).collect();
    assert_eq!(metrics, ["top1", "auc", "h", "acc_seen", "acc_unseen"]);
    assert!(read(&gzsl.join("curve.csv")).starts_with("gamma,acc_seen,acc_unseen\n"));
    // default grid: 200 uniform values plus both infinite sentinels
    assert_eq!(csv_rows(&gzsl.join("curve.csv")).len(), 202);
}

#[test]
fn zero_generator_scores_at_chance() {
    let (tmp, data, run) = trained();
    let mut ckpt = Checkpoint::load(&run.join("final.txt")).unwrap();
    ckpt.params.generator.zero_all();
    let zero = tmp.path().join("zero.txt");
    ckpt.save(&zero).unwrap();
    let mut total = 0.0;
    for seed in 0..5 {
        let out = tmp.path().join(format!("e{seed}"));
        ok(&[
            "eval", "--checkpoint", s(&zero), "--data", s(&data), "--task", "zsl", "--seed", &seed.to_string(),
            "--out", s(&out), "--n-per-class", "50",
        ]);
        let rows = csv_rows(&out.join("summary.csv"));
        total += rows[0][1].parse::<f64>().unwrap();
    }
    let mean = total / 5.0;
    assert!((mean - 1.0 / 3.0).abs() <= 0.15, "mean Top-1 {mean}");
}

#[test]
fn eval_rejects_mismatched_dimensions() {
    let (tmp, _data, run) = trained();
    let other = tmp.path().join("other");
    ok(&["synth", "--out", s(&other), "--rep-dim", "5", "--per-class", "10"]);
    let out = tmp.path().join("e");
    assert_eq!(code(&["eval", "--checkpoint", s(&run.join("final.txt")), "--data", s(&other), "--out", s(&out)]), 2);
}

#[test]
fn curve_polyline_is_sorted_and_deterministic() {
    let (tmp, data, run) = trained();
    let e = tmp.path().join("e");
    ok(&["eval", "--checkpoint", s(&run.join("final.txt")), "--data", s(&data), "--out", s(&e)]);
    let (p1, p2) = (tmp.path().join("p1.csv"), tmp.path().join("p2.csv"));
    let svg = tmp.path().join("c.svg");
    ok(&["curve", "--report", s(&e.join("curve.csv")), "--out", s(&p1), "--svg", s(&svg)]);
    ok(&["curve", "--report", s(&e.join("curve.csv")), "--out", s(&p2)]);
    assert_eq!(read(&p1), read(&p2));
    assert!(read(&p1).starts_with("acc_seen,acc_unseen\n"));
    let xs: Vec<f64> = csv_rows(&p1).iter().map(|r| r[0].parse().unwrap()).collect();
    assert!(xs.windows(2).all(|w| w[0] <= w[1]));
    assert!(read(&svg).contains("<polyline"));

    let perfect = tmp.path().join("perfect.csv");
    std::fs::write(&perfect, "gamma,acc_seen,acc_unseen\n-inf,1,1\n0,1,1\ninf,1,1\n").unwrap();
    let p3 = tmp.path().join("p3.csv");
    ok(&["curve", "--report", s(&perfect), "--out", s(&p3)]);
    let rows = csv_rows(&p3);
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].iter().map(|v| v.parse::<f64>().unwrap()).collect::<Vec<_>>(), [1.0, 1.0]);
}
