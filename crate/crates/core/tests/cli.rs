use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const SMALL: &str = "\
[spec]
n = 60
d = 8
n_genes = 40
n_blocks = 2
informative_rois = 2

[model]
levels = 3
heads = 1
head_dim = 2
att_dim = 4
conf_hidden = 4

[train]
epochs = 3
folds = 3
";

fn tmm(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tmm"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn workspace() -> (TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("small.conf");
    std::fs::write(&conf, SMALL).unwrap();
    (dir, conf)
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn exit_codes() {
    let (dir, conf) = workspace();
    let d = dir.path();
    let c = conf.to_str().unwrap();
    assert_eq!(code(&tmm(&[], d)), 2);
    assert_eq!(code(&tmm(&["--help"], d)), 0);
    assert_eq!(code(&tmm(&["--version"], d)), 0);
    assert_eq!(code(&tmm(&["frobnicate"], d)), 2);
    assert_eq!(code(&tmm(&["cv", "--bogus"], d)), 2);
    assert_eq!(code(&tmm(&["cv", "--config", c, "--k", "1"], d)), 2);
    assert_eq!(code(&tmm(&["ablate", "--confidence", "maybe"], d)), 2);
    assert_eq!(code(&tmm(&["train", "--config", c, "--holdout-fold", "3", "--k", "3", "--out", "m"], d)), 2);
    assert_eq!(code(&tmm(&["grid-lambda", "--config", c, "--values", "2"], d)), 2);

    let missing = tmm(&["cv", "--config", "nowhere.conf"], d);
    assert_eq!(code(&missing), 1);
    assert!(String::from_utf8_lossy(&missing.stderr).contains("nowhere.conf"));
    std::fs::write(d.join("bad.conf"), "[train]\nepochs = lots\n").unwrap();
    let bad = tmm(&["cv", "--config", "bad.conf"], d);
    assert_eq!(code(&bad), 1);
    assert!(String::from_utf8_lossy(&bad.stderr).contains("bad.conf:2"));
    assert_eq!(code(&tmm(&["cv", "--config", c, "--data", "no_such_dir"], d)), 1);
    assert_eq!(code(&tmm(&["rank-biomarkers", "--model", "none.txt", "--data", "."], d)), 1);
}

#[test]
fn pipeline_from_data_to_connectivity() {
    let (dir, conf) = workspace();
    let d = dir.path();
    let c = conf.to_str().unwrap();
    let ok = |args: &[&str]| {
        let out = tmm(args, d);
        assert_eq!(code(&out), 0, "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        out
    };
    ok(&["gen-data", "--config", c, "--seed", "3", "--out", "data"]);
    for f in ["expression.csv", "labels.csv", "ground_truth.txt", "manifest.txt"] {
        assert!(d.join("data").join(f).is_file(), "{f}");
    }

    ok(&["build-rri", "--config", c, "--data", "data", "--out", "rri"]);
    assert!(read(&d.join("rri/t_rri.txt")).lines().count() >= 8);
    assert!(read(&d.join("rri/manifest.txt")).contains("sha256 = "));

    ok(&["train", "--config", c, "--data", "data", "--holdout-fold", "0", "--out", "run"]);
    let history = read(&d.join("run/history.csv"));
    assert_eq!(history.lines().count(), 4);
    assert!(read(&d.join("run/confidence.csv")).starts_with("sample_id,modality,tcp_hat,fcp_hat,tfcp_hat\n"));
    let manifest = read(&d.join("run/manifest.txt"));
    assert!(manifest.contains("command = train") && manifest.contains("[train]"));

    ok(&[
        "rank-biomarkers",
        "--model",
        "run/model.txt",
        "--data",
        "data",
        "--samples",
        "run/eval_samples.txt",
        "--out",
        "ranking.csv",
    ]);
    let ranking = read(&d.join("ranking.csv"));
    assert!(ranking.starts_with("rank,roi,modality,acc_drop,prob_drop\n"));
    // 8 ROIs × 3 modalities
    assert_eq!(ranking.lines().count(), 1 + 24);
    assert!(read(&d.join("ranking.csv.manifest")).contains("run/eval_samples.txt"));

    ok(&["export-connectivity", "--data", "data", "--ranking", "ranking.csv", "--top-k", "5", "--out", "conn"]);
    assert_eq!(read(&d.join("conn.node")).lines().filter(|l| !l.starts_with('#')).count(), 5);
    let edge = read(&d.join("conn.edge"));
    assert_eq!(edge.lines().count(), 5);
    assert!(edge.lines().all(|l| l.split_whitespace().count() == 5));
    ok(&["export-connectivity", "--data", "data", "--ranking", "ranking.csv", "--source", "fdg", "--top-k", "3", "--out", "fdg"]);
    assert_eq!(
        code(&tmm(&["export-connectivity", "--data", "data", "--ranking", "ranking.csv", "--source", "pet", "--out", "x"], d)),
        2
    );
}

#[test]
fn ablate_rows_name_the_variant() {
    let (dir, conf) = workspace();
    let d = dir.path();
    let c = conf.to_str().unwrap();
    let run = |extra: &[&str], out: &str| {
        let mut args = vec!["ablate", "--config", c, "--out", out];
        args.extend_from_slice(extra);
        assert_eq!(code(&tmm(&args, d)), 0);
        read(&d.join(out))
    };
    let tcp = run(&["--confidence", "tcp"], "tcp.csv");
    let rows: Vec<&str> = tcp.lines().collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[0].starts_with("variant,t_rri,r_rri,confidence,acc_mean"));
    assert!(rows[1].starts_with("TFCP,true,true,TFCP,"));
    assert!(rows[2].starts_with("TCP,true,true,TCP,"));

    let no_t = run(&["--no-trri"], "no_t.csv");
    assert!(no_t.lines().nth(2).unwrap().starts_with("R-RRI only,false,true,TFCP,"));
    let full = run(&[], "full.csv");
    assert_eq!(full.lines().count(), 7);
}

#[test]
fn grid_lambda_writes_every_cell() {
    let (dir, conf) = workspace();
    let d = dir.path();
    let out = tmm(&["grid-lambda", "--config", conf.to_str().unwrap(), "--epochs", "1", "--out", "grid.csv"], d);
    assert_eq!(code(&out), 0);
    let grid = read(&d.join("grid.csv"));
    let rows: Vec<&str> = grid.lines().collect();
    assert_eq!(rows[0], "lambda_t,lambda_r,acc,f1,auc");
    assert_eq!(rows.len(), 37);
    assert!(rows[1].starts_with("0.1,0.1,") && rows[36].starts_with("0.6,0.6,"));
    assert!(String::from_utf8_lossy(&out.stdout).contains("spread over 36 cells"));
}

#[test]
fn cv_is_reproducible_and_seed_sensitive() {
    let (dir, conf) = workspace();
    let d = dir.path();
    let c = conf.to_str().unwrap();
    for (seed, out) in [("5", "a.csv"), ("5", "b.csv"), ("6", "c.csv")] {
        assert_eq!(code(&tmm(&["cv", "--config", c, "--seed", seed, "--out", out], d)), 0);
    }
    let (a, b, c) = (read(&d.join("a.csv")), read(&d.join("b.csv")), read(&d.join("c.csv")));
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert!(a.starts_with("task,fold,acc,f1,auc\n"));
    assert_eq!(a.lines().count(), 4);
}
