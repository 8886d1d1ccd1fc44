use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const SMALL: &str = "\
class0.mean = -3, 0
class0.cov = 0.5, 0.5
class0.count = 100
class1.mean = 3, 0
class1.cov = 0.5, 0.5
class1.count = 100
train_ood.kind = ring
train_ood.center = 0, 0
train_ood.radius = 10
train_ood.width = 1
train_ood.count = 100
test_ood.kind = ring
test_ood.center = 0, 0
test_ood.radius = 15
test_ood.width = 1
test_ood.count = 100
epochs = 5
hidden = 8
";

fn dpn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dpn")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

struct Work {
    dir: TempDir,
}

impl Work {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("small.cfg"), SMALL).unwrap();
        Self { dir }
    }

    fn path(&self, name: &str) -> String {
        p(&self.dir.path().join(name)).to_string()
    }

    fn config(&self, name: &str, text: &str) -> String {
        fs::write(self.dir.path().join(name), text).unwrap();
        self.path(name)
    }

    fn run_ok(&self, args: &[&str]) -> String {
        let out = dpn(args);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        String::from_utf8(out.stdout).unwrap()
    }

    fn small_data(&self, seed: &str) -> String {
        let data = self.path(&format!("data{seed}"));
        self.run_ok(&[
            "gen-data",
            "--config",
            &self.path("small.cfg"),
            "--seed",
            seed,
            "--out",
            &data,
        ]);
        data
    }
}

fn rows(path: &str) -> usize {
    fs::read_to_string(path).unwrap().lines().count() - 1
}

#[test]
fn gen_data_writes_documented_splits() {
    let w = Work::new();
    let out = w.path("d");
    w.run_ok(&["gen-data", "--out", &out]);
    for (name, n) in [
        ("train_id.csv", 2700),
        ("train_ood.csv", 900),
        ("holdout_id.csv", 300),
        ("holdout_ood.csv", 100),
        ("unseen_ood.csv", 1000),
    ] {
        assert_eq!(rows(&format!("{out}/{name}")), n, "{name}");
    }
    let manifest = fs::read_to_string(format!("{out}/manifest.txt")).unwrap();
    assert!(manifest.contains("command = gen-data") && manifest.contains("[config]"));
}

#[test]
fn gen_data_is_deterministic_per_seed() {
    let w = Work::new();
    let (a, b, c) = (w.path("a"), w.path("b"), w.path("c"));
    w.run_ok(&["gen-data", "--seed", "4", "--out", &a]);
    w.run_ok(&["gen-data", "--seed", "4", "--out", &b]);
    w.run_ok(&["gen-data", "--seed", "5", "--out", &c]);
    for name in [
        "train_id.csv",
        "train_ood.csv",
        "holdout_id.csv",
        "holdout_ood.csv",
        "unseen_ood.csv",
    ] {
        let read = |d: &str| fs::read(format!("{d}/{name}")).unwrap();
        assert_eq!(read(&a), read(&b), "{name}");
        assert_ne!(read(&a), read(&c), "{name}");
    }
}

#[test]
fn invalid_configs_are_usage_errors() {
    let w = Work::new();
    let same = w.config(
        "same.cfg",
        "train_ood.kind = ring\ntrain_ood.center = 0, 0\ntrain_ood.radius = 22\ntrain_ood.width = 1\n",
    );
    let out = dpn(&["gen-data", "--config", &same, "--out", &w.path("x")]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("must differ"));

    let unknown = w.config("unknown.cfg", "epochs = 3\nepoch = 4\n");
    let out = dpn(&["gen-data", "--config", &unknown, "--out", &w.path("y")]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown key `epoch`"));

    assert_eq!(
        code(&dpn(&[
            "gen-data",
            "--config",
            &w.path("nope.cfg"),
            "--out",
            &w.path("z")
        ])),
        1
    );
    assert_eq!(code(&dpn(&["gen-data"])), 1);
}

#[test]
fn clap_errors_exit_with_one_and_help_with_zero() {
    assert_eq!(code(&dpn(&["frobnicate"])), 1);
    assert_eq!(code(&dpn(&["gen-data", "--seed", "minus"])), 1);
    assert_eq!(code(&dpn(&["--help"])), 0);
}

#[test]
fn train_writes_artifacts_and_depends_on_seed() {
    let w = Work::new();
    let data = w.small_data("1");
    let cfg = w.path("small.cfg");
    let (m1, m2) = (w.path("m1"), w.path("m2"));
    let stdout = w.run_ok(&["train", "--config", &cfg, "--data", &data, "--seed", "1", "--out", &m1]);
    assert!(stdout.contains("epochs 5"));
    for name in ["dpn.ckpt", "train_log.csv", "manifest.txt"] {
        assert!(Path::new(&format!("{m1}/{name}")).is_file(), "{name}");
    }
    assert_eq!(rows(&format!("{m1}/train_log.csv")), 5);
    let manifest = fs::read_to_string(format!("{m1}/manifest.txt")).unwrap();
    assert_eq!(manifest.matches("sha256:").count(), 3);

    w.run_ok(&["train", "--config", &cfg, "--data", &data, "--seed", "2", "--out", &m2]);
    assert_ne!(
        fs::read(format!("{m1}/dpn.ckpt")).unwrap(),
        fs::read(format!("{m2}/dpn.ckpt")).unwrap()
    );
}

#[test]
fn nonempty_output_needs_force() {
    let w = Work::new();
    let data = w.small_data("1");
    let cfg = w.path("small.cfg");
    let m = w.path("m");
    let args = ["train", "--config", &cfg, "--data", &data, "--out", &m];
    w.run_ok(&args);
    let before = fs::read(format!("{m}/dpn.ckpt")).unwrap();
    let out = dpn(&args);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("--force"));
    let mut forced = args.to_vec();
    forced.push("--force");
    w.run_ok(&forced);
    assert_eq!(fs::read(format!("{m}/dpn.ckpt")).unwrap(), before);
}

#[test]
fn train_rejects_missing_data_and_class_mismatch() {
    let w = Work::new();
    let out = dpn(&["train", "--data", &w.path("empty"), "--out", &w.path("m")]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing data file"));

    // default config has 3 classes, the small data 2
    let data = w.small_data("1");
    let out = dpn(&["train", "--data", &data, "--out", &w.path("m")]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("classes"));
}

#[test]
fn divergence_exits_with_two() {
    let w = Work::new();
    let data = w.small_data("1");
    let cfg = w.config("wild.cfg", &format!("{SMALL}optimizer = sgd\nlearning_rate = 1e300\n"));
    let out = dpn(&["train", "--config", &cfg, "--data", &data, "--out", &w.path("m")]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("diverged"));
}

#[test]
fn eval_reports_the_measure_split_grid() {
    let w = Work::new();
    let data = w.small_data("1");
    let cfg = w.path("small.cfg");
    let (m, b, e) = (w.path("m"), w.path("b"), w.path("e"));
    w.run_ok(&["train", "--config", &cfg, "--data", &data, "--out", &m]);
    w.run_ok(&["train", "--baseline", "--config", &cfg, "--data", &data, "--out", &b]);
    let stdout = w.run_ok(&[
        "eval",
        "--model",
        &format!("{m}/dpn.ckpt"),
        "--baseline-model",
        &format!("{b}/baseline.ckpt"),
        "--data",
        &data,
        "--out",
        &e,
    ]);
    assert!(stdout.contains("mutual_information"));
    let report = fs::read_to_string(format!("{e}/report.csv")).unwrap();
    let mut cells: Vec<(String, String)> = report
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            let auroc: f64 = f[3].parse().unwrap();
            assert!((0.0..=1.0).contains(&auroc));
            (f[1].to_string(), f[2].to_string())
        })
        .collect();
    cells.sort();
    let mut expected = Vec::new();
    for split in ["seen", "unseen"] {
        for measure in ["baseline", "max_probability", "mutual_information", "precision"] {
            expected.push((split.to_string(), measure.to_string()));
        }
    }
    assert_eq!(cells, expected);
    assert!(Path::new(&format!("{e}/summary.txt")).is_file());

    // the default scenario has three classes, the small model two
    let big = w.path("big");
    w.run_ok(&["gen-data", "--out", &big]);
    let out = dpn(&[
        "eval",
        "--model",
        &format!("{m}/dpn.ckpt"),
        "--baseline-model",
        &format!("{b}/baseline.ckpt"),
        "--data",
        &big,
        "--out",
        &w.path("e2"),
    ]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("outputs but the data has 3 classes"));
}

#[test]
fn eval_runs_aggregate_across_seeds() {
    let w = Work::new();
    let e = w.path("e");
    let stdout = w.run_ok(&[
        "eval",
        "--config",
        &w.path("small.cfg"),
        "--runs",
        "3",
        "--seed",
        "10",
        "--out",
        &e,
    ]);
    assert!(stdout.contains("AUROC over 3 runs (mean ± std)"));
    let report = fs::read_to_string(format!("{e}/report.csv")).unwrap();
    assert_eq!(report.lines().count(), 1 + 3 * 8);
    for seed in ["10", "11", "12"] {
        assert_eq!(report.lines().filter(|l| l.starts_with(&format!("{seed},"))).count(), 8);
    }
    let agg = fs::read_to_string(format!("{e}/aggregate.csv")).unwrap();
    let mut lines = agg.lines();
    assert_eq!(lines.next(), Some("split,measure,runs,auroc_mean,auroc_std"));
    let body: Vec<&str> = lines.collect();
    assert_eq!(body.len(), 8);
    assert!(body.iter().all(|l| l.split(',').nth(2) == Some("3")));
    let manifest = fs::read_to_string(format!("{e}/manifest.txt")).unwrap();
    assert!(manifest.contains("seeds = 10, 11, 12"));
}

#[test]
fn simplex_render_outputs() {
    let w = Work::new();
    let u = w.path("u");
    let stdout = w.run_ok(&["simplex-render", "--alphas", "1,1,1", "--resolution", "32", "--out", &u]);
    assert!(stdout.contains("0 local maxima"));
    let img = fs::read(format!("{u}/simplex.pgm")).unwrap();
    let header = b"P5\n32 28\n255\n";
    assert!(img.starts_with(header));
    let inside: Vec<u8> = img[header.len()..].iter().copied().filter(|&v| v != 0).collect();
    assert!(!inside.is_empty() && inside.iter().all(|&v| v == inside[0]));
    assert_eq!(rows(&format!("{u}/simplex.csv")), 31 * 30 / 2);

    for (args, dir) in [
        (vec!["--alphas", "1,1"], "k2"),
        (vec!["--alphas", "1,-1,1"], "neg"),
        (vec!["--alphas", "1,1,1", "--resolution", "15"], "small"),
    ] {
        let mut full = vec!["simplex-render"];
        full.extend(args);
        let out = w.path(dir);
        full.extend(["--out", &out]);
        assert_eq!(code(&dpn(&full)), 1, "{dir}");
    }
}

#[test]
fn simplex_render_from_checkpoint() {
    let w = Work::new();
    let data = w.small_data("1");
    let cfg = w.config(
        "three.cfg",
        &format!("{SMALL}class2.mean = 0, 4\nclass2.cov = 0.5, 0.5\nclass2.count = 100\n"),
    );
    let data3 = w.path("data3");
    w.run_ok(&["gen-data", "--config", &cfg, "--out", &data3]);
    let m = w.path("m");
    w.run_ok(&["train", "--config", &cfg, "--data", &data3, "--out", &m]);
    let stdout = w.run_ok(&[
        "simplex-render",
        "--model",
        &format!("{m}/dpn.ckpt"),
        "--sample",
        "-3,0",
        "--resolution",
        "24",
        "--out",
        &w.path("s"),
    ]);
    assert!(stdout.starts_with("argmax"));

    // a two-class model cannot be rendered on the 2-simplex
    let m2 = w.path("m2");
    w.run_ok(&["train", "--config", &w.path("small.cfg"), "--data", &data, "--out", &m2]);
    let out = dpn(&[
        "simplex-render",
        "--model",
        &format!("{m2}/dpn.ckpt"),
        "--sample",
        "0,0",
        "--out",
        &w.path("s2"),
    ]);
    assert_eq!(code(&out), 1);
}
