//! One PASS/FAIL line per acceptance criterion; exits non-zero if any fails.

#[path = "../../core/tests/support/mc.rs"]
mod mc;
#[path = "../../core/tests/support/nets.rs"]
mod nets;

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use dpn_core::config::RunConfig;
use dpn_core::dirichlet::{expected_entropy, mutual_information, DirichletParams, UncertaintyScores};
use dpn_core::eval::{auroc, build_report, EvalReport, Measure, Split};
use dpn_core::numeric::{mean, median};
use dpn_core::trainer::{train_baseline, train_dpn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn criterion(n: u32, title: &str, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        outcome(false, format!("panicked: {msg}"))
    });
    let tag = if result.pass { "PASS" } else { "FAIL" };
    println!(
        "criterion {n} {tag} {title} [{:.1}s]: {}",
        start.elapsed().as_secs_f64(),
        result.detail
    );
    result.pass
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let errs = nets::all_losses();
    let elapsed = start.elapsed();
    let ok = errs.iter().all(|(_, e)| *e < nets::MAX_ERROR) && elapsed < Duration::from_secs(10);
    let detail: Vec<String> = errs.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect();
    outcome(
        ok,
        format!("max relative error over 20 networks: {}", detail.join(", ")),
    )
}

fn dirichlet_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    let mut misses = 0;
    for i in 0..50 {
        let k = [2, 3, 10][i % 3];
        // log-uniform over [0.01, 1000]
        let a: Vec<f64> = (0..k).map(|_| 10f64.powf(rng.random_range(-2.0..3.0))).collect();
        let est = mc::entropy_mc(&a, 1_000_000, &mut rng);
        let p = DirichletParams::from_alphas(&a).unwrap();
        let z_h = (expected_entropy(&p) - est.expected_entropy).abs() / est.std_error;
        let z_mi = (mutual_information(&p) - est.mutual_information).abs() / est.std_error;
        let z = z_h.max(z_mi);
        worst = worst.max(z);
        misses += usize::from(z.is_nan() || z >= 3.0);
    }
    let uniform = mutual_information(&DirichletParams::from_alphas(&[1.0; 3]).unwrap());
    let closed = 3f64.ln() - 5.0 / 6.0;
    let elapsed = start.elapsed();
    let ok = misses == 0 && (uniform - closed).abs() < 1e-9 && elapsed < Duration::from_secs(60);
    outcome(
        ok,
        format!(
            "{misses}/50 outside 3 SE (worst {worst:.2} SE); MI(1,1,1) - (ln 3 - 5/6) = {:.1e}",
            uniform - closed
        ),
    )
}

fn brute_auroc(ood: &[f64], id: &[f64]) -> f64 {
    let mut twice = 0u64;
    for &o in ood {
        for &i in id {
            twice += if o > i { 2 } else { u64::from(o == i) };
        }
    }
    twice as f64 / (2 * ood.len() * id.len()) as f64
}

fn auroc_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut mismatches = 0;
    let mut ties = 0;
    for _ in 0..200 {
        let levels = rng.random_range(2..20);
        let (n_ood, n_id) = (rng.random_range(1..=500), rng.random_range(1..=500));
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(0..levels) as f64).collect() };
        let (ood, id) = (draw(n_ood), draw(n_id));
        ties += usize::from(ood.iter().any(|o| id.contains(o)));
        mismatches += usize::from(auroc(&ood, &id).unwrap() != brute_auroc(&ood, &id));
    }
    outcome(
        mismatches == 0,
        format!("{mismatches}/200 instances differ from pair counting ({ties} with cross ties)"),
    )
}

struct SeedRun {
    seed: u64,
    elapsed: Duration,
    frac_all_negative: f64,
    log_precision_gap: f64,
    median_mp_id: f64,
    report: EvalReport,
}

fn default_run(seed: u64) -> SeedRun {
    let start = Instant::now();
    let cfg = RunConfig::default_run().with_seed(seed);
    assert_eq!(cfg.train.epochs, 200);
    let data = cfg.scenario.generate().unwrap();
    let dpn = train_dpn(&data.train_id, &data.train_ood, &cfg.train).unwrap();
    let baseline = train_baseline(&data.train_id, &data.train_ood, &cfg.train).unwrap();
    let scores = |d| -> Vec<UncertaintyScores> {
        dpn.model
            .logits(d)
            .unwrap()
            .iter()
            .map(|z| UncertaintyScores::from_logits(z).unwrap())
            .collect()
    };
    let ood_logits = dpn.model.logits(&data.train_ood).unwrap();
    let negative = ood_logits.iter().filter(|z| z.iter().all(|&v| v < 0.0)).count();
    let id_scores = scores(&data.holdout_id);
    let ood_scores = scores(&data.train_ood);
    let lp = |s: &[UncertaintyScores]| mean(&s.iter().map(|s| s.log_precision).collect::<Vec<_>>());
    let mp: Vec<f64> = id_scores.iter().map(|s| s.max_probability).collect();
    let report = build_report(
        &dpn.model,
        &baseline.model,
        &data.holdout_id,
        &data.holdout_ood,
        &data.unseen_ood,
        seed,
    )
    .unwrap();
    SeedRun {
        seed,
        elapsed: start.elapsed(),
        frac_all_negative: negative as f64 / ood_logits.len() as f64,
        log_precision_gap: lp(&id_scores) - lp(&ood_scores),
        median_mp_id: median(&mp),
        report,
    }
}

fn representation_gap(runs: &[SeedRun]) -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for r in runs {
        let pass = r.frac_all_negative >= 0.9
            && r.log_precision_gap >= 10f64.ln()
            && r.median_mp_id >= 0.9
            && r.elapsed < Duration::from_secs(120);
        ok &= pass;
        parts.push(format!(
            "seed {}: all-negative {:.3}, log-precision gap {:.1}, median MP {:.4}, {:.0}s",
            r.seed,
            r.frac_all_negative,
            r.log_precision_gap,
            r.median_mp_id,
            r.elapsed.as_secs_f64()
        ));
    }
    outcome(ok, parts.join("; "))
}

fn headline(runs: &[SeedRun]) -> Outcome {
    let unseen = |r: &SeedRun, m| r.report.auroc(Split::Unseen, m).unwrap();
    let wins = runs
        .iter()
        .filter(|r| unseen(r, Measure::Precision) > unseen(r, Measure::Baseline))
        .count();
    let high = runs
        .iter()
        .filter(|r| unseen(r, Measure::Precision).max(unseen(r, Measure::MutualInformation)) >= 0.95)
        .count();
    let pairs: Vec<String> = runs
        .iter()
        .map(|r| {
            format!(
                "seed {}: precision {:.4} vs baseline {:.4}",
                r.seed,
                unseen(r, Measure::Precision),
                unseen(r, Measure::Baseline)
            )
        })
        .collect();
    outcome(
        wins >= 4 && high == runs.len(),
        format!(
            "DPN precision beats baseline in {wins}/5 runs (need 4); DPN AUROC >= 0.95 in {high}/5 runs; {}",
            pairs.join(", ")
        ),
    )
}

fn measure_ordering(runs: &[SeedRun]) -> Outcome {
    let mut worst = f64::INFINITY;
    for r in runs {
        for split in Split::ALL {
            let a = |m| r.report.auroc(split, m).unwrap();
            let margin = a(Measure::MutualInformation).max(a(Measure::Precision)) - a(Measure::MaxProbability);
            worst = worst.min(margin);
        }
    }
    outcome(
        worst >= -0.02,
        format!("min over runs and splits of max(MI, precision) - max_probability = {worst:.4}"),
    )
}

fn dpn_bin() -> &'static str {
    env!("CARGO_BIN_EXE_dpn")
}

fn run_dpn(args: &[&str]) {
    let out = Command::new(dpn_bin()).args(args).output().unwrap();
    assert!(
        out.status.success(),
        "dpn {}: {}",
        args.join(" "),
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Lattice `(i, j) -> density` read back from a rendered CSV grid.
fn read_grid(path: &Path, n: usize) -> BTreeMap<(usize, usize), f64> {
    let text = fs::read_to_string(path).unwrap();
    text.lines()
        .skip(1)
        .map(|l| {
            let v: Vec<f64> = l.split(',').map(|x| x.parse().unwrap()).collect();
            let idx = |x: f64| (x * n as f64).round() as usize;
            ((idx(v[0]), idx(v[1])), v[3])
        })
        .collect()
}

fn modes(grid: &BTreeMap<(usize, usize), f64>) -> Vec<(usize, usize)> {
    let steps = [(1, -1), (-1, 1), (1, 0), (-1, 0), (0, 1), (0, -1)];
    grid.iter()
        .filter(|(&(i, j), &d)| {
            steps.iter().all(|&(di, dj): &(i64, i64)| {
                let key = ((i as i64 + di) as usize, (j as i64 + dj) as usize);
                grid.get(&key).is_none_or(|&q| d > q)
            })
        })
        .map(|(&k, _)| k)
        .collect()
}

fn simplex_regimes() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let n = 60;
    let res = n.to_string();
    let render = |name: &str, alphas: &str| {
        let out = dir.path().join(name);
        run_dpn(&[
            "simplex-render",
            "--alphas",
            alphas,
            "--resolution",
            &res,
            "--out",
            out.to_str().unwrap(),
        ]);
        read_grid(&out.join("simplex.csv"), n)
    };
    let point = |(i, j): (usize, usize)| {
        let (x, y) = (i as f64 / n as f64, j as f64 / n as f64);
        [x, y, 1.0 - x - y]
    };
    let dist = |a: [f64; 3], b: [f64; 3]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();

    let corner = render("corner", "30,2,2");
    let top = corner
        .iter()
        .fold(((0, 0), f64::MIN), |b, (&k, &d)| if d > b.1 { (k, d) } else { b });
    let corner_d = dist(point(top.0), [1.0, 0.0, 0.0]);
    let corner_ok = corner_d < 0.1 && modes(&corner).len() == 1;

    let central = render("central", "5,5,5");
    let central_modes = modes(&central);
    let central_ok = central_modes.len() == 1 && dist(point(central_modes[0]), [1.0 / 3.0; 3]) < 1.0 / n as f64;

    let multi = render("multi", "0.1,0.1,0.1");
    let multi_modes = modes(&multi);
    let corners = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    let covered = corners
        .iter()
        .filter(|&&c| multi_modes.iter().any(|&m| dist(point(m), c) < 0.1))
        .count();
    let multi_ok = multi_modes.len() == 3 && covered == 3;

    outcome(
        corner_ok && central_ok && multi_ok,
        format!(
            "(30,2,2) argmax {corner_d:.3} from corner 1; (5,5,5) {} mode(s) at centre; (0.1,0.1,0.1) {} modes covering {covered}/3 corners",
            central_modes.len(),
            multi_modes.len()
        ),
    )
}

fn pipeline(root: &Path) {
    let p = |name: &str| root.join(name).to_str().unwrap().to_string();
    let (data, dpn, base, eval) = (p("data"), p("dpn"), p("baseline"), p("eval"));
    run_dpn(&["gen-data", "--seed", "7", "--out", &data]);
    run_dpn(&["train", "--seed", "7", "--data", &data, "--out", &dpn]);
    run_dpn(&["train", "--baseline", "--seed", "7", "--data", &data, "--out", &base]);
    run_dpn(&[
        "eval",
        "--seed",
        "7",
        "--model",
        &format!("{dpn}/dpn.ckpt"),
        "--baseline-model",
        &format!("{base}/baseline.ckpt"),
        "--data",
        &data,
        "--out",
        &eval,
    ]);
}

fn determinism() -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    pipeline(a.path());
    pipeline(b.path());
    let mut compared = 0;
    let mut differ = Vec::new();
    for sub in ["data", "dpn", "baseline", "eval"] {
        let mut names: Vec<_> = fs::read_dir(a.path().join(sub))
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .filter(|n| n.ends_with(".csv") || n.ends_with(".ckpt"))
            .collect();
        names.sort();
        for name in names {
            let read = |root: &Path| fs::read(root.join(sub).join(&name)).unwrap();
            compared += 1;
            if read(a.path()) != read(b.path()) {
                differ.push(format!("{sub}/{name}"));
            }
        }
    }
    outcome(
        differ.is_empty() && compared == 10,
        format!("{compared} CSV and checkpoint files compared, differing: {differ:?}"),
    )
}

fn main() -> ExitCode {
    let mut ok = true;
    ok &= criterion(1, "gradient suite", gradient_suite);
    ok &= criterion(2, "Dirichlet measures vs Monte-Carlo oracle", dirichlet_oracle);
    ok &= criterion(3, "AUROC vs pair counting", auroc_oracle);
    let start = Instant::now();
    let runs: Vec<SeedRun> = SEEDS.iter().map(|&s| default_run(s)).collect();
    println!(
        "default scenario, {} seeds x 200 epochs trained in {:.0}s",
        runs.len(),
        start.elapsed().as_secs_f64()
    );
    ok &= criterion(4, "representation gap", || representation_gap(&runs));
    ok &= criterion(5, "DPN vs binary baseline on unseen OOD", || headline(&runs));
    ok &= criterion(6, "measure ordering", || measure_ordering(&runs));
    ok &= criterion(7, "simplex regimes", simplex_regimes);
    ok &= criterion(8, "determinism of gen-data + train + eval", determinism);
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
