use std::fs;
use std::path::{Path, PathBuf};
use std::thread;

use dpn_core::config::RunConfig;
use dpn_core::data::{Dataset, ScenarioData};
use dpn_core::dirichlet::DirichletParams;
use dpn_core::eval::{aggregate, aggregate_summary, build_report, write_aggregate_csv, EvalReport};
use dpn_core::render::{write_pgm, SimplexGrid};
use dpn_core::trainer::{train_baseline, train_dpn, Model};

use crate::manifest::{Manifest, MANIFEST_FILE};
use crate::{Cli, CliError, Command, GlobalArgs, Result};

const TRAIN_ID: &str = "train_id.csv";
const TRAIN_OOD: &str = "train_ood.csv";
const HOLDOUT_ID: &str = "holdout_id.csv";
const HOLDOUT_OOD: &str = "holdout_ood.csv";
const UNSEEN_OOD: &str = "unseen_ood.csv";
const DPN_CKPT: &str = "dpn.ckpt";
const BASELINE_CKPT: &str = "baseline.ckpt";
const TRAIN_LOG: &str = "train_log.csv";
const REPORT: &str = "report.csv";
const AGGREGATE: &str = "aggregate.csv";
const SUMMARY: &str = "summary.txt";
const SIMPLEX_PGM: &str = "simplex.pgm";
const SIMPLEX_CSV: &str = "simplex.csv";

pub fn run(cli: &Cli) -> Result<()> {
    let g = &cli.global;
    match &cli.command {
        Command::GenData => gen_data(g),
        Command::Train { data, baseline } => train(g, data, *baseline),
        Command::Eval {
            model: Some(model),
            baseline_model: Some(baseline),
            data: Some(data),
        } => eval_checkpoints(g, model, baseline, data),
        Command::Eval { .. } => eval_pipeline(g),
        Command::SimplexRender {
            alphas,
            model,
            sample,
            resolution,
        } => simplex_render(g, alphas.as_deref(), model.as_deref(), sample.as_deref(), *resolution),
    }
}

fn resolve_config(g: &GlobalArgs) -> Result<RunConfig> {
    let cfg = match &g.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default_run(),
    };
    Ok(match g.seed {
        Some(seed) => cfg.with_seed(seed),
        None => cfg,
    })
}

fn prepare_out(g: &GlobalArgs) -> Result<PathBuf> {
    let dir = g.out_dir()?;
    if dir.exists() {
        if !dir.is_dir() {
            return Err(CliError::Usage(format!("{} is not a directory", dir.display())));
        }
        let nonempty = fs::read_dir(dir).map_err(dpn_core::Error::from)?.next().is_some();
        if nonempty && !g.force {
            return Err(CliError::Usage(format!(
                "output directory {} is not empty (use --force to overwrite)",
                dir.display()
            )));
        }
    }
    fs::create_dir_all(dir).map_err(dpn_core::Error::from)?;
    Ok(dir.to_path_buf())
}

fn num_classes(data: &Dataset) -> usize {
    data.labels().filter_map(|l| l.class()).max().map_or(0, |k| k + 1)
}

fn load(dir: &Path, name: &str) -> Result<(PathBuf, Dataset)> {
    let path = dir.join(name);
    if !path.is_file() {
        return Err(CliError::Usage(format!("missing data file {}", path.display())));
    }
    let data = Dataset::load_csv(&path)?;
    Ok((path, data))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(dpn_core::Error::from)?;
    Ok(())
}

fn gen_data(g: &GlobalArgs) -> Result<()> {
    let cfg = resolve_config(g)?;
    cfg.scenario.validate()?;
    let out = prepare_out(g)?;
    let files = [TRAIN_ID, TRAIN_OOD, HOLDOUT_ID, HOLDOUT_OOD, UNSEEN_OOD];
    let mut manifest = Manifest::new("gen-data", vec![cfg.scenario.seed], cfg.clone()).outputs(&files);
    if let Some(path) = &g.config {
        manifest = manifest.input(path)?;
    }
    manifest.outputs.push(MANIFEST_FILE.into());
    manifest.write(&out)?;
    let data = cfg.scenario.generate()?;
    let sets = [
        &data.train_id,
        &data.train_ood,
        &data.holdout_id,
        &data.holdout_ood,
        &data.unseen_ood,
    ];
    for (name, set) in files.iter().zip(sets) {
        set.save_csv(out.join(name))?;
        println!("{name}: {} rows", set.len());
    }
    Ok(())
}

fn train(g: &GlobalArgs, data_dir: &Path, baseline: bool) -> Result<()> {
    let cfg = resolve_config(g)?;
    let (id_path, train_id) = load(data_dir, TRAIN_ID)?;
    let (ood_path, train_ood) = load(data_dir, TRAIN_OOD)?;
    let k = num_classes(&train_id);
    if k != cfg.train.loss.num_classes() {
        return Err(CliError::Usage(format!(
            "config describes {} classes but {} has {k}",
            cfg.train.loss.num_classes(),
            id_path.display()
        )));
    }
    cfg.train.validate()?;
    let out = prepare_out(g)?;
    let ckpt = if baseline { BASELINE_CKPT } else { DPN_CKPT };
    let command = if baseline { "train --baseline" } else { "train" };
    let mut manifest = Manifest::new(command, vec![cfg.train.seed], cfg.clone())
        .input(&id_path)?
        .input(&ood_path)?
        .outputs(&[ckpt, TRAIN_LOG, MANIFEST_FILE]);
    if let Some(path) = &g.config {
        manifest = manifest.input(path)?;
    }
    manifest.write(&out)?;

    let trained = if baseline {
        train_baseline(&train_id, &train_ood, &cfg.train)?
    } else {
        train_dpn(&train_id, &train_ood, &cfg.train)?
    };
    trained.model.save(out.join(ckpt))?;
    trained.log.write_csv(out.join(TRAIN_LOG))?;
    if let (Some(first), Some(last)) = (trained.log.first(), trained.log.last()) {
        println!(
            "epochs {}: loss {:.5} -> {:.5}, OOD all-negative {:.3}",
            trained.log.records.len(),
            first.loss_total,
            last.loss_total,
            last.frac_ood_all_neg
        );
    }
    Ok(())
}

fn eval_checkpoints(g: &GlobalArgs, model_path: &Path, baseline_path: &Path, data_dir: &Path) -> Result<()> {
    if g.runs.is_some_and(|r| r != 1) {
        return Err(CliError::Usage(
            "--runs applies only to eval without checkpoints".into(),
        ));
    }
    let cfg = resolve_config(g)?;
    let model = Model::load(model_path)?;
    let baseline = Model::load(baseline_path)?;
    let (id_path, holdout_id) = load(data_dir, HOLDOUT_ID)?;
    let (seen_path, holdout_ood) = load(data_dir, HOLDOUT_OOD)?;
    let (unseen_path, unseen_ood) = load(data_dir, UNSEEN_OOD)?;
    let k = num_classes(&holdout_id);
    if model.is_binary() || model.num_outputs() != k {
        return Err(CliError::Usage(format!(
            "{} has {} outputs but the data has {k} classes",
            model_path.display(),
            model.num_outputs()
        )));
    }
    let out = prepare_out(g)?;
    let mut manifest =
        Manifest::new("eval", vec![cfg.train.seed], cfg.clone()).outputs(&[REPORT, SUMMARY, MANIFEST_FILE]);
    for p in [model_path, baseline_path, &id_path, &seen_path, &unseen_path] {
        manifest = manifest.input(p)?;
    }
    manifest.write(&out)?;

    let report = build_report(
        &model,
        &baseline,
        &holdout_id,
        &holdout_ood,
        &unseen_ood,
        cfg.train.seed,
    )?;
    EvalReport::write_csv(std::slice::from_ref(&report), out.join(REPORT))?;
    let summary = report.summary();
    write_text(&out.join(SUMMARY), &summary)?;
    print!("{summary}");
    Ok(())
}

/// Generates data, trains both models and evaluates them for one seed.
fn pipeline_run(cfg: &RunConfig) -> Result<EvalReport> {
    let ScenarioData {
        train_id,
        holdout_id,
        train_ood,
        holdout_ood,
        unseen_ood,
    } = cfg.scenario.generate()?;
    let dpn = train_dpn(&train_id, &train_ood, &cfg.train)?;
    let baseline = train_baseline(&train_id, &train_ood, &cfg.train)?;
    Ok(build_report(
        &dpn.model,
        &baseline.model,
        &holdout_id,
        &holdout_ood,
        &unseen_ood,
        cfg.scenario.seed,
    )?)
}

fn eval_pipeline(g: &GlobalArgs) -> Result<()> {
    let runs = g.runs.unwrap_or(1);
    if runs == 0 {
        return Err(CliError::Usage("--runs must be at least 1".into()));
    }
    let base = resolve_config(g)?;
    base.scenario.validate()?;
    base.train.validate()?;
    let seeds: Vec<u64> = (0..runs as u64).map(|i| base.scenario.seed.wrapping_add(i)).collect();
    let out = prepare_out(g)?;
    let mut manifest =
        Manifest::new("eval", seeds.clone(), base.clone()).outputs(&[REPORT, AGGREGATE, SUMMARY, MANIFEST_FILE]);
    if let Some(path) = &g.config {
        manifest = manifest.input(path)?;
    }
    manifest.write(&out)?;

    // every run is a pure function of its seed
    let reports = thread::scope(|s| {
        let handles: Vec<_> = seeds
            .iter()
            .map(|&seed| {
                let cfg = base.clone().with_seed(seed);
                s.spawn(move || pipeline_run(&cfg))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("evaluation thread panicked"))
            .collect::<Result<Vec<_>>>()
    })?;
    EvalReport::write_csv(&reports, out.join(REPORT))?;
    let rows = aggregate(&reports)?;
    write_aggregate_csv(&rows, out.join(AGGREGATE))?;
    let mut summary: String = reports.iter().map(|r| r.summary() + "\n").collect();
    summary.push_str(&aggregate_summary(&rows));
    write_text(&out.join(SUMMARY), &summary)?;
    print!("{summary}");
    Ok(())
}

fn simplex_render(
    g: &GlobalArgs,
    alphas: Option<&[f64]>,
    model: Option<&Path>,
    sample: Option<&[f64]>,
    resolution: usize,
) -> Result<()> {
    let params = match (alphas, model, sample) {
        (Some(a), _, _) => DirichletParams::from_alphas(a)?,
        (None, Some(m), Some(x)) => {
            let model = Model::load(m)?;
            DirichletParams::from_logits(&model.logits_of(x)?)?
        }
        _ => return Err(CliError::Usage("give --alphas or --model with --sample".into())),
    };
    let grid = SimplexGrid::new(&params, resolution)?;
    let out = prepare_out(g)?;
    write_pgm(&params, resolution, out.join(SIMPLEX_PGM))?;
    grid.write_csv(out.join(SIMPLEX_CSV))?;
    let a = grid.argmax();
    println!(
        "argmax ({:.4}, {:.4}, {:.4}) log-density {:.4}",
        a.point[0], a.point[1], a.point[2], a.log_density
    );
    let modes = grid.local_maxima();
    println!("{} local maxima", modes.len());
    for m in modes {
        println!("mode ({:.4}, {:.4}, {:.4})", m.point[0], m.point[1], m.point[2]);
    }
    Ok(())
}
