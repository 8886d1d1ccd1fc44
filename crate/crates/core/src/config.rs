//! Flat `key = value` run configuration.
//!
//! One pair per line, `#` starts a comment, unknown keys are errors. Lists
//! are comma separated. Every key is optional and falls back to the
//! default scenario and training settings.
//!
//! ```text
//! seed = 3
//! class0.mean = 0, 4
//! class0.cov = 1, 1          # diagonal, or D*D values row-major
//! class0.count = 1000
//! train_ood.kind = box       # box | ring | gaussian
//! train_ood.min = -14, -14
//! train_ood.max = 14, 14
//! train_ood.hole = 9
//! test_ood.kind = ring
//! test_ood.center = 0, 0
//! test_ood.radius = 22
//! test_ood.width = 1
//! epochs = 200
//! hidden = 64, 64
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::autonet::{Activation, OptimizerKind};
use crate::data::{Covariance, GaussianCluster, OodSource, ScenarioSpec};
use crate::error::{Error, Result};
use crate::losses::LossConfig;
use crate::trainer::TrainConfig;

const SCALAR_KEYS: &[&str] = &[
    "seed",
    "holdout_fraction",
    "epochs",
    "batch_in",
    "batch_out",
    "learning_rate",
    "optimizer",
    "momentum",
    "hidden",
    "activation",
    "lambda_in",
    "lambda_out",
    "gamma",
];
const CLASS_FIELDS: &[&str] = &["mean", "cov", "count"];
const OOD_FIELDS: &[&str] = &[
    "kind", "count", "min", "max", "hole", "center", "radius", "width", "mean", "std",
];

/// Scenario and training settings of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub scenario: ScenarioSpec,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn default_run() -> Self {
        let scenario = ScenarioSpec::default();
        let train = TrainConfig::new(scenario.num_classes()).expect("default class count is valid");
        Self { scenario, train }
    }

    /// Sets the seed of both data generation and training.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.scenario.seed = seed;
        self.train.seed = seed;
        self
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&std::fs::read_to_string(path)?, path)
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let err = |line: usize, msg: String| Error::Parse {
            path: origin.to_path_buf(),
            line,
            msg,
        };
        let mut pairs: BTreeMap<String, (usize, String)> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err(i + 1, format!("expected `key = value`, got `{line}`")))?;
            let (k, v) = (k.trim().to_string(), v.trim().to_string());
            if !known_key(&k) {
                return Err(err(i + 1, format!("unknown key `{k}`")));
            }
            if pairs.insert(k.clone(), (i + 1, v)).is_some() {
                return Err(err(i + 1, format!("duplicate key `{k}`")));
            }
        }
        let cfg = Fields { pairs: &pairs, origin };
        cfg.build().map_err(|e| match e {
            Error::InvalidArgument(m) | Error::DimensionMismatch(m) => err(0, m),
            other => other,
        })
    }

    /// Canonical text form with every value materialised; parsing it
    /// yields the same configuration.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let list = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(", ");
        let sc = &self.scenario;
        let _ = writeln!(s, "seed = {}", sc.seed);
        let _ = writeln!(s, "holdout_fraction = {}", sc.holdout_fraction);
        for (k, c) in sc.clusters.iter().enumerate() {
            let _ = writeln!(s, "class{k}.mean = {}", list(&c.mean));
            let cov = match &c.covariance {
                Covariance::Diagonal(v) | Covariance::Full(v) => v,
            };
            let _ = writeln!(s, "class{k}.cov = {}", list(cov));
            let _ = writeln!(s, "class{k}.count = {}", c.count);
        }
        for (prefix, src, count) in [
            ("train_ood", &sc.train_ood, sc.train_ood_count),
            ("test_ood", &sc.test_ood, sc.test_ood_count),
        ] {
            let _ = writeln!(s, "{prefix}.kind = {}", src.kind());
            let _ = writeln!(s, "{prefix}.count = {count}");
            match src {
                OodSource::UniformBox { min, max, hole } => {
                    let _ = writeln!(s, "{prefix}.min = {}", list(min));
                    let _ = writeln!(s, "{prefix}.max = {}", list(max));
                    let _ = writeln!(s, "{prefix}.hole = {hole}");
                }
                OodSource::Ring { center, radius, width } => {
                    let _ = writeln!(s, "{prefix}.center = {}", list(center));
                    let _ = writeln!(s, "{prefix}.radius = {radius}");
                    let _ = writeln!(s, "{prefix}.width = {width}");
                }
                OodSource::ShiftedGaussian { mean, std } => {
                    let _ = writeln!(s, "{prefix}.mean = {}", list(mean));
                    let _ = writeln!(s, "{prefix}.std = {std}");
                }
            }
        }
        let t = &self.train;
        let _ = writeln!(s, "epochs = {}", t.epochs);
        let _ = writeln!(s, "batch_in = {}", t.batch_in);
        let _ = writeln!(s, "batch_out = {}", t.batch_out);
        let _ = writeln!(s, "learning_rate = {}", t.learning_rate);
        match t.optimizer {
            OptimizerKind::Adam { .. } => {
                let _ = writeln!(s, "optimizer = adam");
            }
            OptimizerKind::SgdMomentum { momentum } => {
                let _ = writeln!(s, "optimizer = sgd");
                let _ = writeln!(s, "momentum = {momentum}");
            }
        }
        let hidden: Vec<String> = t.hidden.iter().map(usize::to_string).collect();
        let _ = writeln!(s, "hidden = {}", hidden.join(", "));
        let _ = writeln!(s, "activation = {}", t.activation);
        let _ = writeln!(s, "lambda_in = {}", t.loss.lambda_in());
        let _ = writeln!(s, "lambda_out = {}", t.loss.lambda_out());
        let _ = writeln!(s, "gamma = {}", t.loss.gamma());
        s
    }
}

fn known_key(k: &str) -> bool {
    if SCALAR_KEYS.contains(&k) {
        return true;
    }
    let Some((head, field)) = k.split_once('.') else {
        return false;
    };
    match head {
        "train_ood" | "test_ood" => OOD_FIELDS.contains(&field),
        _ => {
            head.strip_prefix("class")
                .is_some_and(|n| !n.is_empty() && n.bytes().all(|b| b.is_ascii_digit()))
                && CLASS_FIELDS.contains(&field)
        }
    }
}

struct Fields<'a> {
    pairs: &'a BTreeMap<String, (usize, String)>,
    origin: &'a Path,
}

impl Fields<'_> {
    fn raw(&self, key: &str) -> Option<&(usize, String)> {
        self.pairs.get(key)
    }

    fn bad(&self, key: &str, msg: impl std::fmt::Display) -> Error {
        let (line, value) = self.raw(key).cloned().unwrap_or_default();
        Error::Parse {
            path: self.origin.to_path_buf(),
            line,
            msg: format!("{key} = `{value}`: {msg}"),
        }
    }

    fn get<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.raw(key) {
            None => Ok(None),
            Some((_, v)) => v.parse().map(Some).map_err(|_| self.bad(key, "cannot parse value")),
        }
    }

    fn list<T: std::str::FromStr>(&self, key: &str) -> Result<Option<Vec<T>>> {
        match self.raw(key) {
            None => Ok(None),
            Some((_, v)) => v
                .split(',')
                .map(|t| t.trim().parse())
                .collect::<std::result::Result<Vec<T>, _>>()
                .map(Some)
                .map_err(|_| self.bad(key, "cannot parse list")),
        }
    }

    fn build(&self) -> Result<RunConfig> {
        let mut run = RunConfig::default_run();
        if let Some(seed) = self.get::<u64>("seed")? {
            run = run.with_seed(seed);
        }
        let sc = &mut run.scenario;
        if let Some(f) = self.get("holdout_fraction")? {
            sc.holdout_fraction = f;
        }
        self.clusters(sc)?;
        self.ood("train_ood", &mut sc.train_ood, &mut sc.train_ood_count)?;
        self.ood("test_ood", &mut sc.test_ood, &mut sc.test_ood_count)?;
        sc.validate()?;

        let t = &mut run.train;
        if let Some(v) = self.get("epochs")? {
            t.epochs = v;
        }
        if let Some(v) = self.get("batch_in")? {
            t.batch_in = v;
        }
        if let Some(v) = self.get("batch_out")? {
            t.batch_out = v;
        }
        if let Some(v) = self.get("learning_rate")? {
            t.learning_rate = v;
        }
        if let Some(v) = self.get::<OptimizerKind>("optimizer")? {
            t.optimizer = v;
        }
        if let Some(m) = self.get::<f64>("momentum")? {
            match &mut t.optimizer {
                OptimizerKind::SgdMomentum { momentum } if (0.0..1.0).contains(&m) => *momentum = m,
                OptimizerKind::SgdMomentum { .. } => return Err(self.bad("momentum", "must be in [0,1)")),
                OptimizerKind::Adam { .. } => return Err(self.bad("momentum", "only valid with optimizer = sgd")),
            }
        }
        if let Some(v) = self.list("hidden")? {
            t.hidden = v;
        }
        if let Some(v) = self.get::<Activation>("activation")? {
            t.activation = v;
        }
        let lambda_in = self.get("lambda_in")?.unwrap_or(t.loss.lambda_in());
        let lambda_out = self.get("lambda_out")?.unwrap_or(t.loss.lambda_out());
        let gamma = self.get("gamma")?.unwrap_or(t.loss.gamma());
        t.loss = LossConfig::new(lambda_in, lambda_out, gamma, run.scenario.num_classes())?;
        t.validate()?;
        Ok(run)
    }

    fn clusters(&self, sc: &mut ScenarioSpec) -> Result<()> {
        let mut ids: Vec<usize> = self
            .pairs
            .keys()
            .filter_map(|k| k.strip_prefix("class")?.split_once('.')?.0.parse().ok())
            .collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.is_empty() {
            return Ok(());
        }
        if ids != (0..ids.len()).collect::<Vec<_>>() {
            return Err(Error::invalid(format!("class indices must be 0..K-1, got {ids:?}")));
        }
        let mut clusters = Vec::with_capacity(ids.len());
        for k in ids {
            let mean: Vec<f64> = self
                .list(&format!("class{k}.mean"))?
                .ok_or_else(|| Error::invalid(format!("class{k}.mean is required")))?;
            let d = mean.len();
            let cov: Vec<f64> = self.list(&format!("class{k}.cov"))?.unwrap_or_else(|| vec![1.0; d]);
            let covariance = if cov.len() == d {
                Covariance::Diagonal(cov)
            } else if cov.len() == d * d {
                Covariance::Full(cov)
            } else {
                return Err(self.bad(&format!("class{k}.cov"), format!("need {d} or {} values", d * d)));
            };
            let count = self.get(&format!("class{k}.count"))?.unwrap_or(1000);
            clusters.push(GaussianCluster {
                mean,
                covariance,
                count,
            });
        }
        sc.clusters = clusters;
        Ok(())
    }

    fn ood(&self, prefix: &str, source: &mut OodSource, count: &mut usize) -> Result<()> {
        let key = |f: &str| format!("{prefix}.{f}");
        if let Some(n) = self.get(&key("count"))? {
            *count = n;
        }
        let kind: Option<String> = self.get(&key("kind"))?;
        let touched = OOD_FIELDS[2..].iter().any(|f| self.raw(&key(f)).is_some());
        if kind.is_none() && !touched {
            return Ok(());
        }
        let kind = kind.unwrap_or_else(|| source.kind().to_string());
        let allowed: &[&str] = match kind.as_str() {
            "box" => &["min", "max", "hole"],
            "ring" => &["center", "radius", "width"],
            "gaussian" => &["mean", "std"],
            _ => return Err(self.bad(&key("kind"), "expected box, ring or gaussian")),
        };
        if let Some(f) = OOD_FIELDS[2..]
            .iter()
            .find(|f| !allowed.contains(f) && self.raw(&key(f)).is_some())
        {
            return Err(self.bad(&key(f), format!("not a {kind} parameter")));
        }
        let need = |f: &str| Error::invalid(format!("{} is required for kind {kind}", key(f)));
        *source = match kind.as_str() {
            "box" => OodSource::UniformBox {
                min: self.list(&key("min"))?.ok_or_else(|| need("min"))?,
                max: self.list(&key("max"))?.ok_or_else(|| need("max"))?,
                hole: self.get(&key("hole"))?.unwrap_or(0.0),
            },
            "ring" => OodSource::Ring {
                center: self.list(&key("center"))?.ok_or_else(|| need("center"))?,
                radius: self.get(&key("radius"))?.ok_or_else(|| need("radius"))?,
                width: self.get(&key("width"))?.unwrap_or(0.0),
            },
            _ => OodSource::ShiftedGaussian {
                mean: self.list(&key("mean"))?.ok_or_else(|| need("mean"))?,
                std: self.get(&key("std"))?.ok_or_else(|| need("std"))?,
            },
        };
        Ok(())
    }
}
