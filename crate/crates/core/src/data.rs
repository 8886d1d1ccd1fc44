//! Labeled datasets, synthetic generators, holdout splitting and CSV IO.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::autonet::Tensor;
use crate::error::{Error, Result};

pub const OOD_TOKEN: &str = "OOD";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Class(usize),
    Ood,
}

impl Label {
    pub fn class(self) -> Option<usize> {
        match self {
            Label::Class(k) => Some(k),
            Label::Ood => None,
        }
    }

    pub fn is_ood(self) -> bool {
        self == Label::Ood
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Class(k) => write!(f, "{k}"),
            Label::Ood => f.write_str(OOD_TOKEN),
        }
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == OOD_TOKEN {
            return Ok(Label::Ood);
        }
        s.parse()
            .map(Label::Class)
            .map_err(|_| Error::invalid(format!("unknown label token `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub features: Vec<f64>,
    pub label: Label,
}

/// A list of samples sharing one feature dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dim: usize,
    samples: Vec<LabeledSample>,
}

impl Dataset {
    pub fn new(dim: usize, samples: Vec<LabeledSample>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("feature dimension must be positive"));
        }
        for (i, s) in samples.iter().enumerate() {
            if s.features.len() != dim {
                return Err(Error::dims(format!(
                    "sample {i} has {} features, expected {dim}",
                    s.features.len()
                )));
            }
            if s.features.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("sample {i} has a non-finite feature")));
            }
        }
        Ok(Self { dim, samples })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[LabeledSample] {
        &self.samples
    }

    pub fn iter(&self) -> impl Iterator<Item = &LabeledSample> {
        self.samples.iter()
    }

    pub fn labels(&self) -> impl Iterator<Item = Label> + '_ {
        self.samples.iter().map(|s| s.label)
    }

    /// Number of samples per label, in label order.
    pub fn label_counts(&self) -> BTreeMap<Label, usize> {
        let mut counts = BTreeMap::new();
        for l in self.labels() {
            *counts.entry(l).or_insert(0) += 1;
        }
        counts
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            dim: self.dim,
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
        }
    }

    pub fn concat(&self, other: &Dataset) -> Result<Self> {
        if other.dim != self.dim {
            return Err(Error::dims(format!("concat {} with {} features", self.dim, other.dim)));
        }
        let mut samples = self.samples.clone();
        samples.extend_from_slice(&other.samples);
        Ok(Self { dim: self.dim, samples })
    }

    /// N×D feature matrix.
    pub fn features(&self) -> Result<Tensor> {
        self.features_of(&(0..self.len()).collect::<Vec<_>>())
    }

    /// Feature matrix of the given rows, in the given order.
    pub fn features_of(&self, rows: &[usize]) -> Result<Tensor> {
        if rows.is_empty() {
            return Err(Error::Empty("no rows selected".into()));
        }
        let mut data = Vec::with_capacity(rows.len() * self.dim);
        for &r in rows {
            data.extend_from_slice(&self.samples[r].features);
        }
        Tensor::matrix(rows.len(), self.dim, data)
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header: Vec<String> = (0..self.dim).map(|i| format!("f{i}")).collect();
        header.push("label".into());
        w.write_record(&header)?;
        for s in &self.samples {
            let mut rec: Vec<String> = s.features.iter().map(|v| v.to_string()).collect();
            rec.push(s.label.to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let err = |line: usize, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let mut r = csv::ReaderBuilder::new().flexible(true).from_path(path)?;
        let header = r.headers()?.clone();
        let dim = header.len().saturating_sub(1);
        let well_formed = dim > 0
            && header.get(dim) == Some("label")
            && (0..dim).all(|i| header.get(i) == Some(format!("f{i}").as_str()));
        if !well_formed {
            return Err(err(1, "header must be f0,...,f{D-1},label".into()));
        }
        let mut samples = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let line = i + 2;
            let rec = rec?;
            if rec.len() != dim + 1 {
                return Err(err(line, format!("expected {} fields, got {}", dim + 1, rec.len())));
            }
            let features = (0..dim)
                .map(|j| {
                    let tok = rec[j].trim();
                    tok.parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .ok_or_else(|| err(line, format!("bad number `{tok}`")))
                })
                .collect::<Result<Vec<_>>>()?;
            let label = rec[dim].parse().map_err(|e: Error| err(line, e.to_string()))?;
            samples.push(LabeledSample { features, label });
        }
        Self::new(dim, samples)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Covariance {
    Diagonal(Vec<f64>),
    /// Row-major D×D matrix.
    Full(Vec<f64>),
}

impl Covariance {
    /// Lower Cholesky factor as a dense row-major matrix.
    fn cholesky(&self, dim: usize) -> Result<DMatrix<f64>> {
        match self {
            Covariance::Diagonal(v) => {
                if v.len() != dim {
                    return Err(Error::dims(format!("{} variances for dimension {dim}", v.len())));
                }
                if let Some(bad) = v.iter().find(|&&x| !(x > 0.0 && x.is_finite())) {
                    return Err(Error::invalid(format!("variance must be positive, got {bad}")));
                }
                Ok(DMatrix::from_diagonal(&DVector::from_iterator(
                    dim,
                    v.iter().map(|x| x.sqrt()),
                )))
            }
            Covariance::Full(m) => {
                if m.len() != dim * dim {
                    return Err(Error::dims(format!(
                        "{} covariance entries for dimension {dim}",
                        m.len()
                    )));
                }
                let mat = DMatrix::from_row_slice(dim, dim, m);
                if (&mat - mat.transpose()).abs().max() > 1e-12 * mat.abs().max() {
                    return Err(Error::invalid("covariance is not symmetric"));
                }
                mat.cholesky()
                    .map(|c| c.l())
                    .ok_or_else(|| Error::invalid("covariance is not positive definite"))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianCluster {
    pub mean: Vec<f64>,
    pub covariance: Covariance,
    pub count: usize,
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn normal_vec(rng: &mut impl Rng, dim: usize) -> DVector<f64> {
    DVector::from_iterator(dim, (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

/// One Gaussian cluster per class; cluster `k` gets label `Class(k)`.
pub fn generate_gaussians(clusters: &[GaussianCluster], seed: u64) -> Result<Dataset> {
    let first = clusters.first().ok_or_else(|| Error::Empty("no clusters".into()))?;
    let dim = first.mean.len();
    for (i, a) in clusters.iter().enumerate() {
        if a.mean.len() != dim {
            return Err(Error::dims(format!("cluster {i} mean has dimension {}", a.mean.len())));
        }
        if clusters[..i].iter().any(|b| b.mean == a.mean) {
            return Err(Error::invalid(format!("cluster {i} repeats an earlier mean")));
        }
    }
    let mut rng = rng_for(seed, 0);
    let mut samples = Vec::with_capacity(clusters.iter().map(|c| c.count).sum());
    for (k, c) in clusters.iter().enumerate() {
        let l = c.covariance.cholesky(dim)?;
        let mu = DVector::from_column_slice(&c.mean);
        for _ in 0..c.count {
            let x = &mu + &l * normal_vec(&mut rng, dim);
            samples.push(LabeledSample {
                features: x.iter().copied().collect(),
                label: Label::Class(k),
            });
        }
    }
    Dataset::new(dim, samples)
}

#[derive(Debug, Clone, PartialEq)]
pub enum OodSource {
    /// Uniform direction, radius uniform in `[radius − width, radius + width]`.
    Ring { center: Vec<f64>, radius: f64, width: f64 },
    /// Uniform over the box minus the ball of radius `hole` around the box
    /// centre; `hole = 0` keeps the whole box.
    UniformBox { min: Vec<f64>, max: Vec<f64>, hole: f64 },
    /// Isotropic Gaussian.
    ShiftedGaussian { mean: Vec<f64>, std: f64 },
}

impl OodSource {
    pub fn kind(&self) -> &'static str {
        match self {
            OodSource::Ring { .. } => "ring",
            OodSource::UniformBox { .. } => "box",
            OodSource::ShiftedGaussian { .. } => "gaussian",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            OodSource::Ring { center, .. } => center.len(),
            OodSource::UniformBox { min, .. } => min.len(),
            OodSource::ShiftedGaussian { mean, .. } => mean.len(),
        }
    }

    fn validate(&self) -> Result<()> {
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        let ok = match self {
            OodSource::Ring { center, radius, width } => {
                !center.is_empty()
                    && finite(center)
                    && *radius > 0.0
                    && *width >= 0.0
                    && width < radius
                    && radius.is_finite()
            }
            OodSource::UniformBox { min, max, hole } => {
                !min.is_empty()
                    && min.len() == max.len()
                    && finite(min)
                    && finite(max)
                    && min.iter().zip(max).all(|(a, b)| a < b)
                    // keeps the box corners reachable for rejection sampling
                    && *hole >= 0.0
                    && min.iter().zip(max).all(|(a, b)| *hole < 0.5 * (b - a))
            }
            OodSource::ShiftedGaussian { mean, std } => {
                !mean.is_empty() && finite(mean) && *std > 0.0 && std.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid {} parameters: {self:?}", self.kind())))
        }
    }
}

pub fn generate_ood(source: &OodSource, count: usize, seed: u64) -> Result<Dataset> {
    source.validate()?;
    let dim = source.dim();
    let mut rng = rng_for(seed, 0);
    let mut samples = Vec::with_capacity(count);
    for _ in 0..count {
        let features = match source {
            OodSource::Ring { center, radius, width } => {
                let dir = loop {
                    let v = normal_vec(&mut rng, dim);
                    let n = v.norm();
                    if n > 1e-12 {
                        break v / n;
                    }
                };
                let r = if *width > 0.0 {
                    rng.random_range(radius - width..=radius + width)
                } else {
                    *radius
                };
                center.iter().zip(dir.iter()).map(|(c, d)| c + r * d).collect()
            }
            OodSource::UniformBox { min, max, hole } => loop {
                let x: Vec<f64> = min.iter().zip(max).map(|(&a, &b)| rng.random_range(a..b)).collect();
                let r2: f64 = x
                    .iter()
                    .zip(min.iter().zip(max))
                    .map(|(v, (a, b))| (v - 0.5 * (a + b)).powi(2))
                    .sum();
                if r2 >= hole * hole {
                    break x;
                }
            },
            OodSource::ShiftedGaussian { mean, std } => mean
                .iter()
                .map(|m| m + std * rng.sample::<f64, _>(StandardNormal))
                .collect(),
        };
        samples.push(LabeledSample {
            features,
            label: Label::Ood,
        });
    }
    Dataset::new(dim, samples)
}

/// Stratified split into `(train, holdout)`.
///
/// The holdout holds `round(fraction·N)` samples. Each label group
/// contributes `floor(fraction·n_g)` plus one extra for the groups with the
/// largest remainders, so per-label proportions are kept within one sample.
/// Both parts keep the original sample order.
pub fn split_holdout(data: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::invalid(format!(
            "holdout fraction must be in (0,1), got {fraction}"
        )));
    }
    if data.is_empty() {
        return Err(Error::Empty("cannot split an empty dataset".into()));
    }
    let mut groups: BTreeMap<Label, Vec<usize>> = BTreeMap::new();
    for (i, s) in data.iter().enumerate() {
        groups.entry(s.label).or_default().push(i);
    }
    let total = (fraction * data.len() as f64).round() as usize;
    let mut quota: Vec<(usize, f64)> = groups
        .values()
        .map(|g| {
            let exact = fraction * g.len() as f64;
            (exact.floor() as usize, exact - exact.floor())
        })
        .collect();
    let assigned: usize = quota.iter().map(|q| q.0).sum();
    let mut order: Vec<usize> = (0..quota.len()).collect();
    order.sort_by(|&a, &b| quota[b].1.total_cmp(&quota[a].1).then(a.cmp(&b)));
    for &g in order.iter().take(total.saturating_sub(assigned)) {
        quota[g].0 += 1;
    }

    let mut rng = rng_for(seed, 1);
    let mut in_holdout = vec![false; data.len()];
    for (members, (take, _)) in groups.into_values().zip(quota) {
        let mut members = members;
        members.shuffle(&mut rng);
        for &i in &members[..take.min(members.len())] {
            in_holdout[i] = true;
        }
    }
    let (hold, train): (Vec<usize>, Vec<usize>) = (0..data.len()).partition(|&i| in_holdout[i]);
    Ok((data.subset(&train), data.subset(&hold)))
}

/// Per-feature affine map fitted on training data.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub const STD_FLOOR: f64 = 1e-8;

    /// Population mean and standard deviation of every feature.
    pub fn fit(train: &Dataset) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Empty("cannot standardize on an empty dataset".into()));
        }
        let n = train.len() as f64;
        let mut mean = vec![0.0; train.dim()];
        for s in train.iter() {
            mean.iter_mut().zip(&s.features).for_each(|(m, x)| *m += x);
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; train.dim()];
        for s in train.iter() {
            for ((v, x), m) in var.iter_mut().zip(&s.features).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        let std = var.iter().map(|v| (v / n).sqrt().max(Self::STD_FLOOR)).collect();
        Ok(Self { mean, std })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, features: &[f64]) -> Vec<f64> {
        features
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(x, (m, s))| (x - m) / s)
            .collect()
    }

    pub fn transform(&self, data: &Dataset) -> Result<Dataset> {
        if data.dim() != self.dim() {
            return Err(Error::dims(format!(
                "standardizer for {} features applied to {}",
                self.dim(),
                data.dim()
            )));
        }
        let samples = data
            .iter()
            .map(|s| LabeledSample {
                features: self.apply(&s.features),
                label: s.label,
            })
            .collect();
        Dataset::new(data.dim(), samples)
    }
}

/// Full description of a synthetic experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub clusters: Vec<GaussianCluster>,
    pub train_ood: OodSource,
    pub train_ood_count: usize,
    pub test_ood: OodSource,
    pub test_ood_count: usize,
    pub holdout_fraction: f64,
    pub seed: u64,
}

/// Every split a scenario produces. `unseen_ood` comes from the test-time
/// source and is only meant for evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioData {
    pub train_id: Dataset,
    pub holdout_id: Dataset,
    pub train_ood: Dataset,
    pub holdout_ood: Dataset,
    pub unseen_ood: Dataset,
}

impl ScenarioData {
    pub fn num_classes(&self) -> usize {
        self.train_id
            .labels()
            .filter_map(Label::class)
            .max()
            .map_or(0, |k| k + 1)
    }
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        let cluster = |mean: Vec<f64>| GaussianCluster {
            mean,
            covariance: Covariance::Diagonal(vec![1.0, 1.0]),
            count: 1000,
        };
        Self {
            clusters: vec![
                cluster(vec![0.0, 4.0]),
                cluster(vec![-3.5, -2.0]),
                cluster(vec![3.5, -2.0]),
            ],
            // a frame around the clusters; the ring lies wholly outside it
            train_ood: OodSource::UniformBox {
                min: vec![-14.0, -14.0],
                max: vec![14.0, 14.0],
                hole: 9.0,
            },
            train_ood_count: 1000,
            test_ood: OodSource::Ring {
                center: vec![0.0, 0.0],
                radius: 22.0,
                width: 1.0,
            },
            test_ood_count: 1000,
            holdout_fraction: 0.1,
            seed: 0,
        }
    }
}

impl ScenarioSpec {
    pub fn num_classes(&self) -> usize {
        self.clusters.len()
    }

    pub fn dim(&self) -> usize {
        self.clusters.first().map_or(0, |c| c.mean.len())
    }

    pub fn validate(&self) -> Result<()> {
        if self.clusters.len() < 2 {
            return Err(Error::invalid("a scenario needs at least 2 in-domain classes"));
        }
        let dim = self.dim();
        if self.train_ood.dim() != dim || self.test_ood.dim() != dim {
            return Err(Error::dims("OOD sources must match the in-domain feature dimension"));
        }
        if self.train_ood == self.test_ood {
            return Err(Error::invalid("train_ood and test_ood must differ"));
        }
        if !(self.holdout_fraction > 0.0 && self.holdout_fraction < 1.0) {
            return Err(Error::invalid(format!(
                "holdout fraction must be in (0,1), got {}",
                self.holdout_fraction
            )));
        }
        if self.clusters.iter().any(|c| c.count == 0) {
            return Err(Error::invalid("every class needs at least one sample"));
        }
        if self.train_ood_count == 0 || self.test_ood_count == 0 {
            return Err(Error::invalid("OOD sample counts must be positive"));
        }
        self.train_ood.validate()?;
        self.test_ood.validate()
    }

    /// Generates all splits. The train-time OOD source is split with the same
    /// holdout fraction as the in-domain data so that seen-region evaluation
    /// never reuses training samples.
    pub fn generate(&self) -> Result<ScenarioData> {
        self.validate()?;
        let sub = |i: u64| self.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(i);
        let id = generate_gaussians(&self.clusters, sub(1))?;
        let (train_id, holdout_id) = split_holdout(&id, self.holdout_fraction, sub(2))?;
        let seen = generate_ood(&self.train_ood, self.train_ood_count, sub(3))?;
        let (train_ood, holdout_ood) = split_holdout(&seen, self.holdout_fraction, sub(4))?;
        let unseen_ood = generate_ood(&self.test_ood, self.test_ood_count, sub(5))?;
        Ok(ScenarioData {
            train_id,
            holdout_id,
            train_ood,
            holdout_ood,
            unseen_ood,
        })
    }
}
