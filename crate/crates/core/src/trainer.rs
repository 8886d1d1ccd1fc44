//! Mini-batch training of the Dirichlet network and of the binary baseline.
//!
//! Every optimizer step pairs one in-domain batch with one OOD batch. An
//! epoch is one pass over the in-domain training set; the OOD stream is
//! cycled alongside and reshuffled whenever it runs out. Initialisation and
//! the two shuffles draw from independent random streams of the run seed,
//! so changing how the OOD stream is used never perturbs the in-domain
//! batch order.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autonet::{Activation, Checkpoint, Network, Optimizer, OptimizerKind, Tape, Tensor};
use crate::data::{Dataset, Label, Standardizer};
use crate::dirichlet::UncertaintyScores;
use crate::error::{Error, Result};
use crate::losses::{binary_baseline_batch, combined_loss_batch, LossConfig};
use crate::numeric::{argmax, sigmoid};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub loss: LossConfig,
    pub epochs: usize,
    pub batch_in: usize,
    pub batch_out: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub seed: u64,
    pub checkpoint: Option<PathBuf>,
}

impl TrainConfig {
    pub fn new(num_classes: usize) -> Result<Self> {
        Ok(Self {
            loss: LossConfig::with_defaults(num_classes)?,
            epochs: 200,
            batch_in: 64,
            batch_out: 64,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::adam(),
            hidden: vec![64, 64],
            activation: Activation::Relu,
            seed: 0,
            checkpoint: None,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if self.batch_in == 0 || self.batch_out == 0 {
            return Err(Error::invalid("batch sizes must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!(
                "learning rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if self.hidden.contains(&0) {
            return Err(Error::invalid("hidden widths must be positive"));
        }
        Ok(())
    }

    fn widths(&self, input: usize, output: usize) -> Vec<usize> {
        let mut w = vec![input];
        w.extend(&self.hidden);
        w.push(output);
        w
    }
}

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss_total: f64,
    pub loss_in: f64,
    pub loss_out: f64,
    /// Mean `α′₀` over the in-domain samples of the epoch.
    pub mean_alpha0p_in: f64,
    pub mean_alpha0p_out: f64,
    /// Share of the training OOD set whose logits are all negative at the
    /// end of the epoch.
    pub frac_ood_all_neg: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
}

impl TrainLog {
    pub const HEADER: [&'static str; 7] = [
        "epoch",
        "loss_total",
        "loss_in",
        "loss_out",
        "mean_alpha0p_in",
        "mean_alpha0p_out",
        "frac_ood_all_neg",
    ];

    pub fn first(&self) -> Option<&EpochRecord> {
        self.records.first()
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(Self::HEADER)?;
        for r in &self.records {
            w.write_record([
                r.epoch.to_string(),
                r.loss_total.to_string(),
                r.loss_in.to_string(),
                r.loss_out.to_string(),
                r.mean_alpha0p_in.to_string(),
                r.mean_alpha0p_out.to_string(),
                r.frac_ood_all_neg.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// A trained network together with the input standardization it expects.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub network: Network,
    pub standardizer: Standardizer,
}

impl Model {
    /// Rows scored per forward pass when scoring whole datasets.
    const CHUNK: usize = 1024;

    pub fn num_outputs(&self) -> usize {
        self.network.output_width()
    }

    /// True for the single-logit baseline head.
    pub fn is_binary(&self) -> bool {
        self.num_outputs() == 1
    }

    pub fn logits_of(&self, features: &[f64]) -> Result<Vec<f64>> {
        if features.len() != self.standardizer.dim() {
            return Err(Error::dims(format!(
                "{} features for a model expecting {}",
                features.len(),
                self.standardizer.dim()
            )));
        }
        let x = Tensor::matrix(1, features.len(), self.standardizer.apply(features))?;
        Ok(self.network.predict(&x)?.into_data())
    }

    /// Logits of every sample, one row per sample.
    pub fn logits(&self, data: &Dataset) -> Result<Vec<Vec<f64>>> {
        if data.dim() != self.standardizer.dim() {
            return Err(Error::dims(format!(
                "dataset has {} features, model expects {}",
                data.dim(),
                self.standardizer.dim()
            )));
        }
        let mut out = Vec::with_capacity(data.len());
        let all: Vec<usize> = (0..data.len()).collect();
        for rows in all.chunks(Self::CHUNK) {
            let mut x = Vec::with_capacity(rows.len() * data.dim());
            for &r in rows {
                x.extend(self.standardizer.apply(&data.samples()[r].features));
            }
            let z = self.network.predict(&Tensor::matrix(rows.len(), data.dim(), x)?)?;
            out.extend(z.row_iter().map(<[f64]>::to_vec));
        }
        Ok(out)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new(self.network.clone());
        ck.vectors.push(("input_mean".into(), self.standardizer.mean.clone()));
        ck.vectors.push(("input_std".into(), self.standardizer.std.clone()));
        ck
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        let width = ck.network.input_width();
        let standardizer = match (ck.vector("input_mean"), ck.vector("input_std")) {
            (Some(m), Some(s)) => Standardizer {
                mean: m.to_vec(),
                std: s.to_vec(),
            },
            (None, None) => Standardizer::identity(width),
            _ => return Err(Error::invalid("checkpoint has only half of the input statistics")),
        };
        if standardizer.mean.len() != width || standardizer.std.len() != width {
            return Err(Error::dims("input statistics do not match the network input width"));
        }
        if standardizer.std.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::invalid("input std must be positive"));
        }
        Ok(Self {
            network: ck.network,
            standardizer,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(Checkpoint::load(path)?)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub model: Model,
    pub log: TrainLog,
}

/// Predicted class and uncertainty record of one raw sample.
pub fn classify(model: &Model, features: &[f64]) -> Result<(usize, UncertaintyScores)> {
    if model.is_binary() {
        return Err(Error::invalid("classify needs a multi-class model"));
    }
    let z = model.logits_of(features)?;
    Ok((argmax(&z), UncertaintyScores::from_logits(&z)?))
}

/// Trains the Dirichlet network on in-domain data plus training-time OOD
/// data. The unseen test OOD set is deliberately not a parameter.
pub fn train_dpn(train_id: &Dataset, train_ood: &Dataset, cfg: &TrainConfig) -> Result<TrainOutput> {
    check_ood(train_ood, train_id.dim())?;
    run(train_id, Some(train_ood), cfg, Objective::Dirichlet)
}

/// Same loop with the OOD stream switched off.
pub fn train_in_domain_only(train_id: &Dataset, cfg: &TrainConfig) -> Result<TrainOutput> {
    run(train_id, None, cfg, Objective::Dirichlet)
}

/// Binary in-domain vs OOD classifier sharing the backbone, batching and
/// seed regime of [`train_dpn`]. Its single logit is high for in-domain
/// inputs.
pub fn train_baseline(train_id: &Dataset, train_ood: &Dataset, cfg: &TrainConfig) -> Result<TrainOutput> {
    check_ood(train_ood, train_id.dim())?;
    run(train_id, Some(train_ood), cfg, Objective::Binary)
}

#[derive(Clone, Copy, PartialEq)]
enum Objective {
    Dirichlet,
    Binary,
}

fn check_ood(ood: &Dataset, dim: usize) -> Result<()> {
    if ood.is_empty() {
        return Err(Error::Empty("training OOD set is empty".into()));
    }
    if ood.dim() != dim {
        return Err(Error::dims(format!(
            "OOD set has {} features, in-domain {dim}",
            ood.dim()
        )));
    }
    if !ood.labels().all(Label::is_ood) {
        return Err(Error::invalid("training OOD set contains class labels"));
    }
    Ok(())
}

fn class_labels(train_id: &Dataset, k: usize) -> Result<Vec<usize>> {
    if train_id.is_empty() {
        return Err(Error::Empty("in-domain training set is empty".into()));
    }
    let labels = train_id
        .labels()
        .map(|l| match l {
            Label::Class(c) if c < k => Ok(c),
            Label::Class(c) => Err(Error::invalid(format!("label {c} outside {k} classes"))),
            Label::Ood => Err(Error::invalid("in-domain training set contains OOD samples")),
        })
        .collect::<Result<Vec<_>>>()?;
    let mut seen = vec![false; k];
    labels.iter().for_each(|&c| seen[c] = true);
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(Error::invalid(format!("class {missing} has no training samples")));
    }
    Ok(labels)
}

/// Endless reshuffled pass over `0..n`.
struct Cycler {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl Cycler {
    fn new(n: usize, rng: ChaCha8Rng) -> Self {
        Self {
            order: (0..n).collect(),
            pos: n,
            rng,
        }
    }

    fn take(&mut self, size: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.pos == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.pos = 0;
            }
            let n = (size - out.len()).min(self.order.len() - self.pos);
            out.extend_from_slice(&self.order[self.pos..self.pos + n]);
            self.pos += n;
        }
        out
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

#[derive(Default)]
struct Sums {
    total: f64,
    loss_in: f64,
    loss_out: f64,
    steps: usize,
    alpha_in: f64,
    n_in: usize,
    alpha_out: f64,
    n_out: usize,
}

/// Mean `α′₀` over the rows of `z`.
fn mean_alpha0p(z: &Tensor) -> f64 {
    z.data().iter().map(|&v| sigmoid(v)).sum::<f64>() / z.len() as f64
}

fn run(
    train_id: &Dataset,
    train_ood: Option<&Dataset>,
    cfg: &TrainConfig,
    objective: Objective,
) -> Result<TrainOutput> {
    cfg.validate()?;
    let k = cfg.loss.num_classes();
    let labels = class_labels(train_id, k)?;
    let standardizer = Standardizer::fit(train_id)?;
    let x_in = standardizer.transform(train_id)?;
    let x_out = train_ood.map(|d| standardizer.transform(d)).transpose()?;
    let ood_all = x_out.as_ref().map(Dataset::features).transpose()?;

    let outputs = if objective == Objective::Binary { 1 } else { k };
    let init_seed = stream_seed(cfg.seed);
    let mut net = Network::dense(&cfg.widths(train_id.dim(), outputs), cfg.activation, init_seed)?;
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, &net)?;
    let mut in_order: Vec<usize> = (0..x_in.len()).collect();
    let mut in_rng = stream(cfg.seed, 1);
    let mut out_stream = x_out.as_ref().map(|d| Cycler::new(d.len(), stream(cfg.seed, 2)));

    let mut log = TrainLog::default();
    for epoch in 1..=cfg.epochs {
        in_order.shuffle(&mut in_rng);
        let mut sums = Sums::default();
        for (step, rows) in in_order.chunks(cfg.batch_in).enumerate() {
            let out_rows = out_stream.as_mut().map(|c| c.take(cfg.batch_out));
            let diverged = |e: Error| match e {
                Error::NonFinite(_) => Error::Divergence { epoch, step: step + 1 },
                other => other,
            };
            let (loss, grads) = match (objective, &x_out, &out_rows) {
                (Objective::Dirichlet, _, _) => {
                    let y: Vec<usize> = rows.iter().map(|&r| labels[r]).collect();
                    let mut tape = Tape::new();
                    let zin = net.forward(&mut tape, &x_in.features_of(rows)?).map_err(diverged)?;
                    sums.alpha_in += mean_alpha0p(tape.value(zin)) * rows.len() as f64;
                    sums.n_in += rows.len();
                    let zout = match (&x_out, &out_rows) {
                        (Some(d), Some(o)) => {
                            let z = net.forward(&mut tape, &d.features_of(o)?).map_err(diverged)?;
                            sums.alpha_out += mean_alpha0p(tape.value(z)) * o.len() as f64;
                            sums.n_out += o.len();
                            Some(z)
                        }
                        _ => None,
                    };
                    let terms = combined_loss_batch(&mut tape, Some((zin, &y)), zout, &cfg.loss)?;
                    let total = tape.scalar(terms.total);
                    sums.loss_in += terms.loss_in.map_or(0.0, |v| tape.scalar(v));
                    sums.loss_out += terms.loss_out.map_or(0.0, |v| tape.scalar(v));
                    if !total.is_finite() {
                        return Err(Error::Divergence { epoch, step: step + 1 });
                    }
                    (total, tape.backward(terms.total).map_err(diverged)?)
                }
                (Objective::Binary, Some(d), Some(o)) => {
                    let mut tape = Tape::new();
                    let zin = net.forward(&mut tape, &x_in.features_of(rows)?).map_err(diverged)?;
                    let zout = net.forward(&mut tape, &d.features_of(o)?).map_err(diverged)?;
                    sums.alpha_in += mean_alpha0p(tape.value(zin)) * rows.len() as f64;
                    sums.alpha_out += mean_alpha0p(tape.value(zout)) * o.len() as f64;
                    sums.n_in += rows.len();
                    sums.n_out += o.len();
                    let lin = binary_baseline_batch(&mut tape, zin, &vec![false; rows.len()])?;
                    let lout = binary_baseline_batch(&mut tape, zout, &vec![true; o.len()])?;
                    let (a, b) = (tape.scalar(lin), tape.scalar(lout));
                    sums.loss_in += a;
                    sums.loss_out += b;
                    // mean over the concatenated batch
                    let n = (rows.len() + o.len()) as f64;
                    let wa = tape.scale(lin, rows.len() as f64 / n);
                    let wb = tape.scale(lout, o.len() as f64 / n);
                    let total_var = tape.add(wa, wb)?;
                    let total = tape.scalar(total_var);
                    if !total.is_finite() {
                        return Err(Error::Divergence { epoch, step: step + 1 });
                    }
                    (total, tape.backward(total_var).map_err(diverged)?)
                }
                (Objective::Binary, _, _) => return Err(Error::invalid("baseline needs an OOD stream")),
            };
            sums.total += loss;
            sums.steps += 1;
            opt.step(&mut net, &grads)?;
        }

        let frac_ood_all_neg = match &ood_all {
            Some(x) => {
                let z = net.predict(x).map_err(|_| Error::Divergence {
                    epoch,
                    step: sums.steps,
                })?;
                z.row_iter().filter(|r| r.iter().all(|&v| v < 0.0)).count() as f64 / z.rows() as f64
            }
            None => f64::NAN,
        };
        let steps = sums.steps as f64;
        let per = |s: f64, n: usize| if n == 0 { f64::NAN } else { s / n as f64 };
        log.records.push(EpochRecord {
            epoch,
            loss_total: sums.total / steps,
            loss_in: sums.loss_in / steps,
            loss_out: if sums.n_out == 0 {
                f64::NAN
            } else {
                sums.loss_out / steps
            },
            mean_alpha0p_in: per(sums.alpha_in, sums.n_in),
            mean_alpha0p_out: per(sums.alpha_out, sums.n_out),
            frac_ood_all_neg,
        });
    }

    let model = Model {
        network: net,
        standardizer,
    };
    if let Some(path) = &cfg.checkpoint {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)?;
        }
        model.save(path)?;
    }
    Ok(TrainOutput { model, log })
}

/// Initialisation seed, kept apart from the shuffle streams.
fn stream_seed(seed: u64) -> u64 {
    seed ^ 0x5DEE_CE66_D1CE_4E5B
}
