//! Training objectives.
//!
//! In-domain samples minimise cross-entropy minus a bounded precision
//! reward, `−ln p(y|x) − λ_in·α′₀`. OOD samples minimise cross-entropy
//! against the uniform label minus `λ_out·α′₀` with `λ_out < 0`, which
//! drives every logit negative. `α′₀ = (1/K) Σ sigmoid(z_k)`.
//!
//! Each objective comes in two forms: a plain scalar function on one
//! logit vector, and a batched version recorded on a [`Tape`] for training.

use crate::autonet::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::numeric::{log_softmax, sigmoid, softplus};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    lambda_in: f64,
    lambda_out: f64,
    gamma: f64,
    num_classes: usize,
}

impl LossConfig {
    pub const DEFAULT_LAMBDA_IN: f64 = 1.0;
    pub const DEFAULT_LAMBDA_OUT: f64 = -1.0;
    pub const DEFAULT_GAMMA: f64 = 1.0;

    /// `gamma = 0` is accepted and turns the objective into the in-domain
    /// term alone.
    pub fn new(lambda_in: f64, lambda_out: f64, gamma: f64, num_classes: usize) -> Result<Self> {
        if !(lambda_in > 0.0 && lambda_in.is_finite()) {
            return Err(Error::invalid(format!("lambda_in must be > 0, got {lambda_in}")));
        }
        if !(lambda_out < 0.0 && lambda_out.is_finite()) {
            return Err(Error::invalid(format!("lambda_out must be < 0, got {lambda_out}")));
        }
        if !(gamma >= 0.0 && gamma.is_finite()) {
            return Err(Error::invalid(format!("gamma must be >= 0, got {gamma}")));
        }
        if num_classes < 2 {
            return Err(Error::invalid(format!("need at least 2 classes, got {num_classes}")));
        }
        Ok(Self {
            lambda_in,
            lambda_out,
            gamma,
            num_classes,
        })
    }

    pub fn with_defaults(num_classes: usize) -> Result<Self> {
        Self::new(
            Self::DEFAULT_LAMBDA_IN,
            Self::DEFAULT_LAMBDA_OUT,
            Self::DEFAULT_GAMMA,
            num_classes,
        )
    }

    pub fn lambda_in(&self) -> f64 {
        self.lambda_in
    }

    pub fn lambda_out(&self) -> f64 {
        self.lambda_out
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn check_width(&self, width: usize) -> Result<()> {
        if width != self.num_classes {
            return Err(Error::dims(format!("{width} logits for {} classes", self.num_classes)));
        }
        Ok(())
    }
}

/// `α′₀ = (1/K) Σ sigmoid(z_k)`, always in (0, 1) for finite logits.
pub fn mean_sigmoid_precision(logits: &[f64]) -> f64 {
    logits.iter().map(|&z| sigmoid(z)).sum::<f64>() / logits.len() as f64
}

pub fn loss_in(logits: &[f64], label: usize, cfg: &LossConfig) -> Result<f64> {
    cfg.check_width(logits.len())?;
    if label >= logits.len() {
        return Err(Error::invalid(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    Ok(-log_softmax(logits)[label] - cfg.lambda_in * mean_sigmoid_precision(logits))
}

pub fn loss_out(logits: &[f64], cfg: &LossConfig) -> Result<f64> {
    cfg.check_width(logits.len())?;
    let k = logits.len() as f64;
    let ce_uniform = -log_softmax(logits).iter().sum::<f64>() / k;
    Ok(ce_uniform - cfg.lambda_out * mean_sigmoid_precision(logits))
}

/// Mean in-domain loss plus `γ` times mean OOD loss. An empty side
/// contributes zero.
pub fn combined_loss(in_batch: &[(&[f64], usize)], out_batch: &[&[f64]], cfg: &LossConfig) -> Result<f64> {
    if in_batch.is_empty() && out_batch.is_empty() {
        return Err(Error::Empty("both loss batches are empty".into()));
    }
    let mut total = 0.0;
    if !in_batch.is_empty() {
        let sum = in_batch.iter().map(|(z, y)| loss_in(z, *y, cfg)).sum::<Result<f64>>()?;
        total += sum / in_batch.len() as f64;
    }
    if !out_batch.is_empty() {
        let sum = out_batch.iter().map(|z| loss_out(z, cfg)).sum::<Result<f64>>()?;
        total += cfg.gamma * sum / out_batch.len() as f64;
    }
    Ok(total)
}

/// Binary cross-entropy on a single "in-domain" logit: `−ln σ(z)` for
/// in-domain samples and `−ln(1 − σ(z))` for OOD ones.
pub fn binary_baseline_loss(logit: f64, is_ood: bool) -> f64 {
    if is_ood {
        softplus(logit)
    } else {
        softplus(-logit)
    }
}

fn check_batch(tape: &Tape, logits: Var, cfg: &LossConfig) -> Result<usize> {
    let v = tape.value(logits);
    cfg.check_width(v.cols())?;
    Ok(v.rows())
}

/// Per-sample `α′₀` as an n×1 column.
fn alpha0_prime(tape: &mut Tape, logits: Var) -> Var {
    let s = tape.sigmoid(logits);
    tape.row_mean(s)
}

/// Mean of [`loss_in`] over the rows of `logits`.
pub fn loss_in_batch(tape: &mut Tape, logits: Var, labels: &[usize], cfg: &LossConfig) -> Result<Var> {
    let n = check_batch(tape, logits, cfg)?;
    if labels.len() != n {
        return Err(Error::dims(format!("{} labels for {n} rows", labels.len())));
    }
    let ls = tape.log_softmax(logits);
    let picked = tape.gather(ls, labels)?;
    let reg = alpha0_prime(tape, logits);
    let reg = tape.scale(reg, cfg.lambda_in);
    let nll = tape.scale(picked, -1.0);
    let per_sample = tape.sub(nll, reg)?;
    Ok(tape.mean(per_sample))
}

/// Mean of [`loss_out`] over the rows of `logits`.
pub fn loss_out_batch(tape: &mut Tape, logits: Var, cfg: &LossConfig) -> Result<Var> {
    check_batch(tape, logits, cfg)?;
    let ls = tape.log_softmax(logits);
    let mean_ls = tape.row_mean(ls);
    let ce = tape.scale(mean_ls, -1.0);
    let reg = alpha0_prime(tape, logits);
    let reg = tape.scale(reg, cfg.lambda_out);
    let per_sample = tape.sub(ce, reg)?;
    Ok(tape.mean(per_sample))
}

/// Nodes of a recorded combined objective.
#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    pub total: Var,
    pub loss_in: Option<Var>,
    pub loss_out: Option<Var>,
}

/// Batched [`combined_loss`]: `inputs` holds in-domain logits with labels,
/// `outputs` the OOD logits.
pub fn combined_loss_batch(
    tape: &mut Tape,
    inputs: Option<(Var, &[usize])>,
    outputs: Option<Var>,
    cfg: &LossConfig,
) -> Result<LossTerms> {
    let l_in = inputs.map(|(z, y)| loss_in_batch(tape, z, y, cfg)).transpose()?;
    let l_out = outputs.map(|z| loss_out_batch(tape, z, cfg)).transpose()?;
    let total = match (l_in, l_out) {
        (Some(a), Some(b)) => {
            let b = tape.scale(b, cfg.gamma);
            tape.add(a, b)?
        }
        (Some(a), None) => a,
        (None, Some(b)) => tape.scale(b, cfg.gamma),
        (None, None) => return Err(Error::Empty("both loss batches are empty".into())),
    };
    Ok(LossTerms {
        total,
        loss_in: l_in,
        loss_out: l_out,
    })
}

/// Mean [`binary_baseline_loss`] over an n×1 logit column.
pub fn binary_baseline_batch(tape: &mut Tape, logits: Var, is_ood: &[bool]) -> Result<Var> {
    let v = tape.value(logits);
    if v.cols() != 1 || v.rows() != is_ood.len() {
        return Err(Error::dims(format!(
            "binary head {:?} with {} labels",
            v.shape(),
            is_ood.len()
        )));
    }
    // softplus(s·z) with s = +1 for OOD and −1 for in-domain
    let signs = is_ood.iter().map(|&o| if o { 1.0 } else { -1.0 }).collect();
    let signs = tape.constant(Tensor::matrix(is_ood.len(), 1, signs)?)?;
    let signed = tape.mul(logits, signs)?;
    let per_sample = tape.softplus(signed);
    Ok(tape.mean(per_sample))
}
