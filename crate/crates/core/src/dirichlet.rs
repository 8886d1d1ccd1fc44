//! Dirichlet distributions parameterised by network logits, and the
//! uncertainty measures derived from them.
//!
//! The log-concentrations are the source of truth. Concentrations may
//! overflow (`α₀ ≈ 1e16` is routine for confident inputs and logits beyond
//! ±700 leave the `f64` range entirely); every measure below is evaluated
//! from log-space quantities so it stays finite in that regime.

use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::numeric::{log_sum_exp, softmax};

/// Logits with magnitude above this are treated as saturated.
pub const SATURATION_LOGIT: f64 = 700.0;

#[derive(Debug, Clone, PartialEq)]
pub struct DirichletParams {
    log_alphas: Vec<f64>,
    alphas: Vec<f64>,
    saturated: bool,
}

impl DirichletParams {
    /// `α_k = exp(z_k)`.
    pub fn from_logits(logits: &[f64]) -> Result<Self> {
        if logits.len() < 2 {
            return Err(Error::invalid(format!(
                "a Dirichlet needs at least 2 classes, got {}",
                logits.len()
            )));
        }
        if let Some(bad) = logits.iter().find(|z| !z.is_finite()) {
            return Err(Error::NonFinite(format!("logit {bad}")));
        }
        let saturated = logits.iter().any(|z| z.abs() > SATURATION_LOGIT);
        Ok(Self {
            log_alphas: logits.to_vec(),
            alphas: logits.iter().map(|z| z.exp()).collect(),
            saturated,
        })
    }

    pub fn from_alphas(alphas: &[f64]) -> Result<Self> {
        if let Some(bad) = alphas.iter().find(|a| !(**a > 0.0 && a.is_finite())) {
            return Err(Error::invalid(format!("concentration {bad} is not positive")));
        }
        let logs: Vec<f64> = alphas.iter().map(|a| a.ln()).collect();
        let mut p = Self::from_logits(&logs)?;
        p.alphas = alphas.to_vec();
        Ok(p)
    }

    pub fn k(&self) -> usize {
        self.log_alphas.len()
    }

    pub fn log_alphas(&self) -> &[f64] {
        &self.log_alphas
    }

    /// Concentrations, unless some of them over- or underflow.
    pub fn alphas(&self) -> Option<&[f64]> {
        (!self.saturated).then_some(self.alphas.as_slice())
    }

    pub fn is_saturated(&self) -> bool {
        self.saturated
    }

    pub fn log_precision(&self) -> f64 {
        log_sum_exp(&self.log_alphas)
    }

    /// `α₀ = Σ α_k`; `+∞` when it exceeds the `f64` range.
    pub fn precision(&self) -> f64 {
        self.log_precision().exp()
    }

    /// Expected categorical `α_k / α₀`.
    pub fn mean(&self) -> Vec<f64> {
        softmax(&self.log_alphas)
    }
}

/// Dirichlet whose concentrations are the exponentiated logits.
pub fn concentrations(logits: &[f64]) -> Result<DirichletParams> {
    DirichletParams::from_logits(logits)
}

pub fn max_probability(logits: &[f64]) -> f64 {
    softmax(logits).into_iter().fold(0.0, f64::max)
}

/// Entropy of the expected categorical, `−Σ p_k ln p_k`.
pub fn entropy_of_mean(params: &DirichletParams) -> f64 {
    let l0 = params.log_precision();
    params
        .log_alphas
        .iter()
        .map(|&lk| {
            let p = (lk - l0).exp();
            if p > 0.0 {
                p * (l0 - lk)
            } else {
                0.0
            }
        })
        .sum()
}

/// Expected categorical entropy under the Dirichlet,
/// `Σ p_k (ψ(α₀+1) − ψ(α_k+1))`.
pub fn expected_entropy(params: &DirichletParams) -> f64 {
    let l0 = params.log_precision();
    let f0 = digamma1p_minus_ln(l0);
    params
        .log_alphas
        .iter()
        .map(|&lk| {
            let p = (lk - l0).exp();
            if p > 0.0 {
                p * ((l0 - lk) + f0 - digamma1p_minus_ln(lk))
            } else {
                0.0
            }
        })
        .sum::<f64>()
        .max(0.0)
}

/// Mutual information between the label and the categorical,
/// `H[E[π]] − E[H[π]]`.
///
/// Writing `f(x) = ψ(x+1) − ln x`, the difference collapses to
/// `Σ p_k f(α_k) − f(α₀)`, which has no cancellation between large terms
/// and only needs the log-concentrations.
pub fn mutual_information(params: &DirichletParams) -> f64 {
    let l0 = params.log_precision();
    let weighted: f64 = params
        .log_alphas
        .iter()
        .map(|&lk| {
            let p = (lk - l0).exp();
            if p > 0.0 {
                p * digamma1p_minus_ln(lk)
            } else {
                0.0
            }
        })
        .sum();
    (weighted - digamma1p_minus_ln(l0)).max(0.0)
}

/// The per-sample score record used for OOD detection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UncertaintyScores {
    pub max_probability: f64,
    pub mutual_information: f64,
    /// `α₀`, possibly `+∞`; prefer `log_precision` for ranking.
    pub precision: f64,
    pub log_precision: f64,
    pub expected_entropy: f64,
}

impl UncertaintyScores {
    pub fn from_logits(logits: &[f64]) -> Result<Self> {
        let params = concentrations(logits)?;
        let log_precision = params.log_precision();
        Ok(Self {
            max_probability: max_probability(logits),
            mutual_information: mutual_information(&params),
            precision: log_precision.exp(),
            log_precision,
            expected_entropy: expected_entropy(&params),
        })
    }
}

/// Result of a log-density query, which can leave the reals on the
/// boundary of the simplex.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LogDensity {
    Finite(f64),
    /// Density is zero: some coordinate is 0 where its concentration
    /// exceeds 1.
    Zero,
    /// Density is unbounded: some coordinate is 0 where its concentration
    /// is below 1.
    Unbounded,
}

impl LogDensity {
    /// The log-density as an extended real.
    pub fn value(self) -> f64 {
        match self {
            LogDensity::Finite(v) => v,
            LogDensity::Zero => f64::NEG_INFINITY,
            LogDensity::Unbounded => f64::INFINITY,
        }
    }
}

/// Tolerance on `Σ x_k = 1` for simplex points.
pub const SIMPLEX_TOLERANCE: f64 = 1e-9;

/// `ln Γ(α₀) − Σ ln Γ(α_k) + Σ (α_k − 1) ln x_k`.
///
/// A zero coordinate with `α_k > 1` makes the density zero, which wins over
/// a zero coordinate with `α_k < 1`.
pub fn dirichlet_log_pdf(params: &DirichletParams, point: &[f64]) -> Result<LogDensity> {
    let Some(alphas) = params.alphas() else {
        return Err(Error::invalid("density of a saturated Dirichlet"));
    };
    if point.len() != alphas.len() {
        return Err(Error::dims(format!(
            "point of length {} for {} classes",
            point.len(),
            alphas.len()
        )));
    }
    let sum: f64 = point.iter().sum();
    if point.iter().any(|x| !(*x >= 0.0)) || (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
        return Err(Error::invalid(format!("point {point:?} is not on the simplex")));
    }
    let mut unbounded = false;
    let mut acc = ln_gamma(alphas.iter().sum());
    for (&a, &x) in alphas.iter().zip(point) {
        acc -= ln_gamma(a);
        if x == 0.0 {
            if a > 1.0 {
                return Ok(LogDensity::Zero);
            }
            unbounded |= a < 1.0;
        } else {
            acc += (a - 1.0) * x.ln();
        }
    }
    Ok(if unbounded {
        LogDensity::Unbounded
    } else {
        LogDensity::Finite(acc)
    })
}

/// `Σ_n B_2n / (2n x^2n)` for n = 1..7, the correction in
/// `ψ(x) ≈ ln x − 1/(2x) − Σ ...`.
fn asymptotic_tail(inv: f64) -> f64 {
    const COEFFS: [f64; 7] = [
        1.0 / 12.0,
        -1.0 / 120.0,
        1.0 / 252.0,
        -1.0 / 240.0,
        1.0 / 132.0,
        -691.0 / 32760.0,
        1.0 / 12.0,
    ];
    let inv2 = inv * inv;
    COEFFS.iter().rev().fold(0.0, |acc, c| acc * inv2 + c) * inv2
}

fn digamma_unchecked(mut x: f64) -> f64 {
    let mut shift = 0.0;
    while x < 6.0 {
        shift -= 1.0 / x;
        x += 1.0;
    }
    let inv = 1.0 / x;
    shift + x.ln() - 0.5 * inv - asymptotic_tail(inv)
}

/// Digamma function ψ(x) for x > 0.
pub fn digamma(x: f64) -> Result<f64> {
    if !(x > 0.0 && x.is_finite()) {
        return Err(Error::invalid(format!("digamma needs a positive argument, got {x}")));
    }
    Ok(digamma_unchecked(x))
}

/// `ψ(x + 1) − ln x`, given `ln x`. Tends to `1/(2x)` for large `x`.
fn digamma1p_minus_ln(log_x: f64) -> f64 {
    if log_x > 10f64.ln() {
        let inv = (-log_x).exp();
        0.5 * inv - asymptotic_tail(inv)
    } else {
        digamma_unchecked(log_x.exp() + 1.0) - log_x
    }
}
