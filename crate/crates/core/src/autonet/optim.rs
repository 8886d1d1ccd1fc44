use std::fmt;
use std::str::FromStr;

use super::network::Network;
use super::tape::Gradients;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    /// `v ← μ·v + g; θ ← θ − lr·v`
    SgdMomentum {
        momentum: f64,
    },
    Adam {
        beta1: f64,
        beta2: f64,
        eps: f64,
    },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn sgd(momentum: f64) -> Self {
        OptimizerKind::SgdMomentum { momentum }
    }
}

impl Default for OptimizerKind {
    fn default() -> Self {
        Self::adam()
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OptimizerKind::SgdMomentum { .. } => f.write_str("sgd"),
            OptimizerKind::Adam { .. } => f.write_str("adam"),
        }
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(Self::adam()),
            "sgd" | "sgd-momentum" => Ok(Self::sgd(0.9)),
            other => Err(Error::invalid(format!("unknown optimizer `{other}`"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    learning_rate: f64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    steps: u64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64, net: &Network) -> Result<Self> {
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(Error::invalid(format!(
                "learning rate must be positive, got {learning_rate}"
            )));
        }
        let zeros = || net.params().map(|p| vec![0.0; p.len()]).collect::<Vec<_>>();
        let second = match kind {
            OptimizerKind::Adam { .. } => zeros(),
            OptimizerKind::SgdMomentum { .. } => Vec::new(),
        };
        Ok(Self {
            kind,
            learning_rate,
            first: zeros(),
            second,
            steps: 0,
        })
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Applies one update in place.
    pub fn step(&mut self, net: &mut Network, grads: &Gradients) -> Result<()> {
        if grads.len() < self.first.len() {
            return Err(Error::MissingGradient(grads.len()));
        }
        for (i, (p, g)) in net.params_mut().zip(grads.iter()).enumerate() {
            if p.shape() != g.shape() {
                return Err(Error::dims(format!(
                    "gradient {i} has shape {:?}, parameter {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
        }
        self.steps += 1;
        let lr = self.learning_rate;
        match self.kind {
            OptimizerKind::SgdMomentum { momentum } => {
                for ((p, g), v) in net.params_mut().zip(grads.iter()).zip(&mut self.first) {
                    for ((p, &g), v) in p.data_mut().iter_mut().zip(g.data()).zip(v.iter_mut()) {
                        *v = momentum * *v + g;
                        *p -= lr * *v;
                    }
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let t = self.steps as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                let moments = self.first.iter_mut().zip(self.second.iter_mut());
                for ((p, g), (m, v)) in net.params_mut().zip(grads.iter()).zip(moments) {
                    let entries = p.data_mut().iter_mut().zip(g.data());
                    for ((p, &g), (m, v)) in entries.zip(m.iter_mut().zip(v.iter_mut())) {
                        *m = beta1 * *m + (1.0 - beta1) * g;
                        *v = beta2 * *v + (1.0 - beta2) * g * g;
                        let m_hat = *m / c1;
                        let v_hat = *v / c2;
                        *p -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}
