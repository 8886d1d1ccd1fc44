use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        })
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "identity" => Ok(Activation::Identity),
            other => Err(Error::invalid(format!("unknown activation `{other}`"))),
        }
    }
}

/// Dense layer `act(x · W + b)` with `W` stored as `in × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Tensor,
    pub bias: Tensor,
    pub activation: Activation,
}

impl Layer {
    pub fn new(weight: Tensor, bias: Tensor, activation: Activation) -> Result<Self> {
        if weight.shape().len() != 2 || bias.shape() != [1, weight.cols()] {
            return Err(Error::dims(format!(
                "weight {:?} with bias {:?}",
                weight.shape(),
                bias.shape()
            )));
        }
        Ok(Self {
            weight,
            bias,
            activation,
        })
    }

    pub fn in_width(&self) -> usize {
        self.weight.rows()
    }

    pub fn out_width(&self) -> usize {
        self.weight.cols()
    }
}

/// Stack of dense layers ending in raw logits.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<Layer>,
}

impl Network {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        let Some(last) = layers.last() else {
            return Err(Error::invalid("network needs at least one layer"));
        };
        if last.activation != Activation::Identity {
            return Err(Error::invalid("final layer must use the identity activation"));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_width() != pair[1].in_width() {
                return Err(Error::dims(format!(
                    "layer {i} outputs {} but layer {} expects {}",
                    pair[0].out_width(),
                    i + 1,
                    pair[1].in_width()
                )));
            }
        }
        Ok(Self { layers })
    }

    /// Randomly initialised network with layer widths `widths`
    /// (input first, logits last). Weights are drawn uniformly from
    /// ±sqrt(6 / (fan_in + fan_out)); biases start at zero.
    pub fn dense(widths: &[usize], hidden: Activation, seed: u64) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::invalid(format!("invalid layer widths {widths:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let last = widths.len() - 2;
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let weights = (0..fan_in * fan_out).map(|_| rng.random_range(-limit..limit)).collect();
                let act = if i == last { Activation::Identity } else { hidden };
                Layer::new(
                    Tensor::matrix(fan_in, fan_out, weights)?,
                    Tensor::zeros(vec![1, fan_out]),
                    act,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].in_width()
    }

    pub fn output_width(&self) -> usize {
        self.layers[self.layers.len() - 1].out_width()
    }

    /// Widths from input to output, e.g. `[2, 64, 64, 3]`.
    pub fn widths(&self) -> Vec<usize> {
        std::iter::once(self.input_width())
            .chain(self.layers.iter().map(Layer::out_width))
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Parameter tensors in order: weight 0, bias 0, weight 1, ...
    pub fn params(&self) -> impl Iterator<Item = &Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias])
    }

    pub(crate) fn params_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias])
    }

    pub fn param_tensor_count(&self) -> usize {
        self.layers.len() * 2
    }

    fn bind(&self, tape: &mut Tape) -> Result<Vec<Var>> {
        if tape.param_count() == 0 {
            return self.params().map(|p| tape.parameter(p.clone())).collect();
        }
        if tape.param_count() != self.param_tensor_count() {
            return Err(Error::invalid("tape already holds parameters of a different network"));
        }
        Ok(tape.params().to_vec())
    }

    /// Records the forward pass of `batch` (N × D) and returns the N × K
    /// logits. Parameters are registered on the first call for a tape and
    /// reused afterwards, so several batches can share one backward pass.
    pub fn forward(&self, tape: &mut Tape, batch: &Tensor) -> Result<Var> {
        if batch.shape().len() != 2 || batch.cols() != self.input_width() {
            return Err(Error::dims(format!(
                "batch {:?} for network input width {}",
                batch.shape(),
                self.input_width()
            )));
        }
        let params = self.bind(tape)?;
        let mut h = tape.constant(batch.clone())?;
        for (layer, wb) in self.layers.iter().zip(params.chunks(2)) {
            let z = tape.matmul(h, wb[0])?;
            let z = tape.add_row(z, wb[1])?;
            h = match layer.activation {
                Activation::Relu => tape.relu(z),
                Activation::Tanh => tape.tanh(z),
                Activation::Identity => z,
            };
        }
        if !tape.value(h).is_finite() {
            return Err(Error::NonFinite("network output".into()));
        }
        Ok(h)
    }

    /// Logits for `batch` without keeping a recording.
    pub fn predict(&self, batch: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, batch)?;
        Ok(tape.value(out).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity2() -> Network {
        Network::new(vec![Layer::new(
            Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap(),
            Tensor::zeros(vec![1, 2]),
            Activation::Identity,
        )
        .unwrap()])
        .unwrap()
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let x = Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap();
        assert_eq!(identity2().predict(&x).unwrap().data(), &[1.0, 2.0]);
    }

    #[test]
    fn zero_weights_give_zero_logits() {
        let mut net = Network::dense(&[4, 5, 3], Activation::Relu, 3).unwrap();
        for p in net.params_mut() {
            p.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let x = Tensor::from_rows(&[vec![1.0, -2.0, 3.0, 9.0], vec![0.1; 4]]).unwrap();
        assert!(net.predict(&x).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_bad_structure() {
        let l = |i: usize, o: usize, a| Layer::new(Tensor::zeros(vec![i, o]), Tensor::zeros(vec![1, o]), a).unwrap();
        assert!(Network::new(vec![]).is_err());
        assert!(Network::new(vec![l(2, 3, Activation::Relu)]).is_err());
        assert!(Network::new(vec![l(2, 3, Activation::Relu), l(4, 1, Activation::Identity)]).is_err());
        assert!(Layer::new(Tensor::zeros(vec![2, 3]), Tensor::zeros(vec![1, 2]), Activation::Relu).is_err());
    }

    #[test]
    fn dimension_mismatch_on_forward() {
        let x = Tensor::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap();
        assert!(matches!(identity2().predict(&x), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn init_respects_glorot_bounds_and_seed() {
        let a = Network::dense(&[2, 64, 64, 3], Activation::Relu, 11).unwrap();
        let b = Network::dense(&[2, 64, 64, 3], Activation::Relu, 11).unwrap();
        let c = Network::dense(&[2, 64, 64, 3], Activation::Relu, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.param_count(), 2 * 64 + 64 + 64 * 64 + 64 + 64 * 3 + 3);
        let limit = (6.0f64 / 66.0).sqrt();
        assert!(a.layers()[0].weight.data().iter().all(|w| w.abs() <= limit));
        assert_eq!(a.widths(), vec![2, 64, 64, 3]);
        assert_eq!(a.layers()[2].activation, Activation::Identity);
    }
}
