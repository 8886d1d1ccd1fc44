//! Central finite-difference verification of tape gradients.

use super::network::Network;
use super::tape::{Gradients, Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Builds a scalar loss from the logits of `input`.
pub trait LossFn: Fn(&mut Tape, Var) -> Result<Var> {}
impl<F: Fn(&mut Tape, Var) -> Result<Var>> LossFn for F {}

fn evaluate(net: &Network, loss_fn: &impl LossFn, input: &Tensor) -> Result<(Tape, Var)> {
    let mut tape = Tape::new();
    let logits = net.forward(&mut tape, input)?;
    let loss = loss_fn(&mut tape, logits)?;
    if tape.value(loss).shape() != [1, 1] {
        return Err(Error::dims("loss must be 1x1"));
    }
    Ok((tape, loss))
}

pub fn autodiff_gradients(net: &Network, loss_fn: &impl LossFn, input: &Tensor) -> Result<Gradients> {
    let (tape, loss) = evaluate(net, loss_fn, input)?;
    tape.backward(loss)
}

pub fn finite_difference_gradients(net: &Network, loss_fn: &impl LossFn, input: &Tensor, h: f64) -> Result<Gradients> {
    if !(h > 0.0) {
        return Err(Error::invalid(format!("step must be positive, got {h}")));
    }
    let value = |n: &Network| -> Result<f64> {
        let (tape, loss) = evaluate(n, loss_fn, input)?;
        Ok(tape.scalar(loss))
    };
    let mut probe = net.clone();
    let mut grads = Vec::with_capacity(net.param_tensor_count());
    for (pi, p) in net.params().enumerate() {
        let mut g = vec![0.0; p.len()];
        for (j, gj) in g.iter_mut().enumerate() {
            let orig = p.data()[j];
            set_param(&mut probe, pi, j, orig + h);
            let plus = value(&probe)?;
            set_param(&mut probe, pi, j, orig - h);
            let minus = value(&probe)?;
            set_param(&mut probe, pi, j, orig);
            *gj = (plus - minus) / (2.0 * h);
        }
        grads.push(Tensor::new(p.shape().to_vec(), g)?);
    }
    Ok(Gradients::new(grads))
}

fn set_param(net: &mut Network, tensor: usize, entry: usize, value: f64) {
    if let Some(t) = net.params_mut().nth(tensor) {
        t.data_mut()[entry] = value;
    }
}

/// `max |a − b| / max(1e-8, |a| + |b|)` over all entries.
pub fn max_relative_error(a: &Gradients, b: &Gradients) -> f64 {
    a.iter()
        .zip(b.iter())
        .flat_map(|(ta, tb)| ta.data().iter().zip(tb.data()))
        .map(|(x, y)| (x - y).abs() / (x.abs() + y.abs()).max(1e-8))
        .fold(0.0, f64::max)
}

/// Maximum relative error between tape gradients and central differences
/// with step `h`.
pub fn grad_check(net: &Network, loss_fn: impl LossFn, input: &Tensor, h: f64) -> Result<f64> {
    let fd = finite_difference_gradients(net, &loss_fn, input, h)?;
    let ad = autodiff_gradients(net, &loss_fn, input)?;
    Ok(max_relative_error(&ad, &fd))
}
