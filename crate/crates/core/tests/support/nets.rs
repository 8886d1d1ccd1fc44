//! Seeded small networks for gradient checks, shared by test targets.

use dpn_core::autonet::{grad_check, Activation, Layer, Network, Tape, Tensor, Var};
use dpn_core::losses::{binary_baseline_batch, combined_loss_batch, loss_in_batch, loss_out_batch, LossConfig};
use dpn_core::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-5;
pub const MAX_ERROR: f64 = 1e-4;
pub const SEEDS: u64 = 20;

pub struct Case {
    pub net: Network,
    pub input: Tensor,
    pub labels: Vec<usize>,
}

/// Seeded 2-h-K or 2-h-h-K networks with at most 500 parameters.
pub fn case(seed: u64, outputs: usize) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = rng.random_range(3..12);
    let act = if seed.is_multiple_of(2) {
        Activation::Tanh
    } else {
        Activation::Relu
    };
    let widths = if seed.is_multiple_of(3) {
        vec![2, h, h, outputs]
    } else {
        vec![2, h, outputs]
    };
    // nonzero biases keep ReLU pre-activations off the kink at exactly 0,
    // which zero biases produce whenever a whole hidden layer is inactive
    let layers = Network::dense(&widths, act, seed)
        .unwrap()
        .layers()
        .iter()
        .map(|l| {
            let b = (0..l.out_width()).map(|_| rng.random_range(-0.5..0.5)).collect();
            Layer::new(
                l.weight.clone(),
                Tensor::matrix(1, l.out_width(), b).unwrap(),
                l.activation,
            )
            .unwrap()
        })
        .collect();
    let net = Network::new(layers).unwrap();
    assert!(net.param_count() <= 500);
    let n = 6;
    let data = (0..n * 2).map(|_| rng.random_range(-2.0..2.0)).collect();
    let labels = (0..n).map(|i| i % outputs.max(2)).collect();
    Case {
        net,
        input: Tensor::matrix(n, 2, data).unwrap(),
        labels,
    }
}

/// Relative gradient error for each seeded network.
pub fn errors(outputs: usize, loss: impl Fn(&mut Tape, Var, &[usize]) -> Result<Var>) -> Vec<f64> {
    (0..SEEDS)
        .map(|seed| {
            let c = case(seed, outputs);
            let labels = c.labels.clone();
            grad_check(&c.net, |t: &mut Tape, z: Var| loss(t, z, &labels), &c.input, STEP).unwrap()
        })
        .collect()
}

pub fn cfg() -> LossConfig {
    LossConfig::new(0.8, -1.5, 0.7, 3).unwrap()
}

/// Largest relative error over all networks for each of the four objectives.
pub fn all_losses() -> Vec<(&'static str, f64)> {
    let max = |v: Vec<f64>| v.into_iter().fold(0.0, f64::max);
    vec![
        ("loss_in", max(errors(3, |t, z, y| loss_in_batch(t, z, y, &cfg())))),
        ("loss_out", max(errors(3, |t, z, _| loss_out_batch(t, z, &cfg())))),
        (
            "combined",
            max(errors(3, |t, z, y| {
                Ok(combined_loss_batch(t, Some((z, y)), Some(z), &cfg())?.total)
            })),
        ),
        (
            "binary",
            max(errors(1, |t, z, y| {
                let ood: Vec<bool> = y.iter().map(|&l| l == 1).collect();
                binary_baseline_batch(t, z, &ood)
            })),
        ),
    ]
}
