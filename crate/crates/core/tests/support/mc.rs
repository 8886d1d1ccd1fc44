//! Monte-Carlo Dirichlet entropy oracle, shared by test targets.

use rand::Rng;
use rand_distr::{Distribution, Gamma};

pub struct McEstimate {
    /// Sample mean of the categorical entropy over draws.
    pub expected_entropy: f64,
    pub std_error: f64,
    /// Entropy of the exact Dirichlet mean minus `expected_entropy`.
    pub mutual_information: f64,
}

/// Draws `p ~ Dir(alphas)` in log space so that concentrations far below 1
/// do not underflow: `ln G = ln Gamma(a + 1) + ln(U) / a` is the log of a
/// Gamma(a) variate.
pub fn entropy_mc(alphas: &[f64], draws: usize, rng: &mut impl Rng) -> McEstimate {
    let gammas: Vec<Gamma<f64>> = alphas.iter().map(|&a| Gamma::new(a + 1.0, 1.0).unwrap()).collect();
    let mut log_g = vec![0.0; alphas.len()];
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..draws {
        for ((lg, g), &a) in log_g.iter_mut().zip(&gammas).zip(alphas) {
            let u: f64 = rng.random();
            *lg = g.sample(rng).ln() + u.ln() / a;
        }
        let m = log_g.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + log_g.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        let h: f64 = log_g
            .iter()
            .map(|v| {
                let lp = v - lse;
                if lp == f64::NEG_INFINITY {
                    0.0
                } else {
                    -lp.exp() * lp
                }
            })
            .sum();
        sum += h;
        sum_sq += h * h;
    }
    let n = draws as f64;
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean).max(0.0) * n / (n - 1.0);
    let a0: f64 = alphas.iter().sum();
    let h_mean: f64 = alphas.iter().map(|a| a / a0).map(|p| -p * p.ln()).sum();
    McEstimate {
        expected_entropy: mean,
        std_error: (var / n).sqrt(),
        mutual_information: h_mean - mean,
    }
}
