//! Tanh-squashed diagonal Gaussian head.
//!
//! The actor network emits `2 * action_dim` raw values: the first half is the
//! pre-squash mean, the second half is mapped onto the log-std bounds with
//! `lo + (hi - lo) * (tanh(raw) + 1) / 2`. A sample is
//! `a = tanh(mean + exp(log_std) * eps)` with `eps ~ N(0, I)` supplied by the
//! caller, which keeps everything reparameterized and reproducible.

use std::f64::consts::{LN_2, PI};

use crate::{Error, Result};

/// Largest double strictly below one.
const BELOW_ONE: f64 = 1.0 - f64::EPSILON / 2.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogStdBounds {
    pub min: f64,
    pub max: f64,
}

impl Default for LogStdBounds {
    fn default() -> Self {
        Self {
            min: -10.0,
            max: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPolicyOutput {
    pub mean: Vec<f64>,
    pub log_std: Vec<f64>,
    pub sample: Vec<f64>,
    pub log_prob: f64,
}

impl GaussianPolicyOutput {
    /// `tanh(mean)`, the evaluation action.
    pub fn deterministic(&self) -> Vec<f64> {
        self.mean.iter().map(|m| m.tanh().clamp(-BELOW_ONE, BELOW_ONE)).collect()
    }
}

/// Forward values needed by [`SquashedGaussian::backward`].
#[derive(Debug, Clone)]
pub struct SquashedGaussian {
    bounds: LogStdBounds,
    raw_log_std_tanh: Vec<f64>,
    std: Vec<f64>,
    noise: Vec<f64>,
    pre_squash: Vec<f64>,
    pub output: GaussianPolicyOutput,
}

/// `log(1 - tanh(u)^2)` without cancellation.
fn log_one_minus_tanh_sq(u: f64) -> f64 {
    let z = -2.0 * u;
    let softplus = if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    };
    2.0 * (LN_2 - u - softplus)
}

impl SquashedGaussian {
    pub fn forward(raw: &[f64], noise: &[f64], bounds: LogStdBounds) -> Result<Self> {
        let dim = noise.len();
        if raw.len() != 2 * dim {
            return Err(Error::dims("SquashedGaussian::forward", 2 * dim, raw.len()));
        }
        let (mean, raw_ls) = raw.split_at(dim);
        let half_range = 0.5 * (bounds.max - bounds.min);
        let raw_log_std_tanh: Vec<f64> = raw_ls.iter().map(|r| r.tanh()).collect();
        let log_std: Vec<f64> = raw_log_std_tanh
            .iter()
            .map(|t| bounds.min + half_range * (t + 1.0))
            .collect();
        let std: Vec<f64> = log_std.iter().map(|l| l.exp()).collect();
        let mut pre_squash = Vec::with_capacity(dim);
        let mut sample = Vec::with_capacity(dim);
        let mut log_prob = 0.0;
        for i in 0..dim {
            let u = mean[i] + std[i] * noise[i];
            pre_squash.push(u);
            sample.push(u.tanh().clamp(-BELOW_ONE, BELOW_ONE));
            log_prob += -0.5 * noise[i] * noise[i] - log_std[i] - 0.5 * (2.0 * PI).ln()
                - log_one_minus_tanh_sq(u);
        }
        Ok(Self {
            bounds,
            raw_log_std_tanh,
            std,
            noise: noise.to_vec(),
            pre_squash,
            output: GaussianPolicyOutput {
                mean: mean.to_vec(),
                log_std,
                sample,
                log_prob,
            },
        })
    }

    /// Gradient with respect to the raw network outputs, given the gradient
    /// of the loss with respect to the sample and to the log-probability.
    pub fn backward(&self, d_sample: &[f64], d_log_prob: f64) -> Vec<f64> {
        let dim = self.noise.len();
        let half_range = 0.5 * (self.bounds.max - self.bounds.min);
        let mut grad = vec![0.0; 2 * dim];
        for i in 0..dim {
            let t = self.pre_squash[i].tanh();
            // d logp / du = 2 tanh(u)
            let g_u = d_sample[i] * (1.0 - t * t) + d_log_prob * 2.0 * t;
            grad[i] = g_u;
            let g_log_std = g_u * self.std[i] * self.noise[i] - d_log_prob;
            let rt = self.raw_log_std_tanh[i];
            grad[dim + i] = g_log_std * half_range * (1.0 - rt * rt);
        }
        grad
    }
}
