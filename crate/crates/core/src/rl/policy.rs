//! Diagonal Gaussian policy: MLP mean head plus a state-independent log-std vector.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::mlp::{ForwardCache, Mlp};
use super::RlError;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

/// `log N(action; mean, diag(exp(log_std))^2)`.
pub fn gaussian_log_prob(action: &[f64], mean: &[f64], log_std: &[f64]) -> f64 {
    action
        .iter()
        .zip(mean)
        .zip(log_std)
        .map(|((&a, &mu), &ls)| {
            let z = (a - mu) * (-ls).exp();
            -0.5 * z * z - ls - HALF_LN_2PI
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPolicy {
    pub mean: Mlp,
    pub log_std: Vec<f64>,
}

impl GaussianPolicy {
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], init_log_std: f64, rng: &mut R) -> Self {
        let mean = Mlp::glorot(sizes, rng);
        let log_std = vec![init_log_std; mean.output_dim()];
        Self { mean, log_std }
    }

    pub fn action_dim(&self) -> usize {
        self.log_std.len()
    }

    pub fn is_finite(&self) -> bool {
        self.mean.is_finite() && self.log_std.iter().all(|v| v.is_finite())
    }

    pub fn mean_action(&self, obs: &[f64]) -> Result<Vec<f64>, RlError> {
        self.mean.predict(obs)
    }

    /// `mean + exp(log_std) * noise` for a given standard-normal draw.
    pub fn action_from_noise(&self, mean: &[f64], noise: &[f64]) -> Vec<f64> {
        mean.iter()
            .zip(&self.log_std)
            .zip(noise)
            .map(|((&mu, &ls), &z)| mu + ls.exp() * z)
            .collect()
    }

    /// Draws an action and returns it with its log-density.
    pub fn sample<R: Rng + ?Sized>(&self, obs: &[f64], rng: &mut R) -> Result<(Vec<f64>, f64), RlError> {
        let mean = self.mean.predict(obs)?;
        let noise: Vec<f64> = (0..mean.len()).map(|_| rng.sample(StandardNormal)).collect();
        let action = self.action_from_noise(&mean, &noise);
        let log_prob = gaussian_log_prob(&action, &mean, &self.log_std);
        Ok((action, log_prob))
    }

    pub fn log_prob(&self, obs: &[f64], action: &[f64]) -> Result<f64, RlError> {
        let mean = self.mean.predict(obs)?;
        if action.len() != mean.len() {
            return Err(RlError::DimensionMismatch { expected: mean.len(), got: action.len() });
        }
        Ok(gaussian_log_prob(action, &mean, &self.log_std))
    }

    /// Forward pass keeping the cache for [`Self::accumulate_log_prob_grad`].
    pub fn forward(&self, obs: &[f64]) -> Result<(Vec<f64>, ForwardCache), RlError> {
        self.mean.forward(obs)
    }

    /// Adds `scale * d log_prob / d params` into the mean-net and log-std gradient buffers.
    pub fn accumulate_log_prob_grad(
        &self,
        cache: &ForwardCache,
        action: &[f64],
        scale: f64,
        net_grads: &mut [f64],
        log_std_grads: &mut [f64],
    ) {
        let mean = cache.output();
        let mut upstream = vec![0.0; mean.len()];
        for d in 0..mean.len() {
            let inv_var = (-2.0 * self.log_std[d]).exp();
            let diff = action[d] - mean[d];
            upstream[d] = scale * diff * inv_var;
            log_std_grads[d] += scale * (diff * diff * inv_var - 1.0);
        }
        self.mean.backward(cache, &upstream, net_grads);
    }
}
