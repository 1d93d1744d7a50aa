//! Clipped-surrogate PPO: advantage estimation, actor ascent, critic regression.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::adam::AdamState;
use super::mlp::Mlp;
use super::policy::GaussianPolicy;
use super::RlError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueTarget {
    /// Discounted return-to-go (with bootstrap at chunk ends).
    Return,
    /// The immediate reward only.
    Reward,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoConfig {
    pub gamma: f64,
    pub clip_eps: f64,
    pub actor_lr: f64,
    /// Step size of the log-std vector; `None` uses `actor_lr`.
    pub log_std_lr: Option<f64>,
    pub critic_lr: f64,
    pub epochs_per_update: usize,
    pub minibatch_size: usize,
    pub steps_per_update: usize,
    /// `None` selects plain return-to-go advantages.
    pub gae_lambda: Option<f64>,
    pub value_target: ValueTarget,
    /// Multiplies rewards before they enter returns and advantages.
    pub reward_scale: f64,
    pub normalize_advantages: bool,
    /// Train the critic on standardized return targets.
    pub value_norm: bool,
    /// Global-norm gradient clipping per minibatch step.
    pub max_grad_norm: Option<f64>,
    pub hidden: Vec<usize>,
    /// Initial log standard deviation of every action dimension (raw action units).
    pub init_log_std: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.999,
            clip_eps: 0.2,
            actor_lr: 3e-4,
            log_std_lr: None,
            critic_lr: 1e-3,
            epochs_per_update: 10,
            minibatch_size: 64,
            steps_per_update: 240,
            gae_lambda: None,
            value_target: ValueTarget::Return,
            reward_scale: 1.0,
            normalize_advantages: true,
            value_norm: true,
            max_grad_norm: None,
            hidden: vec![64, 64],
            init_log_std: 0.5f64.ln(),
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<(), RlError> {
        let bad = |field: &str, reason: &str| RlError::InvalidConfig {
            field: field.to_string(),
            reason: reason.to_string(),
        };
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(bad("gamma", "must lie in (0, 1)"));
        }
        if !(self.clip_eps > 0.0) {
            return Err(bad("clip_eps", "must be positive"));
        }
        if !(self.actor_lr > 0.0 && self.critic_lr > 0.0) {
            return Err(bad("actor_lr", "learning rates must be positive"));
        }
        if self.log_std_lr.is_some_and(|lr| !(lr > 0.0)) {
            return Err(bad("log_std_lr", "must be positive"));
        }
        if self.epochs_per_update == 0 || self.minibatch_size == 0 || self.steps_per_update == 0 {
            return Err(bad("steps_per_update", "epoch, minibatch and update sizes must be >= 1"));
        }
        if let Some(l) = self.gae_lambda {
            if !(l > 0.0 && l <= 1.0) {
                return Err(bad("gae_lambda", "must lie in (0, 1]"));
            }
        }
        if !(self.reward_scale > 0.0 && self.reward_scale.is_finite()) {
            return Err(bad("reward_scale", "must be positive"));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(bad("hidden", "need at least one non-empty hidden layer"));
        }
        Ok(())
    }
}

/// One stored environment step for a single agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    /// Network input (scaled observation).
    pub obs: Vec<f64>,
    /// Raw policy output before clamping.
    pub action: Vec<f64>,
    pub log_prob: f64,
    /// Unscaled reward.
    pub reward: f64,
    /// Critic estimate of the state value, in scaled-reward units.
    pub value: f64,
    /// Marks the last step of a trajectory chunk; the return is bootstrapped from the
    /// next transition's value.
    pub done: bool,
}

/// Returns and advantages for a sequence of transitions.
///
/// Chunks end at `done` transitions (bootstrapped with the next stored value) and
/// at the end of the slice (bootstrapped with `bootstrap_value`). Advantages are
/// returned before normalization.
pub fn compute_advantages(
    trajectory: &[Transition],
    cfg: &PpoConfig,
    bootstrap_value: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = trajectory.len();
    let mut returns = vec![0.0; n];
    let mut advantages = vec![0.0; n];
    let gamma = cfg.gamma;
    let mut next_return = bootstrap_value;
    let mut next_adv = 0.0;
    for t in (0..n).rev() {
        let tr = &trajectory[t];
        let next_value = if t + 1 == n { bootstrap_value } else { trajectory[t + 1].value };
        if tr.done && t + 1 < n {
            next_return = next_value;
            next_adv = 0.0;
        }
        let r = tr.reward * cfg.reward_scale;
        match cfg.gae_lambda {
            None => {
                let g = r + gamma * next_return;
                returns[t] = g;
                advantages[t] = g - tr.value;
                next_return = g;
            }
            Some(lambda) => {
                let delta = r + gamma * next_value - tr.value;
                let a = delta + gamma * lambda * next_adv;
                advantages[t] = a;
                returns[t] = a + tr.value;
                next_adv = a;
            }
        }
    }
    (returns, advantages)
}

/// Standardizes to zero mean and unit variance in place (no-op for < 2 entries).
pub fn normalize(values: &mut [f64]) {
    if values.len() < 2 {
        return;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt().max(1e-8);
    values.iter_mut().for_each(|v| *v = (*v - mean) / std);
}

/// `(1 + eps) A` for non-negative advantages, `(1 - eps) A` otherwise.
pub fn clip_bound(eps: f64, advantage: f64) -> f64 {
    if advantage >= 0.0 {
        (1.0 + eps) * advantage
    } else {
        (1.0 - eps) * advantage
    }
}

/// Per-sample clipped surrogate `min(ratio * A, g(eps, A))`.
pub fn clipped_term(ratio: f64, advantage: f64, eps: f64) -> f64 {
    (ratio * advantage).min(clip_bound(eps, advantage))
}

/// Sample used by the actor update.
#[derive(Debug, Clone, PartialEq)]
pub struct ActorSample<'a> {
    pub obs: &'a [f64],
    pub action: &'a [f64],
    pub old_log_prob: f64,
    pub advantage: f64,
}

/// Mean clipped surrogate over `batch` and its gradient with respect to the
/// policy parameters (`(mean-net grads, log-std grads)`).
pub fn clipped_objective_and_grad(
    policy: &GaussianPolicy,
    batch: &[ActorSample<'_>],
    eps: f64,
) -> Result<(f64, Vec<f64>, Vec<f64>), RlError> {
    let mut net_grads = vec![0.0; policy.mean.n_params()];
    let mut std_grads = vec![0.0; policy.action_dim()];
    let inv_n = 1.0 / batch.len() as f64;
    let mut objective = 0.0;
    for s in batch {
        let (mean, cache) = policy.forward(s.obs)?;
        let log_prob = super::policy::gaussian_log_prob(s.action, &mean, &policy.log_std);
        let ratio = (log_prob - s.old_log_prob).exp();
        let surrogate = ratio * s.advantage;
        let bound = clip_bound(eps, s.advantage);
        if surrogate < bound {
            objective += surrogate * inv_n;
            // d(ratio A)/dθ = A ratio d log π/dθ
            policy.accumulate_log_prob_grad(
                &cache,
                s.action,
                s.advantage * ratio * inv_n,
                &mut net_grads,
                &mut std_grads,
            );
        } else {
            objective += bound * inv_n;
        }
    }
    Ok((objective, net_grads, std_grads))
}

/// Mean squared error of the critic over `(obs, target)` pairs and its gradient.
pub fn value_loss_and_grad(critic: &Mlp, batch: &[(&[f64], f64)]) -> Result<(f64, Vec<f64>), RlError> {
    let mut grads = vec![0.0; critic.n_params()];
    let inv_n = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    for &(obs, target) in batch {
        let (out, cache) = critic.forward(obs)?;
        let err = out[0] - target;
        loss += err * err * inv_n;
        critic.backward(&cache, &[2.0 * err * inv_n], &mut grads);
    }
    Ok((loss, grads))
}

fn clip_global_norm(grads: &mut [&mut [f64]], max_norm: Option<f64>) {
    let Some(max_norm) = max_norm else { return };
    let norm = grads.iter().flat_map(|g| g.iter()).map(|v| v * v).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grads.iter_mut().for_each(|g| g.iter_mut().for_each(|v| *v *= s));
    }
}

/// Optimizer state owned by one actor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActorOptimizer {
    pub net: AdamState,
    pub log_std: AdamState,
}

impl ActorOptimizer {
    pub fn new(policy: &GaussianPolicy) -> Self {
        Self { net: AdamState::new(policy.mean.n_params()), log_std: AdamState::new(policy.action_dim()) }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    /// Surrogate objective of the first minibatch pass (before any step).
    pub initial_objective: f64,
    pub final_objective: f64,
    pub steps: usize,
}

fn minibatches<R: Rng + ?Sized>(n: usize, size: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.chunks(size).map(|c| c.to_vec()).collect()
}

/// Several epochs of minibatched Adam ascent on the clipped surrogate.
///
/// `old_log_prob` of every sample must come from the parameters the batch was
/// collected with. A non-finite objective restores the pre-update parameters and
/// optimizer state and returns [`RlError::NonFiniteLoss`].
pub fn ppo_actor_update<R: Rng + ?Sized>(
    policy: &mut GaussianPolicy,
    opt: &mut ActorOptimizer,
    batch: &[ActorSample<'_>],
    cfg: &PpoConfig,
    rng: &mut R,
) -> Result<UpdateStats, RlError> {
    if batch.is_empty() {
        return Err(RlError::EmptyBatch);
    }
    let snapshot = (policy.clone(), opt.clone());
    let mut stats = UpdateStats::default();
    for epoch in 0..cfg.epochs_per_update {
        for (k, mb) in minibatches(batch.len(), cfg.minibatch_size, rng).into_iter().enumerate() {
            let samples: Vec<ActorSample<'_>> = mb.iter().map(|&i| batch[i].clone()).collect();
            let (obj, mut g_net, mut g_std) = clipped_objective_and_grad(policy, &samples, cfg.clip_eps)?;
            let finite = obj.is_finite()
                && g_net.iter().chain(&g_std).all(|v| v.is_finite());
            if !finite {
                (*policy, *opt) = snapshot;
                return Err(RlError::NonFiniteLoss);
            }
            if epoch == 0 && k == 0 {
                stats.initial_objective = obj;
            }
            stats.final_objective = obj;
            // ascent: descend on the negated objective
            g_net.iter_mut().chain(g_std.iter_mut()).for_each(|v| *v = -*v);
            clip_global_norm(&mut [&mut g_net, &mut g_std], cfg.max_grad_norm);
            opt.net.step(&mut policy.mean.params, &g_net, cfg.actor_lr);
            opt.log_std.step(&mut policy.log_std, &g_std, cfg.log_std_lr.unwrap_or(cfg.actor_lr));
            stats.steps += 1;
        }
    }
    if !policy.is_finite() {
        (*policy, *opt) = snapshot;
        return Err(RlError::NonFiniteLoss);
    }
    Ok(stats)
}

/// Minibatched Adam regression of the critic onto `targets`.
pub fn critic_update<R: Rng + ?Sized>(
    critic: &mut Mlp,
    opt: &mut AdamState,
    batch: &[(&[f64], f64)],
    cfg: &PpoConfig,
    rng: &mut R,
) -> Result<UpdateStats, RlError> {
    if batch.is_empty() {
        return Err(RlError::EmptyBatch);
    }
    let snapshot = (critic.clone(), opt.clone());
    let mut stats = UpdateStats::default();
    for epoch in 0..cfg.epochs_per_update {
        for (k, mb) in minibatches(batch.len(), cfg.minibatch_size, rng).into_iter().enumerate() {
            let samples: Vec<(&[f64], f64)> = mb.iter().map(|&i| batch[i]).collect();
            let (loss, mut grads) = value_loss_and_grad(critic, &samples)?;
            if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                (*critic, *opt) = snapshot;
                return Err(RlError::NonFiniteLoss);
            }
            if epoch == 0 && k == 0 {
                stats.initial_objective = loss;
            }
            stats.final_objective = loss;
            clip_global_norm(&mut [&mut grads], cfg.max_grad_norm);
            opt.step(&mut critic.params, &grads, cfg.critic_lr);
            stats.steps += 1;
        }
    }
    Ok(stats)
}
