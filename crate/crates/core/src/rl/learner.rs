//! One agent's independent PPO learner and its checkpoint format.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::adam::AdamState;
use super::mlp::Mlp;
use super::policy::GaussianPolicy;
use super::ppo::{
    compute_advantages, critic_update, normalize, ppo_actor_update, ActorOptimizer, ActorSample,
    PpoConfig, Transition, UpdateStats, ValueTarget,
};
use super::RlError;
use crate::rng::SimRng;

pub const CHECKPOINT_VERSION: u32 = 1;

/// Running mean and variance of value targets, merged batch by batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningNorm {
    pub mean: f64,
    pub var: f64,
    pub count: f64,
}

impl Default for RunningNorm {
    fn default() -> Self {
        Self { mean: 0.0, var: 1.0, count: 0.0 }
    }
}

impl RunningNorm {
    pub fn update(&mut self, xs: &[f64]) {
        if xs.is_empty() {
            return;
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        if self.count == 0.0 {
            (self.mean, self.var, self.count) = (mean, var, n);
            return;
        }
        let total = self.count + n;
        let delta = mean - self.mean;
        let m2 = self.var * self.count + var * n + delta * delta * self.count * n / total;
        self.mean += delta * n / total;
        self.var = m2 / total;
        self.count = total;
    }

    pub fn std(&self) -> f64 {
        self.var.sqrt().max(1e-6)
    }

    pub fn normalize(&self, x: f64) -> f64 {
        (x - self.mean) / self.std()
    }

    pub fn denormalize(&self, y: f64) -> f64 {
        self.mean + y * self.std()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LearnerStats {
    pub actor: UpdateStats,
    pub critic: UpdateStats,
    pub samples: usize,
}

#[derive(Debug, Clone)]
pub struct Learner {
    cfg: PpoConfig,
    pub actor: GaussianPolicy,
    pub critic: Mlp,
    pub actor_opt: ActorOptimizer,
    pub critic_opt: AdamState,
    pub value_norm: RunningNorm,
    rng: SimRng,
    buffer: Vec<Transition>,
    pub updates: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActOutput {
    pub action: Vec<f64>,
    pub log_prob: f64,
    pub value: f64,
}

impl Learner {
    /// Fresh Glorot-initialized actor and critic. `init_rng` is only used here;
    /// `policy_rng` drives sampling and minibatch shuffling afterwards.
    pub fn new(cfg: PpoConfig, obs_dim: usize, act_dim: usize, init_rng: &mut SimRng, policy_rng: SimRng) -> Self {
        let mut sizes = vec![obs_dim];
        sizes.extend(&cfg.hidden);
        let mut actor_sizes = sizes.clone();
        actor_sizes.push(act_dim);
        let mut critic_sizes = sizes;
        critic_sizes.push(1);
        let actor = GaussianPolicy::new(&actor_sizes, cfg.init_log_std, init_rng);
        let critic = Mlp::glorot(&critic_sizes, init_rng);
        Self {
            actor_opt: ActorOptimizer::new(&actor),
            critic_opt: AdamState::new(critic.n_params()),
            actor,
            critic,
            value_norm: RunningNorm::default(),
            rng: policy_rng,
            buffer: Vec::new(),
            updates: 0,
            cfg,
        }
    }

    pub fn config(&self) -> &PpoConfig {
        &self.cfg
    }

    /// State value in scaled-reward units.
    pub fn value(&self, obs: &[f64]) -> Result<f64, RlError> {
        let raw = self.critic.predict(obs)?[0];
        Ok(if self.cfg.value_norm { self.value_norm.denormalize(raw) } else { raw })
    }

    pub fn act(&mut self, obs: &[f64]) -> Result<ActOutput, RlError> {
        let (action, log_prob) = self.actor.sample(obs, &mut self.rng)?;
        let value = self.value(obs)?;
        Ok(ActOutput { action, log_prob, value })
    }

    pub fn act_mean(&self, obs: &[f64]) -> Result<Vec<f64>, RlError> {
        self.actor.mean_action(obs)
    }

    pub fn store(&mut self, t: Transition) {
        self.buffer.push(t);
    }

    pub fn buffered(&self) -> usize {
        self.buffer.len()
    }

    pub fn buffer(&self) -> &[Transition] {
        &self.buffer
    }

    pub fn ready(&self) -> bool {
        self.buffer.len() >= self.cfg.steps_per_update
    }

    pub fn rng_mut(&mut self) -> &mut SimRng {
        &mut self.rng
    }

    /// Runs one PPO update over the buffered transitions and clears the buffer.
    ///
    /// `bootstrap_value` is the critic value of the observation following the last
    /// buffered step. On a non-finite loss the affected network keeps its
    /// pre-update parameters and the error is returned; the buffer is still cleared.
    pub fn update(&mut self, bootstrap_value: f64) -> Result<LearnerStats, RlError> {
        let buffer = std::mem::take(&mut self.buffer);
        if buffer.is_empty() {
            return Err(RlError::EmptyBatch);
        }
        let (returns, mut advantages) = compute_advantages(&buffer, &self.cfg, bootstrap_value);
        let mut targets = match self.cfg.value_target {
            ValueTarget::Return => returns,
            ValueTarget::Reward => buffer.iter().map(|t| t.reward * self.cfg.reward_scale).collect(),
        };
        if self.cfg.normalize_advantages {
            normalize(&mut advantages);
        }
        if self.cfg.value_norm {
            self.value_norm.update(&targets);
            targets.iter_mut().for_each(|y| *y = self.value_norm.normalize(*y));
        }

        let actor_batch: Vec<ActorSample<'_>> = buffer
            .iter()
            .zip(&advantages)
            .map(|(t, &a)| ActorSample { obs: &t.obs, action: &t.action, old_log_prob: t.log_prob, advantage: a })
            .collect();
        let actor = ppo_actor_update(&mut self.actor, &mut self.actor_opt, &actor_batch, &self.cfg, &mut self.rng);
        let critic_batch: Vec<(&[f64], f64)> =
            buffer.iter().zip(&targets).map(|(t, &y)| (t.obs.as_slice(), y)).collect();
        let critic = critic_update(&mut self.critic, &mut self.critic_opt, &critic_batch, &self.cfg, &mut self.rng);
        self.updates += 1;
        Ok(LearnerStats { actor: actor?, critic: critic?, samples: buffer.len() })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config: self.cfg.clone(),
            actor: self.actor.clone(),
            critic: self.critic.clone(),
            actor_opt: self.actor_opt.clone(),
            critic_opt: self.critic_opt.clone(),
            value_norm: self.value_norm.clone(),
            rng: self.rng.clone(),
            updates: self.updates,
        }
    }

    pub fn from_checkpoint(cp: Checkpoint) -> Result<Self, RlError> {
        if cp.version != CHECKPOINT_VERSION {
            return Err(RlError::Checkpoint(format!(
                "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
                cp.version
            )));
        }
        if cp.actor.mean.input_dim() != cp.critic.input_dim() || cp.critic.output_dim() != 1 {
            return Err(RlError::Checkpoint("actor and critic shapes are inconsistent".into()));
        }
        Ok(Self {
            cfg: cp.config,
            actor: cp.actor,
            critic: cp.critic,
            actor_opt: cp.actor_opt,
            critic_opt: cp.critic_opt,
            value_norm: cp.value_norm,
            rng: cp.rng,
            buffer: Vec::new(),
            updates: cp.updates,
        })
    }

    /// Uniform draw from the learner's own stream (used for tie-free shuffles in tests).
    pub fn draw(&mut self) -> f64 {
        self.rng.random()
    }
}

/// Serialized learner: parameters, optimizer moments, target normalizer and rng state.
///
/// Stored as JSON; every `f64` survives a save/load cycle bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: PpoConfig,
    pub actor: GaussianPolicy,
    pub critic: Mlp,
    pub actor_opt: ActorOptimizer,
    pub critic_opt: AdamState,
    pub value_norm: RunningNorm,
    pub rng: SimRng,
    pub updates: u64,
}

impl Checkpoint {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), RlError> {
        let path = path.as_ref();
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| RlError::Checkpoint(format!("{}: {e}", dir.display())))?;
        }
        let json = serde_json::to_string(self).map_err(|e| RlError::Checkpoint(e.to_string()))?;
        std::fs::write(path, json).map_err(|e| RlError::Checkpoint(format!("{}: {e}", path.display())))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, RlError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| RlError::Checkpoint(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| RlError::Checkpoint(format!("{}: {e}", path.display())))
    }
}
