use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use super::metrics::{write_metrics_csv, write_steps_csv, EpisodeMetrics};
use super::{Environment, ScenarioConfig, SimError, StepRecord};
use crate::prosumer::{OBS_DIM, HOURS_PER_DAY};
use crate::rl::{Learner, Transition};
use crate::rng::{stream, Stream};

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Where metrics, step logs and checkpoints go. Nothing is written when `None`.
    pub out_dir: Option<PathBuf>,
    /// Keep and write per-hour step records.
    pub log_steps: bool,
}

#[derive(Debug, Clone, Default)]
pub struct TrainingLog {
    pub metrics: Vec<EpisodeMetrics>,
    pub steps: Vec<StepRecord>,
    pub updates: usize,
    /// Updates abandoned because of a non-finite loss.
    pub failed_updates: usize,
}

/// `<root>/agents/agent_<id>/step_<n>/checkpoint.json`.
pub fn checkpoint_path(root: &Path, agent: usize, step: usize) -> PathBuf {
    root.join("agents").join(format!("agent_{agent}")).join(format!("step_{step}")).join("checkpoint.json")
}

/// Environment plus one independent learner per prosumer.
#[derive(Debug, Clone)]
pub struct Trainer {
    env: Environment,
    learners: Vec<Learner>,
    episode: usize,
    updates: usize,
    failed_updates: usize,
}

impl Trainer {
    pub fn new(scenario: &ScenarioConfig) -> Result<Self, SimError> {
        let env = Environment::new(scenario)?;
        let learners = scenario
            .prosumers
            .iter()
            .enumerate()
            .map(|(i, p)| {
                Learner::new(
                    scenario.ppo.clone(),
                    OBS_DIM,
                    p.action_dim(),
                    &mut stream(scenario.seed, Stream::Init(i)),
                    stream(scenario.seed, Stream::Policy(i)),
                )
            })
            .collect();
        Ok(Self { env, learners, episode: 0, updates: 0, failed_updates: 0 })
    }

    pub fn env(&self) -> &Environment {
        &self.env
    }

    pub fn learners(&self) -> &[Learner] {
        &self.learners
    }

    pub fn episode(&self) -> usize {
        self.episode
    }

    /// Runs 24 hourly steps with stochastic actions, learning as batches fill up.
    pub fn run_episode(&mut self) -> Result<(EpisodeMetrics, Vec<StepRecord>), SimError> {
        let mut steps = Vec::with_capacity(HOURS_PER_DAY);
        for hour in 0..HOURS_PER_DAY {
            let tariffs = self.env.scenario().tariffs;
            let obs = self.env.observe();
            let features: Vec<Vec<f64>> = obs
                .iter()
                .zip(&self.env.scenario().prosumers)
                .map(|(o, cfg)| o.features(cfg, &tariffs).to_vec())
                .collect();

            let mut actions = Vec::with_capacity(self.learners.len());
            let mut outputs = Vec::with_capacity(self.learners.len());
            for (learner, x) in self.learners.iter_mut().zip(&features) {
                if learner.ready() {
                    let bootstrap = learner.value(x)?;
                    match learner.update(bootstrap) {
                        Ok(_) => self.updates += 1,
                        Err(e) => {
                            log::warn!("update skipped at step {}: {e}", self.env.global_step());
                            self.failed_updates += 1;
                        }
                    }
                }
                let out = learner.act(x)?;
                actions.push(out.action.clone());
                outputs.push(out);
            }

            let record = self.env.step(&actions, self.episode)?;
            for ((learner, x), (out, agent)) in
                self.learners.iter_mut().zip(features).zip(outputs.into_iter().zip(&record.agents))
            {
                learner.store(Transition {
                    obs: x,
                    action: out.action,
                    log_prob: out.log_prob,
                    reward: agent.total,
                    value: out.value,
                    done: hour + 1 == HOURS_PER_DAY,
                });
            }
            steps.push(record);
        }
        let metrics = EpisodeMetrics::from_steps(self.episode, &steps, self.env.scenario().ppo.gamma);
        self.episode += 1;
        Ok((metrics, steps))
    }

    /// Saves every learner under `root` at the current global step.
    pub fn save_checkpoints(&self, root: &Path) -> Result<Vec<PathBuf>, SimError> {
        let step = self.env.global_step();
        self.learners
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let path = checkpoint_path(root, i, step);
                l.checkpoint().save(&path)?;
                Ok(path)
            })
            .collect()
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, SimError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|source| SimError::Io { path: dir.display().to_string(), source })?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|source| SimError::Io { path: path.display().to_string(), source })
}

/// Trains all agents for `scenario.n_episodes` episodes.
///
/// With an output directory this writes `metrics.csv`, optionally `steps.csv`, and
/// checkpoints on the scenario's schedule plus one at the end. A non-finite metric
/// stops training and writes `diagnostic.json`.
pub fn train(scenario: &ScenarioConfig, opts: &TrainOptions) -> Result<TrainingLog, SimError> {
    let mut trainer = Trainer::new(scenario)?;
    let mut log = TrainingLog::default();
    for _ in 0..scenario.n_episodes {
        let (metrics, steps) = trainer.run_episode()?;
        if let Some(field) = metrics.non_finite_field() {
            let dump = match &opts.out_dir {
                Some(dir) => {
                    let path = dir.join("diagnostic.json");
                    let body = serde_json::json!({ "metrics": metrics, "steps": steps });
                    std::fs::create_dir_all(dir)
                        .and_then(|_| std::fs::write(&path, body.to_string()))
                        .map_err(|source| SimError::Io { path: path.display().to_string(), source })?;
                    Some(path)
                }
                None => None,
            };
            log::error!("non-finite {field} in episode {}", metrics.episode);
            return Err(SimError::NonFinite { episode: metrics.episode, metric: field.to_string(), dump });
        }
        log::info!(
            "episode {} cost {:.4e} deviation {:.5} mean price {:.3}",
            metrics.episode,
            metrics.episodic_total_cost,
            metrics.total_voltage_deviation,
            metrics.mean_price
        );
        log.metrics.push(metrics);
        if opts.log_steps {
            log.steps.extend(steps);
        }
        if let (Some(dir), Some(every)) = (&opts.out_dir, scenario.checkpoint_every) {
            if trainer.episode() % every == 0 && trainer.episode() < scenario.n_episodes {
                trainer.save_checkpoints(dir)?;
            }
        }
    }
    log.updates = trainer.updates;
    log.failed_updates = trainer.failed_updates;

    if let Some(dir) = &opts.out_dir {
        write_metrics_csv(create(&dir.join("metrics.csv"))?, &log.metrics)?;
        if opts.log_steps {
            write_steps_csv(create(&dir.join("steps.csv"))?, &log.steps)?;
        }
        if scenario.n_episodes > 0 {
            trainer.save_checkpoints(dir)?;
        }
    }
    Ok(log)
}
