use std::path::Path;

use serde::{Deserialize, Serialize};

use super::train::checkpoint_path;
use super::{Environment, ScenarioConfig, SimError, StepRecord};
use crate::prosumer::HOURS_PER_DAY;
use crate::rl::{Checkpoint, Learner};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    /// Clearing price of every evaluated hour.
    pub prices: Vec<f64>,
    /// Whether the mean PV shape is zero in that hour.
    pub zero_pv_hour: Vec<bool>,
    /// Per-hour bus voltage magnitudes.
    pub v_mag: Vec<Vec<f64>>,
    /// Undiscounted cost summed over agents, per day.
    pub daily_cost: Vec<f64>,
    /// Total voltage deviation, per day.
    pub daily_voltage_deviation: Vec<f64>,
    pub steps: Vec<StepRecord>,
}

/// Loads each agent's checkpoint from `root`, at `step` or at the latest step saved.
pub fn load_learners(root: &Path, n_agents: usize, step: Option<usize>) -> Result<Vec<Learner>, SimError> {
    (0..n_agents)
        .map(|agent| {
            let step = match step {
                Some(s) => s,
                None => latest_step(root, agent)?,
            };
            let path = checkpoint_path(root, agent, step);
            if !path.is_file() {
                return Err(SimError::MissingCheckpoint { agent, path: path.display().to_string() });
            }
            Ok(Learner::from_checkpoint(Checkpoint::load(&path)?)?)
        })
        .collect()
}

fn latest_step(root: &Path, agent: usize) -> Result<usize, SimError> {
    let dir = root.join("agents").join(format!("agent_{agent}"));
    let missing = || SimError::MissingCheckpoint { agent, path: dir.display().to_string() };
    let entries = std::fs::read_dir(&dir).map_err(|_| missing())?;
    entries
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().to_str()?.strip_prefix("step_")?.parse::<usize>().ok())
        .max()
        .ok_or_else(missing)
}

/// Rolls the trained policies forward for `n_days` with learning disabled.
///
/// Uses the policy means unless `stochastic` is set. The environment starts fresh
/// from the scenario seed.
pub fn evaluate(
    learners: &mut [Learner],
    scenario: &ScenarioConfig,
    n_days: usize,
    stochastic: bool,
) -> Result<EvaluationReport, SimError> {
    let mut env = Environment::new(scenario)?;
    if learners.len() != env.n_agents() {
        return Err(SimError::MissingCheckpoint {
            agent: learners.len().min(env.n_agents()),
            path: format!("expected {} learners, got {}", env.n_agents(), learners.len()),
        });
    }
    let profiles = scenario.profiles()?;
    let mut report = EvaluationReport {
        prices: Vec::new(),
        zero_pv_hour: Vec::new(),
        v_mag: Vec::new(),
        daily_cost: Vec::new(),
        daily_voltage_deviation: Vec::new(),
        steps: Vec::new(),
    };
    for day in 0..n_days {
        let mut cost = 0.0;
        let mut deviation = 0.0;
        for _ in 0..HOURS_PER_DAY {
            let hour = env.hour();
            let obs = env.observe();
            let mut actions = Vec::with_capacity(learners.len());
            for ((learner, o), cfg) in learners.iter_mut().zip(&obs).zip(&scenario.prosumers) {
                let x = o.features(cfg, &scenario.tariffs);
                let a = if stochastic { learner.act(&x)?.action } else { learner.act_mean(&x)? };
                actions.push(a);
            }
            let rec = env.step(&actions, day)?;
            cost -= rec.agents.iter().map(|a| a.total).sum::<f64>();
            deviation += rec.voltage_deviation;
            report.prices.push(rec.price);
            report.zero_pv_hour.push(profiles.pv_coeff[hour] == 0.0);
            report.v_mag.push(rec.v_mag.clone());
            report.steps.push(rec);
        }
        report.daily_cost.push(cost);
        report.daily_voltage_deviation.push(deviation);
    }
    Ok(report)
}
