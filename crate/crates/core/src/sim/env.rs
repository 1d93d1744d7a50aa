use serde::{Deserialize, Serialize};

use super::{ScenarioConfig, SimError};
use crate::grid::{self, NetworkModel, VoltageViolation};
use crate::market::{self, Bid, ClearingResult};
use crate::prosumer::{
    self, assemble_observation, Action, Exogenous, ExogenousProfiles, InjectionParts, Observation,
    PriceHistory, ProsumerState, HOURS_PER_DAY,
};
use crate::rng::{stream, SimRng, Stream};

/// What happened to one agent during one hour.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentStep {
    pub bid: f64,
    pub comfort: f64,
    /// Market settlement, including imbalance settlement when enabled.
    pub market: f64,
    /// This agent's equal share of the system voltage penalty.
    pub voltage_share: f64,
    pub total: f64,
    pub p_inj_kw: f64,
    pub q_inj_kvar: f64,
    pub soc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub episode: usize,
    pub hour: usize,
    /// Global step index since the start of the run.
    pub t: usize,
    pub agents: Vec<AgentStep>,
    pub sdr: f64,
    pub price: f64,
    pub v_mag: Vec<f64>,
    /// System voltage penalty (non-positive).
    pub voltage_penalty: f64,
    /// Sum of per-bus band deviations, pu.
    pub voltage_deviation: f64,
    pub pf_converged: bool,
}

/// The physical and market side of the multi-agent problem.
///
/// Call [`Environment::observe`] and then [`Environment::step`] once per hour.
#[derive(Debug, Clone)]
pub struct Environment {
    scenario: ScenarioConfig,
    net: NetworkModel,
    profiles: ExogenousProfiles,
    states: Vec<ProsumerState>,
    noise: Vec<SimRng>,
    price_rng: SimRng,
    prices: PriceHistory,
    v_mag: Vec<f64>,
    /// Exogenous values and lagged price drawn for the current hour.
    pending: Option<(Vec<Exogenous>, f64)>,
    t: usize,
}

impl Environment {
    pub fn new(scenario: &ScenarioConfig) -> Result<Self, SimError> {
        scenario.validate()?;
        let net = scenario.build_network()?;
        let profiles = scenario.profiles()?.clone();
        let states = scenario.prosumers.iter().map(ProsumerState::initial).collect();
        let noise = (0..scenario.prosumers.len()).map(|i| stream(scenario.seed, Stream::Noise(i))).collect();
        Ok(Self {
            v_mag: vec![scenario.slack_v; net.n_buses()],
            scenario: scenario.clone(),
            net,
            profiles,
            states,
            noise,
            price_rng: stream(scenario.seed, Stream::PriceFallback),
            prices: PriceHistory::new(),
            pending: None,
            t: 0,
        })
    }

    pub fn scenario(&self) -> &ScenarioConfig {
        &self.scenario
    }

    pub fn network(&self) -> &NetworkModel {
        &self.net
    }

    pub fn n_agents(&self) -> usize {
        self.states.len()
    }

    pub fn states(&self) -> &[ProsumerState] {
        &self.states
    }

    pub fn global_step(&self) -> usize {
        self.t
    }

    pub fn hour(&self) -> usize {
        self.t % HOURS_PER_DAY
    }

    pub fn prices(&self) -> &PriceHistory {
        &self.prices
    }

    /// Draws this hour's exogenous values and returns every agent's observation.
    ///
    /// Calling it twice without a [`Environment::step`] in between returns the same
    /// observations without drawing again.
    pub fn observe(&mut self) -> Vec<Observation> {
        let hour = self.hour();
        if self.pending.is_none() {
            let exo = self
                .scenario
                .prosumers
                .iter()
                .zip(self.noise.iter_mut())
                .map(|(cfg, rng)| prosumer::sample_exogenous(hour, &self.profiles, cfg, rng))
                .collect();
            let lag = self.prices.lag24(self.t, &self.scenario.tariffs, &mut self.price_rng);
            self.pending = Some((exo, lag));
        }
        let (exo, lag) = self.pending.as_ref().expect("sampled above");
        let lag = *lag;
        self.scenario
            .prosumers
            .iter()
            .zip(exo)
            .zip(&self.states)
            .map(|((cfg, e), s)| assemble_observation(hour, e, self.v_mag[cfg.bus_id], s.soc, lag))
            .collect()
    }

    /// Applies the agents' raw policy outputs for the current hour.
    ///
    /// One market clearing and one power-flow solve. The voltage penalty uses the
    /// voltages that result from these actions. Power-flow failure is charged as
    /// the maximal violation and never aborts the step.
    pub fn step(&mut self, raw_actions: &[Vec<f64>], episode: usize) -> Result<StepRecord, SimError> {
        let n = self.n_agents();
        if raw_actions.len() != n {
            return Err(SimError::Prosumer(prosumer::ProsumerError::ActionLength { expected: n, got: raw_actions.len() }));
        }
        self.observe();
        let (exo, _) = self.pending.take().expect("observed above");
        let sc = &self.scenario;
        let tariffs = sc.tariffs;

        let actions = sc
            .prosumers
            .iter()
            .zip(raw_actions)
            .zip(&exo)
            .map(|((cfg, raw), e)| Action::from_raw(raw, cfg, e.pv_gen))
            .collect::<Result<Vec<_>, _>>()?;

        let bids: Vec<Bid> = actions.iter().enumerate().map(|(i, a)| Bid::new(i, a.bid)).collect();
        let clearing: ClearingResult =
            if sc.p2p_enabled { market::clear(&bids, &tariffs)? } else { market::settle_no_p2p(&bids, &tariffs)? };

        let mut next_states = Vec::with_capacity(n);
        let mut injections = vec![(0.0, 0.0); self.net.n_buses()];
        let mut agents = Vec::with_capacity(n);
        for (i, ((cfg, action), e)) in sc.prosumers.iter().zip(&actions).zip(&exo).enumerate() {
            let state = &self.states[i];
            let (zone_temps, hvac_power) =
                prosumer::hvac_step(&state.zone_temps, &action.flow, &action.discharge_temp, e.outside_temp, cfg);
            let battery = prosumer::battery_step(state.soc, action.storage, cfg);
            let q_actual = prosumer::inverter_limit(e.pv_gen, action.reactive, cfg.inverter_s_max_kva)?;
            let (p, q) = prosumer::net_injection(&InjectionParts {
                pv_gen: e.pv_gen,
                load_p: e.load_p,
                load_q: e.load_q,
                hvac_power,
                battery_grid: battery.grid_energy,
                q_actual,
            });
            injections[cfg.bus_id] = (self.net.to_pu(p), self.net.to_pu(q));
            let mut market_reward = clearing.rewards[&i];
            if sc.imbalance_enabled {
                market_reward += market::settle_imbalance(action.bid, p, &tariffs);
            }
            agents.push(AgentStep {
                bid: action.bid,
                comfort: prosumer::comfort_reward(&zone_temps, cfg),
                market: market_reward,
                voltage_share: 0.0,
                total: 0.0,
                p_inj_kw: p,
                q_inj_kvar: q,
                soc: battery.soc_next,
            });
            next_states.push(ProsumerState { soc: battery.soc_next, zone_temps });
        }

        let solution = grid::solve_power_flow(
            &self.net,
            &injections,
            sc.slack_v,
            grid::DEFAULT_TOLERANCE,
            grid::DEFAULT_MAX_ITER,
        );
        let (violation, v_mag, converged) = match solution {
            Ok(sol) if sol.converged => {
                let v = grid::voltage_violation(&sol, sc.v_lo, sc.v_hi, sc.lambda)?;
                (v, sol.v_mag, true)
            }
            other => {
                log::warn!("power flow failed at step {}: {:?}", self.t, other.map(|s| s.mismatch));
                let v = VoltageViolation::maximal(self.net.n_buses(), sc.v_lo, sc.v_hi, sc.lambda);
                (v, self.v_mag.clone(), false)
            }
        };
        let share = violation.penalty / n as f64;
        for a in &mut agents {
            a.voltage_share = share;
            a.total = a.comfort + a.market + share;
        }

        let record = StepRecord {
            episode,
            hour: self.hour(),
            t: self.t,
            agents,
            sdr: clearing.sdr,
            price: clearing.price,
            voltage_penalty: violation.penalty,
            voltage_deviation: violation.total_deviation(),
            v_mag: v_mag.clone(),
            pf_converged: converged,
        };
        self.states = next_states;
        self.v_mag = v_mag;
        self.prices.push(clearing.price);
        self.t += 1;
        Ok(record)
    }
}
