//! One prosumer's physical environment.
//!
//! Battery, multi-zone HVAC, PV with a smart inverter, inflexible base load and
//! the exogenous noise model. One step is one hour, so kW and kWh are numerically
//! interchangeable throughout.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::market::Tariffs;

pub const OBS_DIM: usize = 8;
pub const HOURS_PER_DAY: usize = 24;

pub fn action_dim(zones: usize) -> usize {
    2 * zones + 3
}

#[derive(Debug, Error, PartialEq)]
pub enum ProsumerError {
    #[error("PV output {pv_gen} kW exceeds inverter rating {s_max} kVA")]
    PvExceedsInverter { pv_gen: f64, s_max: f64 },
    #[error("action has {got} components, expected {expected}")]
    ActionLength { expected: usize, got: usize },
    #[error("invalid prosumer parameter `{field}`: {reason}")]
    InvalidConfig { field: String, reason: String },
    #[error("invalid profile `{field}`: {reason}")]
    InvalidProfile { field: String, reason: String },
}

fn invalid(field: &str, reason: impl Into<String>) -> ProsumerError {
    ProsumerError::InvalidConfig { field: field.to_string(), reason: reason.into() }
}

/// First-order RC thermal model constants shared by every zone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HvacParams {
    /// Zone heat capacity, J/K.
    pub capacitance: f64,
    /// Envelope conductance to outside air, W/K.
    pub conductance: f64,
    /// Specific heat of supply air, J/(kg K).
    pub c_air: f64,
    /// Fan electrical power per unit of supply flow, kW/(kg/s).
    pub fan_coeff: f64,
    /// Cooling coefficient of performance.
    pub cop: f64,
    /// Step length, s.
    pub dt: f64,
}

impl Default for HvacParams {
    fn default() -> Self {
        Self {
            capacitance: 3.6e6,
            conductance: 100.0,
            c_air: 1005.0,
            fan_coeff: 0.5,
            cop: 3.5,
            dt: 3600.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProsumerConfig {
    pub bus_id: usize,
    /// Peak inflexible base load, kW.
    pub peak_load_kw: f64,
    #[serde(default = "defaults::battery_capacity")]
    pub battery_capacity: f64,
    #[serde(default = "defaults::eta_c")]
    pub eta_c: f64,
    #[serde(default = "defaults::eta_d")]
    pub eta_d: f64,
    #[serde(default = "defaults::charge_rate_max")]
    pub charge_rate_max: f64,
    #[serde(default = "defaults::pv_capacity_kw")]
    pub pv_capacity_kw: f64,
    #[serde(default = "defaults::inverter_s_max_kva")]
    pub inverter_s_max_kva: f64,
    #[serde(default = "defaults::zones")]
    pub zones: usize,
    #[serde(default = "defaults::comfort_lo")]
    pub comfort_lo: f64,
    #[serde(default = "defaults::comfort_hi")]
    pub comfort_hi: f64,
    #[serde(default = "defaults::flow_max")]
    pub flow_max: f64,
    #[serde(default = "defaults::discharge_temp_lo")]
    pub discharge_temp_lo: f64,
    #[serde(default = "defaults::discharge_temp_hi")]
    pub discharge_temp_hi: f64,
    #[serde(default = "defaults::bid_bound")]
    pub bid_bound: f64,
    #[serde(default = "defaults::power_factor")]
    pub power_factor: f64,
    #[serde(default = "defaults::initial_zone_temp")]
    pub initial_zone_temp: f64,
    #[serde(default)]
    pub hvac: HvacParams,
}

mod defaults {
    pub fn battery_capacity() -> f64 {
        50.0
    }
    pub fn eta_c() -> f64 {
        0.95
    }
    pub fn eta_d() -> f64 {
        0.9
    }
    pub fn charge_rate_max() -> f64 {
        12.5
    }
    pub fn pv_capacity_kw() -> f64 {
        30.0
    }
    pub fn inverter_s_max_kva() -> f64 {
        50.0
    }
    pub fn zones() -> usize {
        5
    }
    pub fn comfort_lo() -> f64 {
        22.0
    }
    pub fn comfort_hi() -> f64 {
        28.0
    }
    pub fn flow_max() -> f64 {
        0.5
    }
    pub fn discharge_temp_lo() -> f64 {
        12.0
    }
    pub fn discharge_temp_hi() -> f64 {
        24.0
    }
    pub fn bid_bound() -> f64 {
        60.0
    }
    pub fn power_factor() -> f64 {
        0.95
    }
    pub fn initial_zone_temp() -> f64 {
        25.0
    }
}

impl ProsumerConfig {
    pub fn new(bus_id: usize, peak_load_kw: f64) -> Self {
        Self {
            bus_id,
            peak_load_kw,
            battery_capacity: defaults::battery_capacity(),
            eta_c: defaults::eta_c(),
            eta_d: defaults::eta_d(),
            charge_rate_max: defaults::charge_rate_max(),
            pv_capacity_kw: defaults::pv_capacity_kw(),
            inverter_s_max_kva: defaults::inverter_s_max_kva(),
            zones: defaults::zones(),
            comfort_lo: defaults::comfort_lo(),
            comfort_hi: defaults::comfort_hi(),
            flow_max: defaults::flow_max(),
            discharge_temp_lo: defaults::discharge_temp_lo(),
            discharge_temp_hi: defaults::discharge_temp_hi(),
            bid_bound: defaults::bid_bound(),
            power_factor: defaults::power_factor(),
            initial_zone_temp: defaults::initial_zone_temp(),
            hvac: HvacParams::default(),
        }
    }

    pub fn action_dim(&self) -> usize {
        action_dim(self.zones)
    }

    pub fn validate(&self) -> Result<(), ProsumerError> {
        let positive = [
            ("battery_capacity", self.battery_capacity),
            ("charge_rate_max", self.charge_rate_max),
            ("inverter_s_max_kva", self.inverter_s_max_kva),
            ("flow_max", self.flow_max),
            ("bid_bound", self.bid_bound),
            ("hvac.capacitance", self.hvac.capacitance),
            ("hvac.c_air", self.hvac.c_air),
            ("hvac.cop", self.hvac.cop),
            ("hvac.dt", self.hvac.dt),
        ];
        for (field, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(field, format!("must be positive, got {v}")));
            }
        }
        let non_negative = [
            ("peak_load_kw", self.peak_load_kw),
            ("pv_capacity_kw", self.pv_capacity_kw),
            ("hvac.conductance", self.hvac.conductance),
            ("hvac.fan_coeff", self.hvac.fan_coeff),
        ];
        for (field, v) in non_negative {
            if !(v.is_finite() && v >= 0.0) {
                return Err(invalid(field, format!("must be non-negative, got {v}")));
            }
        }
        for (field, v) in [("eta_c", self.eta_c), ("eta_d", self.eta_d)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(invalid(field, format!("must lie in (0, 1], got {v}")));
            }
        }
        if !(self.power_factor > 0.0 && self.power_factor <= 1.0) {
            return Err(invalid("power_factor", "must lie in (0, 1]"));
        }
        if self.zones == 0 {
            return Err(invalid("zones", "need at least one zone"));
        }
        if !(self.comfort_lo < self.comfort_hi) {
            return Err(invalid("comfort_lo", "must be below comfort_hi"));
        }
        if !(self.discharge_temp_lo < self.discharge_temp_hi) {
            return Err(invalid("discharge_temp_lo", "must be below discharge_temp_hi"));
        }
        if self.pv_capacity_kw > self.inverter_s_max_kva {
            return Err(invalid("pv_capacity_kw", "exceeds inverter_s_max_kva"));
        }
        let h = &self.hvac;
        let explicit_gain = h.dt / h.capacitance * (h.conductance + self.flow_max * h.c_air);
        if explicit_gain > 1.0 {
            return Err(invalid(
                "hvac.capacitance",
                format!("thermal step gain {explicit_gain:.3} > 1 makes zone update overshoot"),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProsumerState {
    /// Battery state of charge, kWh.
    pub soc: f64,
    pub zone_temps: Vec<f64>,
}

impl ProsumerState {
    pub fn initial(cfg: &ProsumerConfig) -> Self {
        Self { soc: 0.0, zone_temps: vec![cfg.initial_zone_temp; cfg.zones] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub hour: usize,
    pub outside_temp: f64,
    pub pv_gen: f64,
    pub load_p: f64,
    pub load_q: f64,
    pub v_mag: f64,
    pub soc: f64,
    pub price_lag24: f64,
}

impl Observation {
    pub fn to_array(&self) -> [f64; OBS_DIM] {
        [
            self.hour as f64,
            self.outside_temp,
            self.pv_gen,
            self.load_p,
            self.load_q,
            self.v_mag,
            self.soc,
            self.price_lag24,
        ]
    }

    /// Centered and scaled copy used as network input.
    pub fn features(&self, cfg: &ProsumerConfig, tariffs: &Tariffs) -> [f64; OBS_DIM] {
        let load_scale = cfg.peak_load_kw.max(1.0);
        let price_span = tariffs.ur - tariffs.fit;
        [
            self.hour as f64 / 11.5 - 1.0,
            (self.outside_temp - 28.0) / 6.0,
            self.pv_gen / cfg.pv_capacity_kw.max(1.0),
            self.load_p / load_scale,
            self.load_q / load_scale,
            (self.v_mag - 1.0) / 0.04,
            2.0 * self.soc / cfg.battery_capacity - 1.0,
            2.0 * (self.price_lag24 - tariffs.fit) / price_span - 1.0,
        ]
    }
}

/// A physical action after clamping to its box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Action {
    /// Supply air flow per zone, kg/s.
    pub flow: Vec<f64>,
    /// Supply (discharge) air temperature per zone, °C.
    pub discharge_temp: Vec<f64>,
    /// Requested inverter reactive power, kVAr (positive injects).
    pub reactive: f64,
    /// Battery energy, kWh; positive charges.
    pub storage: f64,
    /// Market bid, kWh; positive sells.
    pub bid: f64,
}

impl Action {
    /// An action with no HVAC flow, no battery use, no reactive power and no bid.
    pub fn idle(cfg: &ProsumerConfig) -> Self {
        Self {
            flow: vec![0.0; cfg.zones],
            discharge_temp: vec![cfg.discharge_temp_hi; cfg.zones],
            reactive: 0.0,
            storage: 0.0,
            bid: 0.0,
        }
    }

    /// Maps a raw policy output onto the action box.
    ///
    /// Each component of `raw` is clamped to `[-1, 1]` and mapped affinely onto its
    /// physical range. Layout: `[flow; Z] [discharge_temp; Z] reactive storage bid`.
    /// Sell bids are further limited to the current PV output.
    pub fn from_raw(raw: &[f64], cfg: &ProsumerConfig, pv_gen: f64) -> Result<Self, ProsumerError> {
        let z = cfg.zones;
        if raw.len() != cfg.action_dim() {
            return Err(ProsumerError::ActionLength { expected: cfg.action_dim(), got: raw.len() });
        }
        let unit = |x: f64| if x.is_nan() { 0.0 } else { x.clamp(-1.0, 1.0) };
        let span = |x: f64, lo: f64, hi: f64| lo + 0.5 * (unit(x) + 1.0) * (hi - lo);
        let flow = raw[..z].iter().map(|&x| span(x, 0.0, cfg.flow_max)).collect();
        let discharge_temp = raw[z..2 * z]
            .iter()
            .map(|&x| span(x, cfg.discharge_temp_lo, cfg.discharge_temp_hi))
            .collect();
        let reactive = unit(raw[2 * z]) * cfg.inverter_s_max_kva;
        let storage = unit(raw[2 * z + 1]) * cfg.charge_rate_max;
        let bid = (unit(raw[2 * z + 2]) * cfg.bid_bound).min(pv_gen.max(0.0));
        Ok(Self { flow, discharge_temp, reactive, storage, bid })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatteryStep {
    pub soc_next: f64,
    /// Energy drawn from the bus (positive) or delivered to it (negative), kWh.
    pub grid_energy: f64,
}

/// Battery transition with charge/discharge losses and capacity clamping.
///
/// The bus-side energy always matches the realized change of stored energy.
pub fn battery_step(soc: f64, a_s: f64, cfg: &ProsumerConfig) -> BatteryStep {
    let raw = soc + cfg.eta_c * a_s.max(0.0) + a_s.min(0.0) / cfg.eta_d;
    let soc_next = raw.min(cfg.battery_capacity).max(0.0);
    let delta = soc_next - soc;
    let grid_energy = if delta >= 0.0 { delta / cfg.eta_c } else { delta * cfg.eta_d };
    BatteryStep { soc_next, grid_energy }
}

/// Advances zone temperatures by one step and returns the HVAC electrical power (kW).
pub fn hvac_step(
    zone_temps: &[f64],
    flow: &[f64],
    discharge_temp: &[f64],
    outside_temp: f64,
    cfg: &ProsumerConfig,
) -> (Vec<f64>, f64) {
    let h = &cfg.hvac;
    let gain = h.dt / h.capacitance;
    let mut power_kw = 0.0;
    let next = zone_temps
        .iter()
        .zip(flow)
        .zip(discharge_temp)
        .map(|((&t, &m), &td)| {
            let heat = h.conductance * (outside_temp - t) + m * h.c_air * (td - t);
            power_kw += h.fan_coeff * m + m * h.c_air * (t - td).max(0.0) / h.cop / 1000.0;
            t + gain * heat
        })
        .collect();
    (next, power_kw)
}

/// Quadratic penalty on zone temperatures outside the comfort band.
pub fn comfort_reward(zone_temps: &[f64], cfg: &ProsumerConfig) -> f64 {
    -zone_temps
        .iter()
        .map(|&t| (t - cfg.comfort_hi).max(0.0).powi(2) + (cfg.comfort_lo - t).max(0.0).powi(2))
        .sum::<f64>()
}

/// Reactive power the inverter can actually deliver next to the PV output.
pub fn inverter_limit(pv_gen: f64, requested_q: f64, s_max: f64) -> Result<f64, ProsumerError> {
    if pv_gen > s_max {
        return Err(ProsumerError::PvExceedsInverter { pv_gen, s_max });
    }
    let headroom = (s_max * s_max - pv_gen * pv_gen).max(0.0).sqrt();
    Ok(requested_q.abs().min(headroom).copysign(requested_q))
}

/// Components of a prosumer's bus injection for one hour.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct InjectionParts {
    pub pv_gen: f64,
    pub load_p: f64,
    pub load_q: f64,
    pub hvac_power: f64,
    pub battery_grid: f64,
    pub q_actual: f64,
}

/// Net (p, q) injection in kW / kVAr, generation positive.
pub fn net_injection(parts: &InjectionParts) -> (f64, f64) {
    (
        parts.pv_gen - parts.load_p - parts.hvac_power - parts.battery_grid,
        parts.q_actual - parts.load_q,
    )
}

/// Mean daily shapes shared by all prosumers and the multiplicative noise band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExogenousProfiles {
    pub temp_c: Vec<f64>,
    pub load_coeff: Vec<f64>,
    pub pv_coeff: Vec<f64>,
    pub noise_lo: f64,
    pub noise_hi: f64,
}

impl ExogenousProfiles {
    pub fn validate(&self) -> Result<(), ProsumerError> {
        let bad = |field: &str, reason: String| ProsumerError::InvalidProfile {
            field: field.to_string(),
            reason,
        };
        for (field, v) in [("temp_c", &self.temp_c), ("load_coeff", &self.load_coeff), ("pv_coeff", &self.pv_coeff)] {
            if v.len() != HOURS_PER_DAY {
                return Err(bad(field, format!("needs {HOURS_PER_DAY} values, got {}", v.len())));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(bad(field, "values must be finite".into()));
            }
        }
        for (field, v) in [("load_coeff", &self.load_coeff), ("pv_coeff", &self.pv_coeff)] {
            if v.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
                return Err(bad(field, "coefficients must lie in [0, 1]".into()));
            }
        }
        if !(self.noise_lo > 0.0 && self.noise_lo <= self.noise_hi) {
            return Err(bad("noise_lo", "need 0 < noise_lo <= noise_hi".into()));
        }
        Ok(())
    }

    pub fn from_json_str(json: &str) -> Result<Self, crate::sim::ScenarioError> {
        let p: Self = serde_json::from_str(json)?;
        p.validate()?;
        Ok(p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Exogenous {
    pub outside_temp: f64,
    pub pv_gen: f64,
    pub load_p: f64,
    pub load_q: f64,
}

/// Exogenous values for `hour` with explicit multipliers `[temp, pv, load]`.
pub fn exogenous_with_noise(
    hour: usize,
    profiles: &ExogenousProfiles,
    cfg: &ProsumerConfig,
    noise: [f64; 3],
) -> Exogenous {
    let h = hour % HOURS_PER_DAY;
    let load_p = profiles.load_coeff[h] * cfg.peak_load_kw * noise[2];
    let tan_phi = (1.0 - cfg.power_factor * cfg.power_factor).sqrt() / cfg.power_factor;
    Exogenous {
        outside_temp: profiles.temp_c[h] * noise[0],
        pv_gen: (profiles.pv_coeff[h] * cfg.pv_capacity_kw * noise[1]).min(cfg.pv_capacity_kw),
        load_p,
        load_q: load_p * tan_phi,
    }
}

/// Draws the hour's exogenous values; each mean is scaled by an independent
/// uniform factor in `[noise_lo, noise_hi]`. Always consumes three draws.
pub fn sample_exogenous<R: Rng + ?Sized>(
    hour: usize,
    profiles: &ExogenousProfiles,
    cfg: &ProsumerConfig,
    rng: &mut R,
) -> Exogenous {
    let mut draw = || {
        if profiles.noise_lo == profiles.noise_hi {
            let _: f64 = rng.random();
            profiles.noise_lo
        } else {
            rng.random_range(profiles.noise_lo..=profiles.noise_hi)
        }
    };
    let noise = [draw(), draw(), draw()];
    exogenous_with_noise(hour, profiles, cfg, noise)
}

/// Market prices recorded by global step, with the first-day fallback.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PriceHistory {
    prices: Vec<f64>,
}

impl PriceHistory {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records the price of the next global step.
    pub fn push(&mut self, price: f64) {
        self.prices.push(price);
    }

    pub fn len(&self) -> usize {
        self.prices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prices.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.prices
    }

    /// Recorded price 24 steps before `t`, if any.
    pub fn recorded_lag24(&self, t: usize) -> Option<f64> {
        t.checked_sub(HOURS_PER_DAY).and_then(|i| self.prices.get(i).copied())
    }

    /// Price 24 steps before `t`; on the first day a uniform draw in `[fit, ur]`.
    pub fn lag24<R: Rng + ?Sized>(&self, t: usize, tariffs: &Tariffs, rng: &mut R) -> f64 {
        match self.recorded_lag24(t) {
            Some(p) => p,
            None => rng.random_range(tariffs.fit..=tariffs.ur),
        }
    }
}

pub fn assemble_observation(
    hour: usize,
    exo: &Exogenous,
    v_mag_prev: f64,
    soc: f64,
    price_lag24: f64,
) -> Observation {
    Observation {
        hour: hour % HOURS_PER_DAY,
        outside_temp: exo.outside_temp,
        pv_gen: exo.pv_gen,
        load_p: exo.load_p,
        load_q: exo.load_q,
        v_mag: v_mag_prev,
        soc,
        price_lag24,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    fn cfg() -> ProsumerConfig {
        ProsumerConfig::new(1, 10.0)
    }

    fn flat_profiles() -> ExogenousProfiles {
        let mut pv = vec![0.0; 24];
        for (h, v) in pv.iter_mut().enumerate().take(18).skip(7) {
            *v = 0.5 + 0.05 * (h as f64 - 7.0);
        }
        ExogenousProfiles {
            temp_c: vec![30.0; 24],
            load_coeff: vec![0.6; 24],
            pv_coeff: pv,
            noise_lo: 0.95,
            noise_hi: 1.05,
        }
    }

    #[test]
    fn battery_examples() {
        let c = cfg();
        assert!((battery_step(10.0, 2.0, &c).soc_next - 11.9).abs() < 1e-9);
        assert!((battery_step(10.0, -2.0, &c).soc_next - (10.0 - 2.0 / 0.9)).abs() < 1e-9);
        assert!((battery_step(10.0, -2.0, &c).soc_next - 7.7778).abs() < 1e-4);
        let clamped = battery_step(49.5, 2.0, &c);
        assert_eq!(clamped.soc_next, 50.0);
        // only the energy that fit into the battery is drawn from the bus
        assert!((clamped.grid_energy - 0.5 / 0.95).abs() < 1e-12);
    }

    #[test]
    fn battery_grid_energy_signs() {
        let c = cfg();
        assert!((battery_step(10.0, 2.0, &c).grid_energy - 2.0).abs() < 1e-12);
        assert!((battery_step(10.0, -2.0, &c).grid_energy + 2.0).abs() < 1e-12);
        let empty = battery_step(1.0, -5.0, &c);
        assert_eq!(empty.soc_next, 0.0);
        assert!((empty.grid_energy + 0.9).abs() < 1e-12);
    }

    #[test]
    fn hvac_equilibrium_and_drift() {
        let c = cfg();
        let (t, p) = hvac_step(&[25.0; 5], &[0.0; 5], &[15.0; 5], 25.0, &c);
        assert_eq!(t, vec![25.0; 5]);
        assert_eq!(p, 0.0);
        let (t, _) = hvac_step(&[25.0, 26.0, 20.0, 24.0, 25.0], &[0.0; 5], &[15.0; 5], 32.0, &c);
        for (new, old) in t.iter().zip([25.0, 26.0, 20.0, 24.0, 25.0]) {
            assert!(*new > old && *new < 32.0);
        }
    }

    #[test]
    fn hvac_single_zone_hand_evaluation() {
        let mut c = cfg();
        c.zones = 1;
        let (t, p) = hvac_step(&[30.0], &[0.5], &[15.0], 30.0, &c);
        // 30 + (3600 / 3.6e6) * (100 * 0 + 0.5 * 1005 * (15 - 30))
        assert!((t[0] - 22.4625).abs() < 1e-12);
        // 0.5 * 0.5 + 0.5 * 1005 * 15 / 3.5 / 1000
        assert!((p - (0.25 + 7537.5 / 3.5 / 1000.0)).abs() < 1e-12);
    }

    #[test]
    fn comfort_examples() {
        let c = cfg();
        assert_eq!(comfort_reward(&[22.0, 25.0, 28.0, 23.0, 27.0], &c), 0.0);
        assert_eq!(comfort_reward(&[30.0, 25.0, 25.0, 25.0, 25.0], &c), -4.0);
        assert_eq!(comfort_reward(&[20.0, 25.0, 25.0, 25.0, 25.0], &c), -4.0);
    }

    #[test]
    fn inverter_examples() {
        assert_eq!(inverter_limit(0.0, 50.0, 50.0).unwrap(), 50.0);
        assert!((inverter_limit(30.0, 50.0, 50.0).unwrap() - 40.0).abs() < 1e-12);
        assert_eq!(inverter_limit(30.0, -10.0, 50.0).unwrap(), -10.0);
        assert!((inverter_limit(30.0, -45.0, 50.0).unwrap() + 40.0).abs() < 1e-12);
        assert!(matches!(
            inverter_limit(60.0, 1.0, 50.0),
            Err(ProsumerError::PvExceedsInverter { .. })
        ));
    }

    #[test]
    fn injection_examples() {
        let load_only = InjectionParts { load_p: 5.0, ..Default::default() };
        assert_eq!(net_injection(&load_only).0, -5.0);
        let charging = InjectionParts { pv_gen: 10.0, load_p: 5.0, battery_grid: 2.0, ..Default::default() };
        assert_eq!(net_injection(&charging).0, 3.0);
        let q = InjectionParts { load_q: 2.0, q_actual: 3.0, ..Default::default() };
        assert_eq!(net_injection(&q).1, 1.0);
    }

    #[test]
    fn exogenous_identity_noise_and_night() {
        let p = flat_profiles();
        let c = cfg();
        let e = exogenous_with_noise(12, &p, &c, [1.0; 3]);
        assert_eq!(e.outside_temp, 30.0);
        assert_eq!(e.pv_gen, p.pv_coeff[12] * 30.0);
        assert_eq!(e.load_p, 6.0);
        let tan_phi = (1.0f64 - 0.95 * 0.95).sqrt() / 0.95;
        assert!((e.load_q - 6.0 * tan_phi).abs() < 1e-12);
        let mut rng = stream(1, Stream::Noise(0));
        for _ in 0..100 {
            assert_eq!(sample_exogenous(2, &p, &c, &mut rng).pv_gen, 0.0);
        }
    }

    #[test]
    fn exogenous_monte_carlo_band() {
        let p = flat_profiles();
        let c = cfg();
        let mut rng = stream(3, Stream::Noise(5));
        let n = 10_000;
        let (mut sum, mut lo, mut hi) = (0.0, f64::MAX, f64::MIN);
        for _ in 0..n {
            let e = sample_exogenous(12, &p, &c, &mut rng);
            sum += e.load_p;
            lo = lo.min(e.load_p);
            hi = hi.max(e.load_p);
        }
        let mean = 6.0;
        assert!(((sum / n as f64) - mean).abs() / mean < 0.005);
        assert!(lo >= 0.95 * mean && hi <= 1.05 * mean);
    }

    #[test]
    fn observation_lag_and_voltage() {
        let t = Tariffs::new(5.0, 14.0).unwrap();
        let mut hist = PriceHistory::new();
        for h in 0..30 {
            hist.push(100.0 + h as f64);
        }
        assert_eq!(hist.recorded_lag24(10), None);
        let mut rng = stream(0, Stream::PriceFallback);
        assert_eq!(hist.lag24(30, &t, &mut rng), 106.0);
        let first_day = hist.lag24(3, &t, &mut rng);
        assert!((5.0..=14.0).contains(&first_day));

        let exo = Exogenous { outside_temp: 30.0, pv_gen: 0.0, load_p: 2.0, load_q: 0.5 };
        let obs = assemble_observation(3, &exo, 1.0, 0.0, (5.0 + 14.0) / 2.0);
        assert_eq!(obs.price_lag24, 9.5);
        assert_eq!(obs.v_mag, 1.0);
        assert_eq!(obs.to_array().len(), OBS_DIM);
    }

    #[test]
    fn raw_action_mapping() {
        let c = cfg();
        assert_eq!(c.action_dim(), 13);
        let mut raw = vec![0.0; 13];
        raw[0] = 1.0;
        raw[5] = -3.0;
        raw[10] = 2.0;
        raw[11] = -0.5;
        raw[12] = 1.0;
        let a = Action::from_raw(&raw, &c, 7.0).unwrap();
        assert_eq!(a.flow[0], 0.5);
        assert_eq!(a.flow[1], 0.25);
        assert_eq!(a.discharge_temp[0], 12.0);
        assert_eq!(a.reactive, 50.0);
        assert_eq!(a.storage, -6.25);
        // sells capped at the PV output
        assert_eq!(a.bid, 7.0);
        raw[12] = -0.5;
        assert_eq!(Action::from_raw(&raw, &c, 7.0).unwrap().bid, -30.0);
        assert!(Action::from_raw(&raw[..5], &c, 0.0).is_err());
    }

    #[test]
    fn default_config_is_valid() {
        cfg().validate().unwrap();
        let mut bad = cfg();
        bad.eta_c = 1.2;
        assert!(bad.validate().is_err());
        let mut bad = cfg();
        bad.battery_capacity = -1.0;
        assert!(bad.validate().is_err());
    }
}
