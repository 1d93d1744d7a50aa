use std::collections::BTreeSet;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::ScenarioError;
use crate::grid::{BusKind, NetworkFile, NetworkModel};
use crate::market::Tariffs;
use crate::prosumer::{ExogenousProfiles, ProsumerConfig};
use crate::rl::{PpoConfig, RlError};

/// Bundled IEEE 13-bus positive-sequence equivalent.
pub const BUNDLED_NETWORK: &str = include_str!("../../data/ieee13_equivalent.json");
/// Bundled mean daily temperature, load and PV shapes.
pub const BUNDLED_PROFILES: &str = include_str!("../../data/profiles.json");
/// Bundled 12-prosumer scenario.
pub const BUNDLED_SCENARIO: &str = include_str!("../../data/scenario.json");

/// Either a path to a JSON file (relative to the scenario file) or the data inline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DataSource<T> {
    Path(String),
    Inline(T),
}

fn bundled_network() -> DataSource<NetworkFile> {
    DataSource::Inline(serde_json::from_str(BUNDLED_NETWORK).expect("bundled network parses"))
}

fn bundled_profiles() -> DataSource<ExogenousProfiles> {
    DataSource::Inline(serde_json::from_str(BUNDLED_PROFILES).expect("bundled profiles parse"))
}

fn default_lambda() -> f64 {
    1e4
}
fn default_v_lo() -> f64 {
    0.96
}
fn default_v_hi() -> f64 {
    1.04
}
fn default_slack_v() -> f64 {
    1.0
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "bundled_network")]
    pub network: DataSource<NetworkFile>,
    #[serde(default = "bundled_profiles")]
    pub profiles: DataSource<ExogenousProfiles>,
    pub prosumers: Vec<ProsumerConfig>,
    pub tariffs: Tariffs,
    /// Voltage penalty weight.
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_v_lo")]
    pub v_lo: f64,
    #[serde(default = "default_v_hi")]
    pub v_hi: f64,
    /// Substation voltage magnitude, pu.
    #[serde(default = "default_slack_v")]
    pub slack_v: f64,
    #[serde(default)]
    pub ppo: PpoConfig,
    pub n_episodes: usize,
    pub seed: u64,
    #[serde(default = "default_true")]
    pub p2p_enabled: bool,
    #[serde(default = "default_true")]
    pub imbalance_enabled: bool,
    /// Save checkpoints every this many episodes (and always at the end).
    #[serde(default)]
    pub checkpoint_every: Option<usize>,
}

/// Deserializes with error messages that carry the dotted path of the bad field.
pub(crate) fn from_json_with_path<T: DeserializeOwned>(json: &str) -> Result<T, ScenarioError> {
    let de = &mut serde_json::Deserializer::from_str(json);
    serde_path_to_error::deserialize(de).map_err(|err| {
        let mut path = err.path().to_string();
        let inner = err.into_inner();
        let message = inner.to_string();
        if let Some(rest) = message.strip_prefix("missing field `") {
            if let Some(name) = rest.split('`').next() {
                path = if path == "." { name.to_string() } else { format!("{path}.{name}") };
            }
        }
        if inner.is_syntax() || inner.is_eof() {
            ScenarioError::Json(inner)
        } else {
            ScenarioError::Schema { path, message }
        }
    })
}

impl ScenarioConfig {
    /// The bundled scenario, fully resolved and validated.
    pub fn bundled() -> Self {
        let cfg = Self::from_json_str(BUNDLED_SCENARIO, Path::new(".")).expect("bundled scenario is valid");
        cfg.validate().expect("bundled scenario is valid");
        cfg
    }

    /// Parses a scenario and loads any referenced data files relative to `base_dir`.
    pub fn from_json_str(json: &str, base_dir: &Path) -> Result<Self, ScenarioError> {
        let mut cfg: Self = from_json_with_path(json)?;
        cfg.resolve(base_dir)?;
        Ok(cfg)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let path = path.as_ref();
        let text = read(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let cfg = Self::from_json_str(&text, base)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Replaces file references by their contents.
    pub fn resolve(&mut self, base_dir: &Path) -> Result<(), ScenarioError> {
        if let DataSource::Path(p) = &self.network {
            let text = read(&base_dir.join(p))?;
            self.network = DataSource::Inline(from_json_with_path(&text).map_err(|e| prefix("network", e))?);
        }
        if let DataSource::Path(p) = &self.profiles {
            let text = read(&base_dir.join(p))?;
            self.profiles = DataSource::Inline(from_json_with_path(&text).map_err(|e| prefix("profiles", e))?);
        }
        Ok(())
    }

    pub fn network_file(&self) -> Result<&NetworkFile, ScenarioError> {
        match &self.network {
            DataSource::Inline(n) => Ok(n),
            DataSource::Path(p) => Err(ScenarioError::invalid("network", format!("unresolved file reference {p}"))),
        }
    }

    pub fn profiles(&self) -> Result<&ExogenousProfiles, ScenarioError> {
        match &self.profiles {
            DataSource::Inline(p) => Ok(p),
            DataSource::Path(p) => Err(ScenarioError::invalid("profiles", format!("unresolved file reference {p}"))),
        }
    }

    pub fn build_network(&self) -> Result<NetworkModel, ScenarioError> {
        NetworkModel::from_file(self.network_file()?.clone())
            .map_err(|e| ScenarioError::invalid("network", e.to_string()))
    }

    /// Checks physical consistency. Errors name the offending field.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        if !(self.tariffs.fit.is_finite() && self.tariffs.fit >= 0.0) {
            return Err(ScenarioError::invalid("tariffs.fit", "must be non-negative"));
        }
        if !(self.tariffs.fit < self.tariffs.ur) || !self.tariffs.ur.is_finite() {
            return Err(ScenarioError::invalid(
                "tariffs.ur",
                format!("utility rate {} must exceed feed-in tariff {}", self.tariffs.ur, self.tariffs.fit),
            ));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(ScenarioError::invalid("lambda", "must be non-negative"));
        }
        if !(self.v_lo.is_finite() && self.v_lo > 0.0) {
            return Err(ScenarioError::invalid("v_lo", "must be positive"));
        }
        if !(self.v_lo < self.v_hi) || !self.v_hi.is_finite() {
            return Err(ScenarioError::invalid("v_hi", format!("v_lo {} must be below v_hi {}", self.v_lo, self.v_hi)));
        }
        if !(self.slack_v.is_finite() && self.slack_v > 0.0) {
            return Err(ScenarioError::invalid("slack_v", "must be positive"));
        }
        if self.checkpoint_every == Some(0) {
            return Err(ScenarioError::invalid("checkpoint_every", "must be at least 1"));
        }
        self.ppo.validate().map_err(|e| match e {
            RlError::InvalidConfig { field, reason } => ScenarioError::invalid(format!("ppo.{field}"), reason),
            other => ScenarioError::invalid("ppo", other.to_string()),
        })?;
        self.profiles()?.validate().map_err(|e| prefix("profiles", e.into()))?;

        let net = self.build_network()?;
        if self.prosumers.is_empty() {
            return Err(ScenarioError::invalid("prosumers", "need at least one prosumer"));
        }
        let mut seen = BTreeSet::new();
        for (i, p) in self.prosumers.iter().enumerate() {
            p.validate().map_err(|e| prefix(&format!("prosumers[{i}]"), e.into()))?;
            let bus = net.buses().iter().find(|b| b.id == p.bus_id);
            match bus {
                None => {
                    return Err(ScenarioError::invalid(
                        format!("prosumers[{i}].bus_id"),
                        format!("bus {} is not in the network", p.bus_id),
                    ))
                }
                Some(b) if b.kind == BusKind::Slack => {
                    return Err(ScenarioError::invalid(format!("prosumers[{i}].bus_id"), "cannot sit on the slack bus"))
                }
                _ => {}
            }
            if !seen.insert(p.bus_id) {
                return Err(ScenarioError::invalid(
                    format!("prosumers[{i}].bus_id"),
                    format!("bus {} already has a prosumer", p.bus_id),
                ));
            }
        }
        Ok(())
    }
}

fn read(path: &Path) -> Result<String, ScenarioError> {
    std::fs::read_to_string(path).map_err(|source| ScenarioError::Io { path: path.display().to_string(), source })
}

fn prefix(head: &str, e: ScenarioError) -> ScenarioError {
    let join = |path: String| if path.is_empty() { head.to_string() } else { format!("{head}.{path}") };
    match e {
        ScenarioError::Schema { path, message } => ScenarioError::Schema { path: join(path), message },
        ScenarioError::Invalid { path, reason } => ScenarioError::Invalid { path: join(path), reason },
        other => other,
    }
}
