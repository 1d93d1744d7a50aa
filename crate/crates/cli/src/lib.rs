//! Command implementations behind the `p2pgrid` binary.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use p2pgrid::grid::{self, NetworkModel, PowerFlowSolution};
use p2pgrid::market::{self, Bid, ClearingResult, Tariffs};
use p2pgrid::sim::{self, EvaluationReport, ScenarioConfig, TrainOptions, TrainingLog, BUNDLED_SCENARIO};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const EVALUATION_FILE: &str = "evaluation.csv";

#[derive(Debug, Parser)]
#[command(name = "p2pgrid", version, about = "P2P energy market simulator with learning prosumers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train all prosumer agents and write metrics and checkpoints.
    Train(TrainArgs),
    /// Roll trained agents forward with learning disabled.
    Evaluate(EvaluateArgs),
    /// Solve the no-injection base case of a network and print bus voltages.
    PfCheck(PfCheckArgs),
    /// Clear one market round from bids given on the command line.
    MarketDemo(MarketDemoArgs),
}

/// Flags that override values from the scenario file.
#[derive(Debug, Clone, Default, Args, PartialEq)]
pub struct Overrides {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub episodes: Option<usize>,
    /// Baseline without the P2P market.
    #[arg(long)]
    pub no_p2p: bool,
    /// Settle bids exactly as submitted, without imbalance charges.
    #[arg(long)]
    pub paper_literal: bool,
    #[arg(long)]
    pub fit: Option<f64>,
    #[arg(long)]
    pub ur: Option<f64>,
}

impl Overrides {
    pub fn apply(&self, sc: &mut ScenarioConfig) {
        if let Some(seed) = self.seed {
            sc.seed = seed;
        }
        if let Some(n) = self.episodes {
            sc.n_episodes = n;
        }
        if self.no_p2p {
            sc.p2p_enabled = false;
        }
        if self.paper_literal {
            sc.imbalance_enabled = false;
        }
        if let Some(fit) = self.fit {
            sc.tariffs.fit = fit;
        }
        if let Some(ur) = self.ur {
            sc.tariffs.ur = ur;
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// Scenario JSON; the bundled scenario when omitted.
    #[arg(long, conflicts_with = "manifest")]
    pub config: Option<PathBuf>,
    /// Replay the scenario recorded in an earlier run's manifest.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, default_value = "runs/train")]
    pub out_dir: PathBuf,
    /// Also write per-hour, per-agent records to steps.csv.
    #[arg(long)]
    pub log_steps: bool,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    /// Directory of a finished training run.
    #[arg(long)]
    pub run_dir: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub days: usize,
    /// Sample actions instead of using the policy means.
    #[arg(long)]
    pub stochastic: bool,
    /// Checkpoint step to load; the latest when omitted.
    #[arg(long)]
    pub step: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct PfCheckArgs {
    /// Network JSON; the bundled 13-bus equivalent when omitted.
    pub network: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    pub slack_v: f64,
}

#[derive(Debug, Clone, Args)]
pub struct MarketDemoArgs {
    /// Signed bid quantities in kWh, positive to sell, e.g. `+3 -4 -2`.
    #[arg(required = true, allow_negative_numbers = true, value_parser = parse_bid)]
    pub bids: Vec<f64>,
    #[arg(long, default_value_t = 5.0)]
    pub fit: f64,
    #[arg(long, default_value_t = 14.0)]
    pub ur: f64,
    /// Settle against the utility only.
    #[arg(long)]
    pub no_p2p: bool,
}

fn parse_bid(s: &str) -> Result<f64, String> {
    s.trim_start_matches('+').parse::<f64>().map_err(|e| format!("bad bid `{s}`: {e}"))
}

/// Everything needed to reproduce a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub seed: u64,
    /// SHA-256 of the scenario file the run started from.
    pub config_hash: String,
    pub config_path: Option<String>,
    pub out_dir: String,
    pub log_steps: bool,
    /// Scenario after overrides, with all data files inlined.
    pub scenario: ScenarioConfig,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading manifest {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))
    }

    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join(MANIFEST_FILE);
        std::fs::write(&path, serde_json::to_string_pretty(self)?)
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Builds the manifest for a training request without running anything.
pub fn prepare_train(args: &TrainArgs) -> Result<RunManifest> {
    let (mut scenario, config_hash, config_path, log_steps) = match (&args.manifest, &args.config) {
        (Some(m), _) => {
            let prior = RunManifest::load(m)?;
            (prior.scenario, prior.config_hash, prior.config_path, prior.log_steps || args.log_steps)
        }
        (None, Some(path)) => {
            let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
            let sc = ScenarioConfig::from_path(path).with_context(|| format!("loading scenario {}", path.display()))?;
            (sc, sha256_hex(&bytes), Some(path.display().to_string()), args.log_steps)
        }
        (None, None) => (ScenarioConfig::bundled(), sha256_hex(BUNDLED_SCENARIO.as_bytes()), None, args.log_steps),
    };
    args.overrides.apply(&mut scenario);
    scenario.validate().context("scenario after command-line overrides")?;
    Ok(RunManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: scenario.seed,
        config_hash,
        config_path,
        out_dir: args.out_dir.display().to_string(),
        log_steps,
        scenario,
    })
}

/// Writes the manifest, then trains.
pub fn cmd_train(args: &TrainArgs) -> Result<(RunManifest, TrainingLog)> {
    let manifest = prepare_train(args)?;
    let path = manifest.save(&args.out_dir)?;
    log::info!("manifest written to {}", path.display());
    let opts = TrainOptions { out_dir: Some(args.out_dir.clone()), log_steps: manifest.log_steps };
    let log = sim::train(&manifest.scenario, &opts)?;
    Ok((manifest, log))
}

/// Evaluates a run's checkpoints and writes `evaluation.csv` into the run directory.
pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<EvaluationReport> {
    let manifest = RunManifest::load(&args.run_dir.join(MANIFEST_FILE))?;
    let sc = &manifest.scenario;
    let mut learners = sim::load_learners(&args.run_dir, sc.prosumers.len(), args.step)?;
    let report = sim::evaluate(&mut learners, sc, args.days, args.stochastic)?;

    let path = args.run_dir.join(EVALUATION_FILE);
    let mut w = csv::Writer::from_path(&path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(["day", "hour", "price", "zero_pv", "voltage_deviation_pu", "cost"])?;
    for (i, step) in report.steps.iter().enumerate() {
        let cost: f64 = -step.agents.iter().map(|a| a.total).sum::<f64>();
        w.write_record([
            (i / 24).to_string(),
            step.hour.to_string(),
            step.price.to_string(),
            report.zero_pv_hour[i].to_string(),
            step.voltage_deviation.to_string(),
            cost.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(report)
}

/// Solves the base case and prints one line per bus. Non-convergence is an error.
pub fn cmd_pf_check(args: &PfCheckArgs, out: &mut impl Write) -> Result<PowerFlowSolution> {
    let net = match &args.network {
        Some(path) => NetworkModel::from_path(path).with_context(|| format!("loading network {}", path.display()))?,
        None => NetworkModel::from_json_str(sim::BUNDLED_NETWORK)?,
    };
    let zero = vec![(0.0, 0.0); net.n_buses()];
    let sol = grid::solve_power_flow(&net, &zero, args.slack_v, grid::DEFAULT_TOLERANCE, grid::DEFAULT_MAX_ITER)?;
    writeln!(out, "bus  |V| (pu)      angle (deg)")?;
    for (k, (m, a)) in sol.v_mag.iter().zip(&sol.v_ang).enumerate() {
        writeln!(out, "{k:>3}  {m:.8}  {:>12.6}", a.to_degrees())?;
    }
    writeln!(out, "iterations {}  residual {:.3e}", sol.iterations, sol.mismatch)?;
    if !sol.converged {
        bail!("power flow did not converge in {} iterations (residual {:.3e})", sol.iterations, sol.mismatch);
    }
    Ok(sol)
}

/// Clears one round and prints the result. Rounds without buyers report the
/// suspension outcome instead of failing.
pub fn cmd_market_demo(args: &MarketDemoArgs, out: &mut impl Write) -> Result<ClearingResult> {
    let tariffs = Tariffs::new(args.fit, args.ur)?;
    let bids: Vec<Bid> = args.bids.iter().enumerate().map(|(i, &q)| Bid::new(i, q)).collect();
    let result =
        if args.no_p2p { market::settle_no_p2p(&bids, &tariffs)? } else { market::clear(&bids, &tariffs)? };
    if result.suspended {
        writeln!(out, "no buyers: market suspended, all offers sold to the utility at fit")?;
    }
    writeln!(out, "sdr {}", result.sdr)?;
    writeln!(out, "price {}", result.price)?;
    for (bid, r) in bids.iter().zip(result.rewards.values()) {
        writeln!(out, "agent {} bid {:+} -> {:+}", bid.agent_id, bid.quantity, r)?;
    }
    Ok(result)
}

pub fn run(cli: Cli) -> Result<()> {
    let mut stdout = std::io::stdout().lock();
    match cli.command {
        Command::Train(args) => {
            let (manifest, log) = cmd_train(&args)?;
            let last = log.metrics.last();
            writeln!(
                stdout,
                "trained {} episodes (seed {}), {} updates; final cost {:.4e}, voltage deviation {:.5}; outputs in {}",
                log.metrics.len(),
                manifest.seed,
                log.updates,
                last.map_or(0.0, |m| m.episodic_total_cost),
                last.map_or(0.0, |m| m.total_voltage_deviation),
                manifest.out_dir
            )?;
        }
        Command::Evaluate(args) => {
            let report = cmd_evaluate(&args)?;
            for (day, prices) in report.prices.chunks(24).enumerate() {
                let line: Vec<String> = prices.iter().map(|p| format!("{p:.2}")).collect();
                writeln!(stdout, "day {day} prices: {}", line.join(" "))?;
                writeln!(
                    stdout,
                    "day {day} cost {:.4} voltage deviation {:.5}",
                    report.daily_cost[day], report.daily_voltage_deviation[day]
                )?;
            }
        }
        Command::PfCheck(args) => {
            cmd_pf_check(&args, &mut stdout)?;
        }
        Command::MarketDemo(args) => {
            cmd_market_demo(&args, &mut stdout)?;
        }
    }
    Ok(())
}
