use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{SimError, StepRecord};
use crate::prosumer::HOURS_PER_DAY;

pub const MA_WINDOW: usize = 30;

/// Per-episode summary. Cost is the negated reward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub episode: usize,
    /// Sum over the episode's hours and all agents of `gamma^t * cost`, `t` global.
    pub episodic_total_cost: f64,
    /// The same sum without discounting.
    pub undiscounted_cost: f64,
    /// Sum over hours and buses of the band deviation, pu.
    pub total_voltage_deviation: f64,
    pub mean_price: f64,
    pub prices: Vec<f64>,
    pub pf_failures: usize,
}

impl EpisodeMetrics {
    /// Aggregates one episode's step records.
    pub fn from_steps(episode: usize, steps: &[StepRecord], gamma: f64) -> Self {
        let mut discounted = 0.0;
        let mut undiscounted = 0.0;
        for s in steps {
            let cost: f64 = -s.agents.iter().map(|a| a.total).sum::<f64>();
            discounted += gamma.powi(s.t as i32) * cost;
            undiscounted += cost;
        }
        let prices: Vec<f64> = steps.iter().map(|s| s.price).collect();
        let mean_price = if prices.is_empty() { 0.0 } else { prices.iter().sum::<f64>() / prices.len() as f64 };
        Self {
            episode,
            episodic_total_cost: discounted,
            undiscounted_cost: undiscounted,
            total_voltage_deviation: steps.iter().map(|s| s.voltage_deviation).sum(),
            mean_price,
            prices,
            pf_failures: steps.iter().filter(|s| !s.pf_converged).count(),
        }
    }

    /// Name of the first non-finite field, if any.
    pub fn non_finite_field(&self) -> Option<&'static str> {
        [
            ("episodic_total_cost", self.episodic_total_cost),
            ("undiscounted_cost", self.undiscounted_cost),
            ("total_voltage_deviation", self.total_voltage_deviation),
            ("mean_price", self.mean_price),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(name, _)| name)
    }
}

/// Trailing mean over the last `min(window, i + 1)` entries.
///
/// # Panics
/// If `window` is zero.
pub fn moving_average(series: &[f64], window: usize) -> Vec<f64> {
    assert!(window >= 1, "moving-average window must be at least 1");
    let mut out = Vec::with_capacity(series.len());
    let mut sum = 0.0;
    for (i, &x) in series.iter().enumerate() {
        sum += x;
        if i >= window {
            sum -= series[i - window];
        }
        out.push(sum / (i + 1).min(window) as f64);
    }
    out
}

/// Writes `episode,total_cost,ma30_cost,voltage_deviation_pu,mean_price`.
pub fn write_metrics_csv<W: Write>(out: W, metrics: &[EpisodeMetrics]) -> Result<(), SimError> {
    let costs: Vec<f64> = metrics.iter().map(|m| m.episodic_total_cost).collect();
    let ma = moving_average(&costs, MA_WINDOW);
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["episode", "total_cost", "ma30_cost", "voltage_deviation_pu", "mean_price"])?;
    for (m, avg) in metrics.iter().zip(&ma) {
        w.write_record([
            m.episode.to_string(),
            m.episodic_total_cost.to_string(),
            avg.to_string(),
            m.total_voltage_deviation.to_string(),
            m.mean_price.to_string(),
        ])?;
    }
    w.flush().map_err(|source| SimError::Io { path: "metrics csv".into(), source })?;
    Ok(())
}

/// One row per agent and hour.
pub fn write_steps_csv<W: Write>(out: W, steps: &[StepRecord]) -> Result<(), SimError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "episode", "hour", "t", "agent", "bid", "comfort", "market", "voltage_share", "total", "p_inj_kw",
        "q_inj_kvar", "soc", "sdr", "price", "voltage_deviation", "pf_converged",
    ])?;
    for s in steps {
        debug_assert!(s.hour < HOURS_PER_DAY);
        for (i, a) in s.agents.iter().enumerate() {
            w.write_record([
                s.episode.to_string(),
                s.hour.to_string(),
                s.t.to_string(),
                i.to_string(),
                a.bid.to_string(),
                a.comfort.to_string(),
                a.market.to_string(),
                a.voltage_share.to_string(),
                a.total.to_string(),
                a.p_inj_kw.to_string(),
                a.q_inj_kvar.to_string(),
                a.soc.to_string(),
                s.sdr.to_string(),
                s.price.to_string(),
                s.voltage_deviation.to_string(),
                s.pf_converged.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|source| SimError::Io { path: "steps csv".into(), source })?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::AgentStep;

    fn record(t: usize, totals: &[f64], deviation: f64) -> StepRecord {
        StepRecord {
            episode: t / 24,
            hour: t % 24,
            t,
            agents: totals
                .iter()
                .map(|&total| AgentStep {
                    bid: 0.0,
                    comfort: 0.0,
                    market: total,
                    voltage_share: 0.0,
                    total,
                    p_inj_kw: 0.0,
                    q_inj_kvar: 0.0,
                    soc: 0.0,
                })
                .collect(),
            sdr: 0.0,
            price: 14.0,
            v_mag: vec![1.0],
            voltage_penalty: 0.0,
            voltage_deviation: deviation,
            pf_converged: true,
        }
    }

    #[test]
    fn moving_average_examples() {
        assert_eq!(moving_average(&[4.0; 50], 30), vec![4.0; 50]);
        assert_eq!(moving_average(&[0.0, 30.0], 30), vec![0.0, 15.0]);
        assert!(moving_average(&[], 30).is_empty());
    }

    #[test]
    fn moving_average_ramp_matches_direct_recomputation() {
        let ramp: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let ma = moving_average(&ramp, 30);
        for (i, &m) in ma.iter().enumerate() {
            let lo = (i + 1).saturating_sub(30);
            let direct = ramp[lo..=i].iter().sum::<f64>() / (i + 1 - lo) as f64;
            assert!((m - direct).abs() < 1e-9);
        }
        assert!((ma[99] - 84.5).abs() < 1e-12);
    }

    #[test]
    #[should_panic]
    fn zero_window_panics() {
        moving_average(&[1.0], 0);
    }

    #[test]
    fn zero_rewards_zero_cost_and_in_band_zero_deviation() {
        let steps: Vec<StepRecord> = (0..24).map(|t| record(t, &[0.0; 12], 0.0)).collect();
        let m = EpisodeMetrics::from_steps(0, &steps, 0.999);
        assert_eq!(m.episodic_total_cost, 0.0);
        assert_eq!(m.total_voltage_deviation, 0.0);
        assert_eq!(m.prices.len(), 24);
    }

    #[test]
    fn discount_uses_global_step() {
        let gamma: f64 = 0.9;
        let first: Vec<StepRecord> = (0..24).map(|t| record(t, &[-1.0], 0.0)).collect();
        let second: Vec<StepRecord> = (24..48).map(|t| record(t, &[-1.0], 0.0)).collect();
        let c1 = EpisodeMetrics::from_steps(0, &first, gamma).episodic_total_cost;
        let c2 = EpisodeMetrics::from_steps(1, &second, gamma).episodic_total_cost;
        assert!((c2 / c1 - gamma.powi(24)).abs() < 1e-12);
        let geometric = (1.0 - gamma.powi(24)) / (1.0 - gamma);
        assert!((c1 - geometric).abs() < 1e-12);
    }

    #[test]
    fn csv_header_and_rows() {
        let steps: Vec<StepRecord> = (0..24).map(|t| record(t, &[-2.0, 1.0], 0.01)).collect();
        let m = EpisodeMetrics::from_steps(0, &steps, 1.0);
        let mut buf = Vec::new();
        write_metrics_csv(&mut buf, &[m]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("episode,total_cost,ma30_cost,voltage_deviation_pu,mean_price"));
        let row: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(row[0], "0");
        assert!((row[1].parse::<f64>().unwrap() - 24.0).abs() < 1e-12);
        assert!((row[3].parse::<f64>().unwrap() - 0.24).abs() < 1e-12);
        assert_eq!(row[4], "14");
    }
}
