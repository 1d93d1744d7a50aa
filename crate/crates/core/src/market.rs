//! Supply-demand-ratio (SDR) market clearing.
//!
//! Bids are signed energy quantities in kWh: positive sells, negative buys. A zero
//! bid counts as a (null) sell. Prices are in cents/kWh and settlements in cents,
//! with the agent's perspective as sign convention (money received is positive).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MarketError {
    #[error("market suspended: round has supply but no buy bids")]
    Suspended,
    #[error("supply-demand ratio must be non-negative, got {0}")]
    NegativeSdr(f64),
    #[error("bid from agent {agent_id} is not finite")]
    NonFiniteBid { agent_id: usize },
    #[error("agent {0} submitted more than one bid")]
    DuplicateAgent(usize),
    #[error("tariffs must satisfy 0 <= fit < ur (got fit={fit}, ur={ur})")]
    InvalidTariffs { fit: f64, ur: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bid {
    pub agent_id: usize,
    /// kWh; positive = sell, negative = buy.
    pub quantity: f64,
}

impl Bid {
    pub fn new(agent_id: usize, quantity: f64) -> Self {
        Self { agent_id, quantity }
    }

    pub fn is_buy(&self) -> bool {
        self.quantity < 0.0
    }
}

/// Feed-in tariff (price floor) and utility rate (price ceiling), cents/kWh.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tariffs {
    pub fit: f64,
    pub ur: f64,
}

impl Tariffs {
    pub fn new(fit: f64, ur: f64) -> Result<Self, MarketError> {
        let t = Self { fit, ur };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), MarketError> {
        if self.fit.is_finite() && self.ur.is_finite() && self.fit >= 0.0 && self.fit < self.ur {
            Ok(())
        } else {
            Err(MarketError::InvalidTariffs { fit: self.fit, ur: self.ur })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClearingResult {
    pub sdr: f64,
    pub price: f64,
    /// Market settlement per agent, cents.
    pub rewards: BTreeMap<usize, f64>,
    pub total_sell: f64,
    /// Positive magnitude of all buy bids, kWh.
    pub total_buy: f64,
    /// True when the round had supply but no buyers and was settled at the feed-in tariff.
    pub suspended: bool,
}

fn totals(bids: &[Bid]) -> Result<(f64, f64), MarketError> {
    let mut sell = 0.0;
    let mut buy = 0.0;
    let mut seen = std::collections::BTreeSet::new();
    for bid in bids {
        if !bid.quantity.is_finite() {
            return Err(MarketError::NonFiniteBid { agent_id: bid.agent_id });
        }
        if !seen.insert(bid.agent_id) {
            return Err(MarketError::DuplicateAgent(bid.agent_id));
        }
        if bid.is_buy() {
            buy -= bid.quantity;
        } else {
            sell += bid.quantity;
        }
    }
    Ok((sell, buy))
}

/// Ratio of total sell quantity to total buy quantity.
///
/// Zero when nothing is offered. A round that offers energy but has no buyers
/// cannot be cleared and yields [`MarketError::Suspended`].
pub fn compute_sdr(bids: &[Bid]) -> Result<f64, MarketError> {
    let (sell, buy) = totals(bids)?;
    sdr_from_totals(sell, buy)
}

fn sdr_from_totals(sell: f64, buy: f64) -> Result<f64, MarketError> {
    if sell == 0.0 {
        Ok(0.0)
    } else if buy == 0.0 {
        Err(MarketError::Suspended)
    } else {
        Ok(sell / buy)
    }
}

/// Piecewise-linear price: falls from `ur` at SDR 0 to `fit` at SDR 1, flat beyond.
pub fn clearing_price(sdr: f64, tariffs: &Tariffs) -> Result<f64, MarketError> {
    if !(sdr >= 0.0) {
        return Err(MarketError::NegativeSdr(sdr));
    }
    Ok(if sdr <= 1.0 { (tariffs.fit - tariffs.ur) * sdr + tariffs.ur } else { tariffs.fit })
}

/// Clears one P2P round.
///
/// With `sdr <= 1` buyers pay the market price on the `sdr` share of their bid and
/// the utility rate on the rest, sellers receive the market price. With `sdr > 1`
/// everybody trades at the feed-in tariff. Propagates [`MarketError::Suspended`].
pub fn settle(bids: &[Bid], tariffs: &Tariffs) -> Result<ClearingResult, MarketError> {
    let (total_sell, total_buy) = totals(bids)?;
    let sdr = sdr_from_totals(total_sell, total_buy)?;
    let price = clearing_price(sdr, tariffs)?;
    let rewards = bids
        .iter()
        .map(|bid| {
            let b = bid.quantity;
            let r = if sdr > 1.0 {
                tariffs.fit * b
            } else if bid.is_buy() {
                sdr * price * b + (1.0 - sdr) * tariffs.ur * b
            } else {
                price * b
            };
            (bid.agent_id, r)
        })
        .collect();
    Ok(ClearingResult { sdr, price, rewards, total_sell, total_buy, suspended: false })
}

/// Suspended round: all offered energy goes to the utility at the feed-in tariff.
pub fn settle_suspended(bids: &[Bid], tariffs: &Tariffs) -> Result<ClearingResult, MarketError> {
    let (total_sell, total_buy) = totals(bids)?;
    let rewards = bids.iter().map(|b| (b.agent_id, tariffs.fit * b.quantity)).collect();
    Ok(ClearingResult {
        sdr: if total_buy == 0.0 { f64::INFINITY } else { total_sell / total_buy },
        price: tariffs.fit,
        rewards,
        total_sell,
        total_buy,
        suspended: true,
    })
}

/// [`settle`], falling back to [`settle_suspended`] for rounds without buyers.
pub fn clear(bids: &[Bid], tariffs: &Tariffs) -> Result<ClearingResult, MarketError> {
    match settle(bids, tariffs) {
        Err(MarketError::Suspended) => settle_suspended(bids, tariffs),
        other => other,
    }
}

/// Baseline without a P2P market: buyers pay `ur`, sellers receive `fit`.
///
/// Reports `sdr = 0` and `price = ur` for logging.
pub fn settle_no_p2p(bids: &[Bid], tariffs: &Tariffs) -> Result<ClearingResult, MarketError> {
    let (total_sell, total_buy) = totals(bids)?;
    let rewards = bids
        .iter()
        .map(|bid| {
            let rate = if bid.is_buy() { tariffs.ur } else { tariffs.fit };
            (bid.agent_id, rate * bid.quantity)
        })
        .collect();
    Ok(ClearingResult { sdr: 0.0, price: tariffs.ur, rewards, total_sell, total_buy, suspended: false })
}

/// Settles the gap between the bid and the physically delivered net energy.
///
/// A shortfall (`physical_net < bid`) is bought from the utility at `ur`; a surplus
/// is sold to it at `fit`.
pub fn settle_imbalance(bid: f64, physical_net: f64, tariffs: &Tariffs) -> f64 {
    let gap = physical_net - bid;
    if gap < 0.0 {
        tariffs.ur * gap
    } else {
        tariffs.fit * gap
    }
}
