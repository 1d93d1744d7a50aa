//! Peer-to-peer distribution energy market with independent learning prosumers.
//!
//! The crate couples four pieces:
//!
//! * [`market`]: supply-demand-ratio clearing and settlement,
//! * [`grid`]: admittance matrix, Newton-Raphson AC power flow, voltage penalty,
//! * [`prosumer`]: battery, HVAC, PV/inverter physics and observations,
//! * [`rl`]: from-scratch PPO (MLP actor/critic, Adam, clipped surrogate),
//!
//! orchestrated by [`sim`], which runs the hourly observe / act / clear / solve / learn loop
//! and produces episode metrics.

pub mod grid;
pub mod market;
pub mod prosumer;
pub mod rl;
pub mod rng;
pub mod sim;
