//! Hierarchical reinforcement-learning trading engine.
//!
//! A discrete High-Level Controller (PPO) picks a buy/sell/hold direction per
//! stock; a continuous Low-Level Controller (DDPG) sizes the trades. The two
//! are trained with a three-phase alternating schedule and evaluated by a
//! deterministic backtester.
//!
//! Module map:
//! - [`marketdata`]: OHLCV ingestion, alignment, synthetic markets, signal panels.
//! - [`nn`]: dense MLPs with backprop, AdamW, binary checkpoints.
//! - [`env`]: portfolio accounting and the two-level trading MDP.
//! - [`ppo`]: the HLC agent.
//! - [`ddpg`]: the LLC agent and replay buffer.
//! - [`trainer`]: phased alternating training and run checkpoints.
//! - [`backtest`]: policy evaluation, metrics and report exports.
//! - [`experiment`]: multi-seed sweeps.

pub mod backtest;
pub mod binio;
pub mod ddpg;
pub mod env;
pub mod experiment;
pub mod marketdata;
pub mod nn;
pub mod par;
pub mod ppo;
pub mod rng;
pub mod trainer;

mod error;

pub use error::{Error, FormatError, Result};
