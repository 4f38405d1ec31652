//! Two-level trading MDP over a [`MarketFrame`].
//!
//! Each trading day `t` the HLC observes the signal panel and emits a
//! [`DirectiveVector`]; the LLC observes prices, holdings, cash and that
//! directive and emits per-stock trade magnitudes. Fills happen at `open[t]`
//! and the step is marked to market at `open[t+1]`.

mod trade_log;

pub use trade_log::{TradeLog, TradeRecord};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::marketdata::{MarketFrame, SignalPanel};

#[derive(Debug, Error, PartialEq)]
pub enum EnvError {
    #[error("frame has {days} day(s); at least 2 are needed")]
    FrameTooShort { days: usize },
    #[error("trade sizes contain a non-finite value at index {index}")]
    NonFiniteSizes { index: usize },
    #[error("directive entry {0} not in {{-1, 0, 1}}")]
    InvalidDirective(i64),
    #[error("length mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("day {t} outside 0..{days}")]
    DayOutOfRange { t: usize, days: usize },
    #[error("episode already finished")]
    EpisodeFinished,
    #[error("invalid env config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub initial_capital: f64,
    /// Proportional transaction cost applied to traded notional.
    pub cost_rate: f64,
    /// Maximum shares traded per stock per day.
    pub h_max: u32,
    /// Multiplier applied to the LLC's dollar reward.
    pub reward_scale: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            initial_capital: 1_000_000.0,
            cost_rate: 0.001,
            h_max: 100,
            reward_scale: 1e-4,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |m: &str| Err(EnvError::InvalidConfig(m.into()));
        if !(self.initial_capital.is_finite() && self.initial_capital > 0.0) {
            return bad("initial_capital must be > 0");
        }
        if !(0.0..1.0).contains(&self.cost_rate) {
            return bad("cost_rate must lie in [0, 1)");
        }
        if self.h_max < 1 {
            return bad("h_max must be >= 1");
        }
        if !(self.reward_scale.is_finite() && self.reward_scale > 0.0) {
            return bad("reward_scale must be > 0");
        }
        Ok(())
    }
}

/// Long-only portfolio: open prices, share counts, cash and the day index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortfolioState {
    pub prices: Vec<f64>,
    pub holdings: Vec<i64>,
    pub cash: f64,
    pub day: usize,
}

impl PortfolioState {
    /// `pᵀh + b` at the state's own prices.
    pub fn value(&self) -> f64 {
        self.value_at(&self.prices)
    }

    pub fn value_at(&self, prices: &[f64]) -> f64 {
        prices
            .iter()
            .zip(&self.holdings)
            .map(|(p, &h)| p * h as f64)
            .sum::<f64>()
            + self.cash
    }
}

/// Per-stock HLC decision: +1 buy, −1 sell, 0 hold.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DirectiveVector(Vec<i8>);

impl DirectiveVector {
    /// Index order of a per-stock action group: buy, sell, hold.
    pub const ACTIONS: [i8; 3] = [1, -1, 0];

    pub fn new(entries: Vec<i8>) -> Result<Self, EnvError> {
        if let Some(&e) = entries.iter().find(|e| !(-1..=1).contains(*e)) {
            return Err(EnvError::InvalidDirective(e as i64));
        }
        Ok(Self(entries))
    }

    pub fn hold(n: usize) -> Self {
        Self(vec![0; n])
    }

    /// Maps per-stock action indices (0 buy, 1 sell, 2 hold) to a directive.
    pub fn from_action_indices(indices: &[usize]) -> Self {
        Self(indices.iter().map(|&k| Self::ACTIONS[k]).collect())
    }

    pub fn entries(&self) -> &[i8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// HLC state `[fr, ss]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HlcObservation {
    pub fr: Vec<f64>,
    pub ss: Vec<f64>,
}

impl HlcObservation {
    pub fn to_vec(&self) -> Vec<f64> {
        self.fr.iter().chain(&self.ss).copied().collect()
    }
}

/// LLC state `[p, h, b, aʰ]`, already normalized (see [`LlcScaling`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlcObservation {
    pub prices: Vec<f64>,
    pub holdings: Vec<f64>,
    pub cash: f64,
    pub directive: Vec<f64>,
}

impl LlcObservation {
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(3 * self.prices.len() + 1);
        v.extend_from_slice(&self.prices);
        v.extend_from_slice(&self.holdings);
        v.push(self.cash);
        v.extend_from_slice(&self.directive);
        v
    }

    pub fn dim(n_stocks: usize) -> usize {
        3 * n_stocks + 1
    }
}

/// Normalizers for LLC inputs: prices by each stock's first open, holdings by
/// `h_max`, cash by the initial capital.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlcScaling {
    pub first_prices: Vec<f64>,
    pub initial_capital: f64,
    pub h_max: f64,
}

impl LlcScaling {
    pub fn new(frame: &MarketFrame, cfg: &EnvConfig) -> Self {
        Self {
            first_prices: frame.opens(0),
            initial_capital: cfg.initial_capital,
            h_max: cfg.h_max as f64,
        }
    }
}

/// Per-stock alignment reward: `sign(a)·sgn(Δp)`, 0 when holding.
pub fn alignment_reward(a: i8, delta_p: f64) -> f64 {
    if a == 0 {
        return 0.0;
    }
    let sgn = if delta_p > 0.0 {
        1.0
    } else if delta_p < 0.0 {
        -1.0
    } else {
        0.0
    };
    f64::from(a.signum()) * sgn
}

/// `α_t = α₀·exp(−λt)`.
pub fn alpha_schedule(t: f64, alpha0: f64, lambda: f64) -> f64 {
    alpha0 * (-lambda * t).exp()
}

/// Mixed HLC reward `α·Σ align + (1−α)·rˡ`.
pub fn hlc_reward(align_sum: f64, llc_reward: f64, alpha: f64) -> f64 {
    alpha * align_sum + (1.0 - alpha) * llc_reward
}

fn check_len(expected: usize, got: usize) -> Result<(), EnvError> {
    if expected != got {
        return Err(EnvError::ShapeMismatch { expected, got });
    }
    Ok(())
}

/// Fills signed share orders at `state.prices`: sells first (clipped to
/// holdings), then buys in ascending stock order (clipped to available cash).
/// Returns the post-trade state marked at `next_prices` (day advanced by one),
/// the scaled reward `reward_scale·(v_after − v_before)` and the executed fills.
pub fn execute_orders(
    state: &PortfolioState,
    orders: &[i64],
    cfg: &EnvConfig,
    next_prices: &[f64],
) -> Result<(PortfolioState, f64, Vec<TradeRecord>), EnvError> {
    let n = state.prices.len();
    check_len(n, orders.len())?;
    check_len(n, next_prices.len())?;
    let v_before = state.value();
    let mut holdings = state.holdings.clone();
    let mut cash = state.cash;
    let mut fills = Vec::new();

    for i in 0..n {
        if orders[i] < 0 {
            let shares = (-orders[i]).min(holdings[i]);
            if shares > 0 {
                let notional = state.prices[i] * shares as f64;
                let cost = cfg.cost_rate * notional;
                holdings[i] -= shares;
                cash += notional - cost;
                fills.push(TradeRecord { day: state.day, stock: i, shares: -shares, price: state.prices[i], cost });
            }
        }
    }
    for i in 0..n {
        if orders[i] > 0 {
            let unit = (1.0 + cfg.cost_rate) * state.prices[i];
            let mut shares = orders[i].min((cash / unit).floor().max(0.0) as i64);
            // Guard against the product rounding above the available cash.
            while shares > 0 && unit * shares as f64 > cash {
                shares -= 1;
            }
            if shares > 0 {
                let notional = state.prices[i] * shares as f64;
                let cost = cfg.cost_rate * notional;
                holdings[i] += shares;
                cash = (cash - (notional + cost)).max(0.0);
                fills.push(TradeRecord { day: state.day, stock: i, shares, price: state.prices[i], cost });
            }
        }
    }
    let next = PortfolioState {
        prices: next_prices.to_vec(),
        holdings,
        cash,
        day: state.day + 1,
    };
    let reward = cfg.reward_scale * (next.value() - v_before);
    Ok((next, reward, fills))
}

/// Maps a directive plus magnitudes in [0, 1] to share orders
/// (`round(size·h_max)`, zero for held stocks) and executes them.
pub fn execute_trades(
    state: &PortfolioState,
    directive: &DirectiveVector,
    sizes: &[f64],
    cfg: &EnvConfig,
    next_prices: &[f64],
) -> Result<(PortfolioState, f64, Vec<TradeRecord>), EnvError> {
    let n = state.prices.len();
    check_len(n, directive.len())?;
    check_len(n, sizes.len())?;
    if let Some(index) = sizes.iter().position(|s| !s.is_finite()) {
        return Err(EnvError::NonFiniteSizes { index });
    }
    let orders: Vec<i64> = directive
        .entries()
        .iter()
        .zip(sizes)
        .map(|(&a, &s)| {
            let k = (s.clamp(0.0, 1.0) * cfg.h_max as f64).round() as i64;
            i64::from(a) * k
        })
        .collect();
    execute_orders(state, &orders, cfg, next_prices)
}

/// Signal slice at day `t`.
pub fn hlc_observe(signals: &SignalPanel, t: usize) -> Result<HlcObservation, EnvError> {
    let days = signals.n_days();
    if t >= days {
        return Err(EnvError::DayOutOfRange { t, days });
    }
    Ok(HlcObservation {
        fr: signals.fr.iter().map(|r| r[t]).collect(),
        ss: signals.ss.iter().map(|r| r[t]).collect(),
    })
}

pub fn llc_observe(state: &PortfolioState, directive: &DirectiveVector, scaling: &LlcScaling) -> LlcObservation {
    LlcObservation {
        prices: state.prices.iter().zip(&scaling.first_prices).map(|(p, p0)| p / p0).collect(),
        holdings: state.holdings.iter().map(|&h| h as f64 / scaling.h_max).collect(),
        cash: state.cash / scaling.initial_capital,
        directive: directive.entries().iter().map(|&a| f64::from(a)).collect(),
    }
}

fn check_inputs(frame: &MarketFrame, signals: &SignalPanel, cfg: &EnvConfig) -> Result<(), EnvError> {
    cfg.validate()?;
    if frame.n_days() < 2 {
        return Err(EnvError::FrameTooShort { days: frame.n_days() });
    }
    check_len(frame.n_stocks(), signals.n_stocks())?;
    check_len(frame.n_days(), signals.n_days())?;
    Ok(())
}

/// Fresh portfolio (no holdings, all cash) at day 0 and the first HLC observation.
pub fn reset(
    frame: &MarketFrame,
    signals: &SignalPanel,
    cfg: &EnvConfig,
) -> Result<(PortfolioState, HlcObservation), EnvError> {
    check_inputs(frame, signals, cfg)?;
    let state = PortfolioState {
        prices: frame.opens(0),
        holdings: vec![0; frame.n_stocks()],
        cash: cfg.initial_capital,
        day: 0,
    };
    Ok((state, hlc_observe(signals, 0)?))
}

/// Result of one trading day.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    /// Per-stock alignment rewards.
    pub alignment: Vec<f64>,
    pub align_sum: f64,
    /// Scaled LLC reward.
    pub llc_reward: f64,
    pub fills: Vec<TradeRecord>,
    /// Portfolio value after the step, at the next day's open.
    pub value: f64,
    pub done: bool,
}

/// Day-by-day environment over a frame and its signal panel.
#[derive(Debug, Clone)]
pub struct TradingEnv<'a> {
    frame: &'a MarketFrame,
    signals: &'a SignalPanel,
    cfg: EnvConfig,
    scaling: LlcScaling,
    state: PortfolioState,
}

impl<'a> TradingEnv<'a> {
    pub fn new(frame: &'a MarketFrame, signals: &'a SignalPanel, cfg: EnvConfig) -> Result<Self, EnvError> {
        let (state, _) = reset(frame, signals, &cfg)?;
        let scaling = LlcScaling::new(frame, &cfg);
        Ok(Self { frame, signals, cfg, scaling, state })
    }

    pub fn reset(&mut self) -> HlcObservation {
        let (state, obs) = reset(self.frame, self.signals, &self.cfg).expect("validated at construction");
        self.state = state;
        obs
    }

    pub fn frame(&self) -> &MarketFrame {
        self.frame
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn state(&self) -> &PortfolioState {
        &self.state
    }

    pub fn n_stocks(&self) -> usize {
        self.frame.n_stocks()
    }

    /// Steps per episode (one per day except the last).
    pub fn n_steps(&self) -> usize {
        self.frame.n_days() - 1
    }

    pub fn is_done(&self) -> bool {
        self.state.day + 1 >= self.frame.n_days()
    }

    pub fn hlc_observation(&self) -> HlcObservation {
        hlc_observe(self.signals, self.state.day).expect("day within frame")
    }

    pub fn llc_observation(&self, directive: &DirectiveVector) -> LlcObservation {
        llc_observe(&self.state, directive, &self.scaling)
    }

    pub fn step(&mut self, directive: &DirectiveVector, sizes: &[f64]) -> Result<StepOutcome, EnvError> {
        if self.is_done() {
            return Err(EnvError::EpisodeFinished);
        }
        let t = self.state.day;
        let next_prices = self.frame.opens(t + 1);
        let alignment: Vec<f64> = directive
            .entries()
            .iter()
            .zip(self.state.prices.iter().zip(&next_prices))
            .map(|(&a, (p0, p1))| alignment_reward(a, p1 - p0))
            .collect();
        let (next, llc_reward, fills) = execute_trades(&self.state, directive, sizes, &self.cfg, &next_prices)?;
        self.state = next;
        Ok(StepOutcome {
            align_sum: alignment.iter().sum(),
            alignment,
            llc_reward,
            fills,
            value: self.state.value(),
            done: self.is_done(),
        })
    }
}
