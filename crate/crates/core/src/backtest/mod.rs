//! Policy evaluation: deterministic day-by-day replay of a strategy over a
//! frame, the resulting metrics, and report / heatmap / sector exports.

mod metrics;

pub use metrics::{
    annualized_return, annualized_volatility, cumulative_return, daily_returns, max_drawdown, sharpe_ratio, years,
    Metrics, TRADING_DAYS_PER_YEAR,
};

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ddpg::{to_magnitudes, DdpgAgent};
use crate::env::{execute_orders, llc_observe, DirectiveVector, EnvConfig, LlcObservation, LlcScaling, TradeLog, TradingEnv};
use crate::marketdata::{MarketFrame, SignalPanel};
use crate::ppo::HlcAgent;
use crate::rng::seeded;
use crate::trainer::{flat_observe, signed_to_orders};
use crate::{Error, Result};

const STREAM_RANDOM: u64 = 21;

#[derive(Debug, Error, PartialEq)]
pub enum BacktestError {
    #[error("{what}: expected {expected}, got {got}")]
    DimensionMismatch { what: &'static str, expected: usize, got: usize },
    #[error("return series has zero volatility; Sharpe ratio is undefined")]
    ZeroVolatility,
    #[error("value series needs at least 2 points, got {len}")]
    SeriesTooShort { len: usize },
    #[error("ticker {0} has no sector in the sector map")]
    UnmappedTicker(String),
    #[error("unknown strategy {0:?}")]
    UnknownStrategy(String),
    #[error("malformed sector map: {0}")]
    SectorMap(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    Hrt,
    PpoOnly,
    DdpgOnly,
    Random,
    BuyAndHoldEqualWeight,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 5] = [
        StrategyKind::Hrt,
        StrategyKind::PpoOnly,
        StrategyKind::DdpgOnly,
        StrategyKind::Random,
        StrategyKind::BuyAndHoldEqualWeight,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StrategyKind::Hrt => "hrt",
            StrategyKind::PpoOnly => "ppo_only",
            StrategyKind::DdpgOnly => "ddpg_only",
            StrategyKind::Random => "random",
            StrategyKind::BuyAndHoldEqualWeight => "buy_and_hold_equal_weight",
        }
    }
}

impl std::fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StrategyKind {
    type Err = BacktestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| BacktestError::UnknownStrategy(s.to_string()))
    }
}

/// A strategy together with whatever weights it needs.
#[derive(Debug, Clone)]
pub enum Strategy {
    /// Greedy HLC directions sized by the noise-free LLC actor.
    Hrt { hlc: HlcAgent, llc: DdpgAgent },
    /// Greedy HLC directions at full size `h_max`.
    PpoOnly { hlc: HlcAgent },
    /// Flat DDPG actor emitting signed orders from prices, holdings and cash.
    DdpgOnly { agent: DdpgAgent },
    /// Uniform directions and uniform sizes from a seeded stream.
    Random { seed: u64 },
    /// Equal-dollar purchase on day 0, held to the end.
    BuyAndHoldEqualWeight,
}

impl Strategy {
    pub fn kind(&self) -> StrategyKind {
        match self {
            Strategy::Hrt { .. } => StrategyKind::Hrt,
            Strategy::PpoOnly { .. } => StrategyKind::PpoOnly,
            Strategy::DdpgOnly { .. } => StrategyKind::DdpgOnly,
            Strategy::Random { .. } => StrategyKind::Random,
            Strategy::BuyAndHoldEqualWeight => StrategyKind::BuyAndHoldEqualWeight,
        }
    }

    fn check(&self, n: usize) -> Result<(), BacktestError> {
        let dim = |what, expected, got| {
            if expected == got {
                Ok(())
            } else {
                Err(BacktestError::DimensionMismatch { what, expected, got })
            }
        };
        match self {
            Strategy::Hrt { hlc, llc } => {
                dim("HLC stock count", n, hlc.n_stocks())?;
                dim("LLC state width", LlcObservation::dim(n), llc.state_dim())?;
                dim("LLC action width", n, llc.action_dim())
            }
            Strategy::PpoOnly { hlc } => dim("HLC stock count", n, hlc.n_stocks()),
            Strategy::DdpgOnly { agent } => {
                dim("flat DDPG state width", 2 * n + 1, agent.state_dim())?;
                dim("flat DDPG action width", n, agent.action_dim())
            }
            Strategy::Random { .. } | Strategy::BuyAndHoldEqualWeight => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestReport {
    pub strategy: StrategyKind,
    pub daily_values: Vec<f64>,
    pub daily_returns: Vec<f64>,
    pub metrics: Metrics,
    pub trade_log: TradeLog,
}

/// Replays `strategy` greedily over every day of `frame`.
pub fn run_backtest(strategy: &Strategy, frame: &MarketFrame, signals: &SignalPanel, cfg: &EnvConfig) -> Result<BacktestReport> {
    let n = frame.n_stocks();
    strategy.check(n)?;
    if signals.n_stocks() != n || signals.n_days() != frame.n_days() {
        return Err(BacktestError::DimensionMismatch { what: "signal panel stocks", expected: n, got: signals.n_stocks() }.into());
    }
    let mut env = TradingEnv::new(frame, signals, cfg.clone())?;
    env.reset();
    let scaling = LlcScaling::new(frame, cfg);
    let mut log = TradeLog::new(frame.tickers().to_vec(), frame.days().to_vec());
    let mut values = vec![env.state().value()];

    if let Strategy::BuyAndHoldEqualWeight = strategy {
        let state = env.state().clone();
        let budget = cfg.initial_capital / n as f64;
        let orders: Vec<i64> = state
            .prices
            .iter()
            .map(|p| (budget / ((1.0 + cfg.cost_rate) * p)).floor() as i64)
            .collect();
        let (mut s, _, fills) = execute_orders(&state, &orders, cfg, &frame.opens(1))?;
        log.extend(fills);
        values.push(s.value());
        for t in 2..frame.n_days() {
            s.prices = frame.opens(t);
            values.push(s.value());
        }
        return report(strategy.kind(), values, log);
    }

    let directives = match strategy {
        Strategy::Hrt { hlc, .. } | Strategy::PpoOnly { hlc } => Some(hlc.greedy_panel(signals)?),
        _ => None,
    };
    let mut rng = match strategy {
        Strategy::Random { seed } => Some(seeded(*seed, STREAM_RANDOM)),
        _ => None,
    };
    while !env.is_done() {
        let t = env.state().day;
        let (directive, sizes) = match strategy {
            Strategy::Hrt { llc, .. } => {
                let d = directives.as_ref().expect("greedy panel")[t].clone();
                let obs = llc_observe(env.state(), &d, &scaling).to_vec();
                let sizes = to_magnitudes(&llc.actor.forward(&obs)?);
                (d, sizes)
            }
            Strategy::PpoOnly { .. } => (directives.as_ref().expect("greedy panel")[t].clone(), vec![1.0; n]),
            Strategy::DdpgOnly { agent } => signed_to_orders(&agent.actor.forward(&flat_observe(env.state(), &scaling))?),
            Strategy::Random { .. } => {
                let rng = rng.as_mut().expect("random stream");
                let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
                let sizes = (0..n).map(|_| rng.random::<f64>()).collect();
                (DirectiveVector::from_action_indices(&idx), sizes)
            }
            Strategy::BuyAndHoldEqualWeight => unreachable!("handled above"),
        };
        let out = env.step(&directive, &sizes)?;
        log.extend(out.fills);
        values.push(out.value);
    }
    report(strategy.kind(), values, log)
}

fn report(strategy: StrategyKind, values: Vec<f64>, trade_log: TradeLog) -> Result<BacktestReport> {
    Ok(BacktestReport {
        strategy,
        daily_returns: daily_returns(&values),
        metrics: Metrics::from_values(&values)?,
        daily_values: values,
        trade_log,
    })
}

impl BacktestReport {
    /// Metrics, strategy tag and an arbitrary configuration echo as JSON.
    pub fn summary_json(&self, config: &serde_json::Value) -> serde_json::Value {
        serde_json::json!({
            "strategy": self.strategy,
            "metrics": self.metrics,
            "n_days": self.daily_values.len(),
            "final_value": self.daily_values.last(),
            "total_cost": self.trade_log.total_cost(),
            "n_fills": self.trade_log.records.len(),
            "config": config,
        })
    }

    /// `day,date,value,daily_return` (empty return on day 0).
    pub fn write_daily_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["day", "date", "value", "daily_return"])?;
        for (t, v) in self.daily_values.iter().enumerate() {
            let date = self.trade_log.dates.get(t).map(|d| d.to_string()).unwrap_or_default();
            let r = if t == 0 { String::new() } else { self.daily_returns[t - 1].to_string() };
            w.write_record([t.to_string(), date, v.to_string(), r])?;
        }
        w.flush().map_err(|e| Error::io("<daily csv>", e))?;
        Ok(())
    }

    /// Writes `report.json`, `daily.csv`, `trades.csv` and `heatmap.csv` into `dir`.
    pub fn save_all(&self, dir: &Path, config: &serde_json::Value, h_max: u32) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let json = serde_json::to_string_pretty(&self.summary_json(config))?;
        let p = dir.join("report.json");
        std::fs::write(&p, json).map_err(|e| Error::io(&p, e))?;
        let create = |name: &str| {
            let p = dir.join(name);
            std::fs::File::create(&p).map(std::io::BufWriter::new).map_err(|e| Error::io(&p, e))
        };
        self.write_daily_csv(create("daily.csv")?)?;
        self.trade_log.write_csv(create("trades.csv")?)?;
        export_heatmap_data(&self.trade_log, h_max, create("heatmap.csv")?)
    }
}

/// `sign(s)·ln(1 + min(|s|, h_max))`.
pub fn heatmap_value(shares: i64, h_max: u32) -> f64 {
    let mag = shares.unsigned_abs().min(u64::from(h_max)) as f64;
    (shares.signum() as f64) * mag.ln_1p()
}

/// `ticker,day,log_signed_volume` for every stock and day, using net shares.
pub fn export_heatmap_data<W: Write>(log: &TradeLog, h_max: u32, out: W) -> Result<()> {
    let grid = log.net_shares();
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["ticker", "day", "log_signed_volume"])?;
    for (i, row) in grid.iter().enumerate() {
        for (t, &s) in row.iter().enumerate() {
            w.write_record([log.tickers[i].clone(), log.dates[t].to_string(), heatmap_value(s, h_max).to_string()])?;
        }
    }
    w.flush().map_err(|e| Error::io("<heatmap csv>", e))?;
    Ok(())
}

/// Reads a `ticker,sector` CSV.
pub fn load_sector_map(path: impl AsRef<Path>) -> Result<BTreeMap<String, String>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let headers: Vec<String> = r.headers()?.iter().map(|h| h.to_ascii_lowercase()).collect();
    if headers != ["ticker", "sector"] {
        return Err(BacktestError::SectorMap(format!("expected header ticker,sector, found {}", headers.join(","))).into());
    }
    let mut map = BTreeMap::new();
    for rec in r.records() {
        let rec = rec?;
        map.insert(rec[0].to_string(), rec[1].to_string());
    }
    Ok(map)
}

/// Share of traded notional `Σ|shares·price|` per sector; sums to 1 when
/// anything traded, empty otherwise.
pub fn sector_volume_proportions(
    log: &TradeLog,
    sectors: &BTreeMap<String, String>,
) -> Result<BTreeMap<String, f64>, BacktestError> {
    let mut totals: BTreeMap<String, f64> = BTreeMap::new();
    for ticker in &log.tickers {
        let sector = sectors.get(ticker).ok_or_else(|| BacktestError::UnmappedTicker(ticker.clone()))?;
        totals.entry(sector.clone()).or_insert(0.0);
    }
    for r in &log.records {
        *totals.get_mut(&sectors[&log.tickers[r.stock]]).expect("sector seeded above") += r.notional();
    }
    let sum: f64 = totals.values().sum();
    if sum == 0.0 {
        return Ok(BTreeMap::new());
    }
    Ok(totals.into_iter().map(|(k, v)| (k, v / sum)).collect())
}

#[cfg(test)]
mod tests;
