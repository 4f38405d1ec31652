//! Daily OHLCV panels, planted-signal synthetic markets and HLC signal panels.

mod io;
mod signals;
mod synthetic;

pub use io::{load_csv, load_signals_csv, write_csv, write_signals_csv};
pub use signals::{baseline_signals, SignalPanel, DEFAULT_LOOKBACK};
pub use synthetic::{generate_synthetic, PerStock, SyntheticMarketSpec};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MarketDataError {
    #[error("ticker {0:?} not present in the input")]
    MissingTicker(String),
    #[error("{file}:{line}: {reason}")]
    MalformedRow {
        file: String,
        line: u64,
        reason: String,
    },
    #[error("tickers share no common trading dates")]
    EmptyIntersection,
    #[error("day {t} is the last day of the frame; no forward return exists")]
    LastDay { t: usize },
    #[error("invalid synthetic spec: {field}: {reason}")]
    InvalidSpec { field: &'static str, reason: String },
    #[error("invalid market frame: {0}")]
    InvalidFrame(String),
    #[error("invalid signal panel: {0}")]
    InvalidSignals(String),
}

/// One daily bar.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OhlcvBar {
    pub date: NaiveDate,
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
    pub volume: f64,
}

impl OhlcvBar {
    /// Checks the bar invariants, returning a human-readable reason on failure.
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("open", self.open),
            ("high", self.high),
            ("low", self.low),
            ("close", self.close),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return Err(format!("{name} must be finite and > 0, got {v}"));
            }
        }
        if !self.volume.is_finite() || self.volume < 0.0 {
            return Err(format!("volume must be finite and >= 0, got {}", self.volume));
        }
        if self.low > self.high {
            return Err(format!("low {} > high {}", self.low, self.high));
        }
        if self.low > self.open.min(self.close) {
            return Err(format!("low {} above min(open, close)", self.low));
        }
        if self.high < self.open.max(self.close) {
            return Err(format!("high {} below max(open, close)", self.high));
        }
        Ok(())
    }

    /// Typical price (H+L+C)/3, clamped into [low, high].
    pub fn typical_price(&self) -> f64 {
        ((self.high + self.low + self.close) / 3.0).clamp(self.low, self.high)
    }
}

/// Aligned N×T panel of bars plus a per-cell VWAP proxy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketFrame {
    tickers: Vec<String>,
    days: Vec<NaiveDate>,
    bars: Vec<Vec<OhlcvBar>>,
    vwap: Vec<Vec<f64>>,
}

impl MarketFrame {
    /// Builds a frame from a complete grid (`bars[i][t]`), validating every
    /// invariant and deriving VWAP.
    pub fn new(
        tickers: Vec<String>,
        days: Vec<NaiveDate>,
        bars: Vec<Vec<OhlcvBar>>,
    ) -> Result<Self, MarketDataError> {
        let bad = |m: String| Err(MarketDataError::InvalidFrame(m));
        if tickers.is_empty() {
            return bad("no tickers".into());
        }
        if days.is_empty() {
            return bad("no days".into());
        }
        let mut seen = std::collections::HashSet::new();
        for t in &tickers {
            if !seen.insert(t) {
                return bad(format!("duplicate ticker {t:?}"));
            }
        }
        if days.windows(2).any(|w| w[0] >= w[1]) {
            return bad("days must be strictly increasing".into());
        }
        if bars.len() != tickers.len() {
            return bad(format!("{} bar rows for {} tickers", bars.len(), tickers.len()));
        }
        for (i, row) in bars.iter().enumerate() {
            if row.len() != days.len() {
                return bad(format!("ticker {} has {} bars, expected {}", tickers[i], row.len(), days.len()));
            }
            for (t, bar) in row.iter().enumerate() {
                if bar.date != days[t] {
                    return bad(format!("bar date {} does not match day {}", bar.date, days[t]));
                }
                if let Err(reason) = bar.validate() {
                    return bad(format!("{} {}: {reason}", tickers[i], days[t]));
                }
            }
        }
        let mut frame = Self {
            tickers,
            days,
            bars,
            vwap: Vec::new(),
        };
        frame.vwap = vwap_grid(&frame.bars);
        Ok(frame)
    }

    pub fn tickers(&self) -> &[String] {
        &self.tickers
    }

    pub fn days(&self) -> &[NaiveDate] {
        &self.days
    }

    pub fn n_stocks(&self) -> usize {
        self.tickers.len()
    }

    pub fn n_days(&self) -> usize {
        self.days.len()
    }

    pub fn bar(&self, i: usize, t: usize) -> &OhlcvBar {
        &self.bars[i][t]
    }

    pub fn bars(&self, i: usize) -> &[OhlcvBar] {
        &self.bars[i]
    }

    pub fn vwap(&self, i: usize, t: usize) -> f64 {
        self.vwap[i][t]
    }

    pub fn open(&self, i: usize, t: usize) -> f64 {
        self.bars[i][t].open
    }

    /// Opening prices of every stock on day `t`.
    pub fn opens(&self, t: usize) -> Vec<f64> {
        self.bars.iter().map(|row| row[t].open).collect()
    }

    /// Restrict to the half-open day range `range`.
    pub fn slice_days(&self, range: std::ops::Range<usize>) -> Result<Self, MarketDataError> {
        if range.start >= range.end || range.end > self.n_days() {
            return Err(MarketDataError::InvalidFrame(format!(
                "day range {range:?} outside 0..{}",
                self.n_days()
            )));
        }
        Ok(Self {
            tickers: self.tickers.clone(),
            days: self.days[range.clone()].to_vec(),
            bars: self.bars.iter().map(|r| r[range.clone()].to_vec()).collect(),
            vwap: self.vwap.iter().map(|r| r[range.clone()].to_vec()).collect(),
        })
    }
}

fn vwap_grid(bars: &[Vec<OhlcvBar>]) -> Vec<Vec<f64>> {
    bars.iter()
        .map(|row| row.iter().map(OhlcvBar::typical_price).collect())
        .collect()
}

/// Recomputes the VWAP grid with the typical-price proxy (H+L+C)/3.
pub fn compute_vwap(frame: &MarketFrame) -> MarketFrame {
    let mut out = frame.clone();
    out.vwap = vwap_grid(&out.bars);
    out
}

/// Next-day open-to-open return `open[t+1]/open[t] - 1`.
pub fn realized_forward_return(
    frame: &MarketFrame,
    i: usize,
    t: usize,
) -> Result<f64, MarketDataError> {
    if t + 1 >= frame.n_days() {
        return Err(MarketDataError::LastDay { t });
    }
    Ok(frame.open(i, t + 1) / frame.open(i, t) - 1.0)
}

/// All forward returns, `N × (T-1)`.
pub fn forward_returns(frame: &MarketFrame) -> Vec<Vec<f64>> {
    (0..frame.n_stocks())
        .map(|i| {
            frame.bars[i]
                .windows(2)
                .map(|w| w[1].open / w[0].open - 1.0)
                .collect()
        })
        .collect()
}
