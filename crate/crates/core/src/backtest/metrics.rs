//! Performance metrics. Every function is a pure function of its series.

use serde::{Deserialize, Serialize};

use super::BacktestError;

pub const TRADING_DAYS_PER_YEAR: f64 = 252.0;

/// `v[t+1]/v[t] − 1`.
pub fn daily_returns(values: &[f64]) -> Vec<f64> {
    values.windows(2).map(|w| w[1] / w[0] - 1.0).collect()
}

/// Compounded `V_T/V_0 − 1`.
pub fn cumulative_return(values: &[f64]) -> f64 {
    match (values.first(), values.last()) {
        (Some(first), Some(last)) => last / first - 1.0,
        _ => 0.0,
    }
}

/// `(1 + cum)^(1/n_years) − 1`.
pub fn annualized_return(cum: f64, n_years: f64) -> f64 {
    (1.0 + cum).powf(1.0 / n_years) - 1.0
}

/// Years spanned by `n_returns` daily returns.
pub fn years(n_returns: usize) -> f64 {
    n_returns as f64 / TRADING_DAYS_PER_YEAR
}

/// Sample standard deviation (n − 1) of daily returns times √252.
pub fn annualized_volatility(returns: &[f64]) -> f64 {
    let n = returns.len();
    if n < 2 {
        return 0.0;
    }
    let mean = returns.iter().sum::<f64>() / n as f64;
    let ss: f64 = returns.iter().map(|r| (r - mean).powi(2)).sum();
    (ss / (n - 1) as f64).sqrt() * TRADING_DAYS_PER_YEAR.sqrt()
}

/// Annualized return of the compounded series over annualized volatility,
/// with a zero risk-free rate.
pub fn sharpe_ratio(returns: &[f64]) -> Result<f64, BacktestError> {
    let vol = annualized_volatility(returns);
    if vol == 0.0 {
        return Err(BacktestError::ZeroVolatility);
    }
    let cum = returns.iter().fold(1.0, |acc, r| acc * (1.0 + r)) - 1.0;
    Ok(annualized_return(cum, years(returns.len())) / vol)
}

/// Largest peak-to-trough drop, `min_t v[t]/max(v[..=t]) − 1` (≤ 0).
pub fn max_drawdown(values: &[f64]) -> f64 {
    let mut peak = f64::NEG_INFINITY;
    let mut worst: f64 = 0.0;
    for &v in values {
        peak = peak.max(v);
        worst = worst.min(v / peak - 1.0);
    }
    worst
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub cumulative_return: f64,
    pub annualized_return: f64,
    pub annualized_volatility: f64,
    /// `None` when the return series has zero volatility.
    pub sharpe_ratio: Option<f64>,
    pub max_drawdown: f64,
}

impl Metrics {
    pub fn from_values(values: &[f64]) -> Result<Self, BacktestError> {
        if values.len() < 2 {
            return Err(BacktestError::SeriesTooShort { len: values.len() });
        }
        let returns = daily_returns(values);
        let cum = cumulative_return(values);
        Ok(Self {
            cumulative_return: cum,
            annualized_return: annualized_return(cum, years(returns.len())),
            annualized_volatility: annualized_volatility(&returns),
            sharpe_ratio: sharpe_ratio(&returns).ok(),
            max_drawdown: max_drawdown(values),
        })
    }

    /// `(name, value)` pairs in report order; an undefined Sharpe is NaN.
    pub fn named(&self) -> [(&'static str, f64); 5] {
        [
            ("cumulative_return", self.cumulative_return),
            ("annualized_return", self.annualized_return),
            ("annualized_volatility", self.annualized_volatility),
            ("sharpe_ratio", self.sharpe_ratio.unwrap_or(f64::NAN)),
            ("max_drawdown", self.max_drawdown),
        ]
    }
}
