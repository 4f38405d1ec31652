//! Seeded geometric-Brownian-motion markets with a planted forward-return signal.

use chrono::{Datelike, NaiveDate, Weekday};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{MarketDataError, MarketFrame, OhlcvBar, SignalPanel};
use crate::rng::seeded;

const DT: f64 = 1.0 / 252.0;

// Independent RNG streams so changing one knob (e.g. signal quality) leaves
// the price paths untouched.
const STREAM_PRICES: u64 = 1;
const STREAM_FR_NOISE: u64 = 2;
const STREAM_SS_NOISE: u64 = 3;
const STREAM_BARS: u64 = 4;

/// A scalar applied to every stock or an explicit per-stock list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerStock {
    All(f64),
    Each(Vec<f64>),
}

impl PerStock {
    pub fn get(&self, i: usize) -> f64 {
        match self {
            PerStock::All(v) => *v,
            PerStock::Each(vs) => vs[i],
        }
    }

    fn values(&self) -> Vec<f64> {
        match self {
            PerStock::All(v) => vec![*v],
            PerStock::Each(vs) => vs.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticMarketSpec {
    pub n_stocks: usize,
    pub n_days: usize,
    pub seed: u64,
    /// Annualized GBM drift.
    #[serde(default = "default_drift")]
    pub drift: PerStock,
    /// Annualized GBM volatility.
    #[serde(default = "default_volatility")]
    pub volatility: PerStock,
    /// Correlation ρ between the emitted `fr` and the realized next-day return.
    pub signal_quality: f64,
    #[serde(default = "default_initial_price")]
    pub initial_price: f64,
    #[serde(default = "default_start_date")]
    pub start_date: NaiveDate,
    /// Log-scale noise multiplying the sentiment score.
    #[serde(default = "default_ss_noise")]
    pub sentiment_noise: f64,
}

fn default_drift() -> PerStock {
    PerStock::All(0.05)
}
fn default_volatility() -> PerStock {
    PerStock::All(0.3)
}
fn default_initial_price() -> f64 {
    100.0
}
fn default_start_date() -> NaiveDate {
    NaiveDate::from_ymd_opt(2021, 1, 4).expect("valid date")
}
fn default_ss_noise() -> f64 {
    0.3
}

impl SyntheticMarketSpec {
    pub fn new(n_stocks: usize, n_days: usize, seed: u64, signal_quality: f64) -> Self {
        Self {
            n_stocks,
            n_days,
            seed,
            drift: default_drift(),
            volatility: default_volatility(),
            signal_quality,
            initial_price: default_initial_price(),
            start_date: default_start_date(),
            sentiment_noise: default_ss_noise(),
        }
    }

    pub fn validate(&self) -> Result<(), MarketDataError> {
        let bad = |field, reason: String| Err(MarketDataError::InvalidSpec { field, reason });
        if self.n_stocks < 1 {
            return bad("n_stocks", "must be >= 1".into());
        }
        if self.n_days < 2 {
            return bad("n_days", format!("must be >= 2, got {}", self.n_days));
        }
        if !(0.0..=1.0).contains(&self.signal_quality) {
            return bad("signal_quality", format!("must lie in [0, 1], got {}", self.signal_quality));
        }
        if !(self.initial_price.is_finite() && self.initial_price > 0.0) {
            return bad("initial_price", "must be finite and > 0".into());
        }
        if !(self.sentiment_noise.is_finite() && self.sentiment_noise >= 0.0) {
            return bad("sentiment_noise", "must be finite and >= 0".into());
        }
        for (field, p, positive) in [("drift", &self.drift, false), ("volatility", &self.volatility, true)] {
            if let PerStock::Each(vs) = p {
                if vs.len() != self.n_stocks {
                    return bad(field, format!("{} values for {} stocks", vs.len(), self.n_stocks));
                }
            }
            for v in p.values() {
                if !v.is_finite() || (positive && v <= 0.0) {
                    return bad(field, format!("invalid value {v}"));
                }
            }
        }
        Ok(())
    }
}

/// Weekday calendar starting at `start` (rolled forward past a weekend).
fn business_days(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(n);
    let mut d = start;
    while out.len() < n {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d = d.succ_opt().expect("date in range");
    }
    out
}

/// Generates a market and its planted signal panel.
///
/// Opens follow GBM: `ln(open[t+1]/open[t]) = (μ − σ²/2)Δt + σ√Δt·ξ`. With
/// `z = ln-return / (σ√Δt)` the emitted signal is
/// `fr = σ√Δt·(ρ·z + √(1−ρ²)·ε)`, so for ρ = 1 the sign of `fr` equals the
/// sign of the realized forward return. The sentiment score is
/// `clamp(tanh(fr/(σ√Δt))·exp(noise·η), −1, 1)`, sharing the sign of `fr`.
/// The last day's signal refers to an unrealized extra draw.
pub fn generate_synthetic(
    spec: &SyntheticMarketSpec,
) -> Result<(MarketFrame, SignalPanel), MarketDataError> {
    spec.validate()?;
    let (n, t_len) = (spec.n_stocks, spec.n_days);
    let rho = spec.signal_quality;
    let ortho = (1.0 - rho * rho).max(0.0).sqrt();

    let mut price_rng = seeded(spec.seed, STREAM_PRICES);
    let mut fr_rng = seeded(spec.seed, STREAM_FR_NOISE);
    let mut ss_rng = seeded(spec.seed, STREAM_SS_NOISE);
    let mut bar_rng = seeded(spec.seed, STREAM_BARS);

    let days = business_days(spec.start_date, t_len);
    let mut bars = vec![Vec::with_capacity(t_len); n];
    let mut fr = vec![vec![0.0; t_len]; n];
    let mut ss = vec![vec![0.0; t_len]; n];
    let mut opens = vec![spec.initial_price; n];

    for (t, &date) in days.iter().enumerate() {
        for i in 0..n {
            let sigma = spec.volatility.get(i);
            let step_sd = sigma * DT.sqrt();
            let log_ret = (spec.drift.get(i) - 0.5 * sigma * sigma) * DT
                + step_sd * price_rng.sample::<f64, _>(StandardNormal);
            let z = log_ret / step_sd;
            let eps: f64 = fr_rng.sample(StandardNormal);
            let signal = step_sd * (rho * z + ortho * eps);
            fr[i][t] = signal;
            let eta: f64 = ss_rng.sample(StandardNormal);
            ss[i][t] = ((signal / step_sd).tanh() * (spec.sentiment_noise * eta).exp()).clamp(-1.0, 1.0);

            let open = opens[i];
            let u: f64 = bar_rng.sample(StandardNormal);
            let close = open * (0.5 * step_sd * u).exp();
            let up: f64 = bar_rng.sample(StandardNormal);
            let down: f64 = bar_rng.sample(StandardNormal);
            let vol: f64 = bar_rng.sample(StandardNormal);
            bars[i].push(OhlcvBar {
                date,
                open,
                high: open.max(close) * (0.3 * step_sd * up.abs()).exp(),
                low: open.min(close) * (-0.3 * step_sd * down.abs()).exp(),
                close,
                volume: (1.0e6 * (0.3 * vol).exp()).round(),
            });
            opens[i] = open * log_ret.exp();
        }
    }
    let tickers = (0..n).map(|i| format!("SYN{i:02}")).collect();
    let frame = MarketFrame::new(tickers, days, bars)?;
    let panel = SignalPanel::new(fr, ss, &frame)?;
    Ok((frame, panel))
}

#[cfg(test)]
mod tests {
    use super::super::forward_returns;
    use super::*;

    fn corr(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    fn paired(spec: &SyntheticMarketSpec) -> (Vec<f64>, Vec<f64>) {
        let (f, s) = generate_synthetic(spec).unwrap();
        let fwd = forward_returns(&f);
        let mut a = Vec::new();
        let mut b = Vec::new();
        for i in 0..f.n_stocks() {
            for t in 0..f.n_days() - 1 {
                a.push(s.fr[i][t]);
                b.push(fwd[i][t]);
            }
        }
        (a, b)
    }

    #[test]
    fn perfect_signal_matches_direction() {
        let (fr, fwd) = paired(&SyntheticMarketSpec::new(4, 300, 5, 1.0));
        for (s, r) in fr.iter().zip(&fwd) {
            if *r != 0.0 {
                assert_eq!(s.signum(), r.signum());
            }
        }
    }

    #[test]
    fn zero_quality_signal_is_uncorrelated() {
        let (fr, fwd) = paired(&SyntheticMarketSpec::new(5, 500, 9, 0.0));
        assert!(fr.len() >= 2000);
        assert!(corr(&fr, &fwd).abs() < 0.1);
    }

    #[test]
    fn planted_correlation_close_to_rho() {
        let (fr, fwd) = paired(&SyntheticMarketSpec::new(5, 500, 3, 0.8));
        let c = corr(&fr, &fwd);
        assert!((c - 0.8).abs() < 0.05, "corr {c}");
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let spec = SyntheticMarketSpec::new(3, 50, 42, 0.5);
        assert_eq!(generate_synthetic(&spec).unwrap(), generate_synthetic(&spec).unwrap());
        let other = SyntheticMarketSpec { seed: 43, ..spec.clone() };
        assert_ne!(generate_synthetic(&spec).unwrap().0, generate_synthetic(&other).unwrap().0);
    }

    #[test]
    fn prices_independent_of_signal_quality() {
        let a = generate_synthetic(&SyntheticMarketSpec::new(2, 40, 1, 0.1)).unwrap().0;
        let b = generate_synthetic(&SyntheticMarketSpec::new(2, 40, 1, 0.9)).unwrap().0;
        assert_eq!(a, b);
    }

    #[test]
    fn sentiment_sign_consistent() {
        let (_, s) = generate_synthetic(&SyntheticMarketSpec::new(3, 200, 8, 0.6)).unwrap();
        for i in 0..3 {
            for t in 0..200 {
                assert!(s.ss[i][t] == 0.0 || s.ss[i][t].signum() == s.fr[i][t].signum());
            }
        }
    }

    #[test]
    fn invalid_specs_name_field() {
        let base = SyntheticMarketSpec::new(2, 10, 0, 0.5);
        let cases = [
            (SyntheticMarketSpec { n_stocks: 0, ..base.clone() }, "n_stocks"),
            (SyntheticMarketSpec { n_days: 1, ..base.clone() }, "n_days"),
            (SyntheticMarketSpec { signal_quality: 1.5, ..base.clone() }, "signal_quality"),
            (SyntheticMarketSpec { volatility: PerStock::All(0.0), ..base.clone() }, "volatility"),
            (SyntheticMarketSpec { drift: PerStock::Each(vec![0.1]), ..base.clone() }, "drift"),
        ];
        for (spec, field) in cases {
            match generate_synthetic(&spec) {
                Err(MarketDataError::InvalidSpec { field: f, .. }) => assert_eq!(f, field),
                other => panic!("{field}: {other:?}"),
            }
        }
    }

    #[test]
    fn calendar_skips_weekends() {
        let d = business_days(NaiveDate::from_ymd_opt(2021, 1, 8).unwrap(), 3);
        assert_eq!(d[1], NaiveDate::from_ymd_opt(2021, 1, 11).unwrap());
    }
}
