use proptest::prelude::*;
use rand::Rng;

use super::*;
use super::Strategy;
use crate::env::TradeRecord;
use crate::marketdata::testutil::{day, frame_from_opens};

fn flat_signals(n: usize, t: usize) -> SignalPanel {
    SignalPanel { fr: vec![vec![0.0; t]; n], ss: vec![vec![0.0; t]; n] }
}

#[test]
fn cumulative_and_annualized() {
    assert!((cumulative_return(&[100.0, 110.0]) - 0.10).abs() < 1e-15);
    assert_eq!(cumulative_return(&[5.0; 7]), 0.0);
    assert!((annualized_return(0.21, 2.0) - 0.1).abs() < 1e-12);
    assert_eq!(annualized_return(0.0, 3.7), 0.0);
    assert!((annualized_return(0.2913, 1.0) - 0.2913).abs() < 1e-15);
    // A 252-day return series spans exactly one year.
    assert_eq!(years(252), 1.0);
}

#[test]
fn volatility_cases() {
    assert!(annualized_volatility(&[0.003; 30]) < 1e-15);
    assert_eq!(annualized_volatility(&[0.25; 30]), 0.0);
    let alt: Vec<f64> = (0..40).map(|k| if k % 2 == 0 { 0.01 } else { -0.01 }).collect();
    // Mean 0, sum of squares n·1e-4, sample variance n·1e-4/(n−1).
    let expected = (40.0 * 1e-4 / 39.0f64).sqrt() * 252f64.sqrt();
    assert!((annualized_volatility(&alt) - expected).abs() < 1e-15);
}

#[test]
fn sharpe_cases() {
    assert_eq!(sharpe_ratio(&[0.0; 10]), Err(BacktestError::ZeroVolatility));
    let up = [0.01, 0.02, 0.005, 0.015];
    assert!(sharpe_ratio(&up).unwrap() > 0.0);
    // Two-point series: returns a and b alternating over 2m days.
    let (a, b, m) = (0.012, -0.004, 126);
    let series: Vec<f64> = (0..2 * m).map(|k| if k % 2 == 0 { a } else { b }).collect();
    let growth = ((1.0 + a) * (1.0 + b)).powi(m);
    let ann = growth.powf(252.0 / (2 * m) as f64) - 1.0;
    let mean = (a + b) / 2.0;
    let var = (m as f64 * ((a - mean).powi(2) + (b - mean).powi(2))) / (2 * m - 1) as f64;
    let expected = ann / (var.sqrt() * 252f64.sqrt());
    assert!((sharpe_ratio(&series).unwrap() - expected).abs() < 1e-10);
}

#[test]
fn drawdown_cases() {
    assert_eq!(max_drawdown(&[1.0, 2.0, 3.0, 4.0]), 0.0);
    assert!((max_drawdown(&[100.0, 80.0, 120.0, 60.0]) + 0.5).abs() < 1e-15);
    let v = [100.0, 80.0, 120.0, 60.0, 90.0];
    let scaled: Vec<f64> = v.iter().map(|x| x * 3.5).collect();
    assert!((max_drawdown(&v) - max_drawdown(&scaled)).abs() < 1e-15);
}

fn brute_drawdown(v: &[f64]) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..v.len() {
        for j in i..v.len() {
            worst = worst.min(v[j] / v[i] - 1.0);
        }
    }
    worst
}

proptest! {
    #[test]
    fn metric_oracles(rets in prop::collection::vec(-0.05f64..0.05, 2..200)) {
        let mut values = vec![1000.0];
        for r in &rets {
            values.push(values.last().unwrap() * (1.0 + r));
        }
        let prod = rets.iter().fold(1.0, |acc, r| acc * (1.0 + r)) - 1.0;
        prop_assert!((cumulative_return(&values) - prod).abs() < 1e-12);
        let dd = max_drawdown(&values);
        prop_assert!((dd - brute_drawdown(&values)).abs() < 1e-12);
        prop_assert!(dd <= 0.0 && dd > -1.0);
        let n = rets.len() as f64;
        let mean = rets.iter().sum::<f64>() / n;
        let var = rets.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / (n - 1.0);
        prop_assert!((annualized_volatility(&daily_returns(&values)) - (var * 252.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn heatmap_sign_symmetry(s in -500i64..500) {
        prop_assert_eq!(heatmap_value(s, 100), -heatmap_value(-s, 100));
    }
}

#[test]
fn heatmap_values() {
    assert_eq!(heatmap_value(0, 100), 0.0);
    assert!((heatmap_value(100, 100) - 101f64.ln()).abs() < 1e-15);
    assert!((heatmap_value(-5, 100) + 6f64.ln()).abs() < 1e-15);
    assert_eq!(heatmap_value(250, 100), heatmap_value(100, 100));
}

fn log_with(records: Vec<TradeRecord>, tickers: &[&str]) -> TradeLog {
    let mut log = TradeLog::new(tickers.iter().map(|s| s.to_string()).collect(), vec![day(0), day(1)]);
    log.extend(records);
    log
}

#[test]
fn sector_proportions() {
    let rec = |stock, shares, price| TradeRecord { day: 0, stock, shares, price, cost: 0.0 };
    let one: BTreeMap<String, String> = [("A".into(), "Tech".into()), ("B".into(), "Tech".into())].into();
    let log = log_with(vec![rec(0, 3, 10.0), rec(1, -2, 7.0)], &["A", "B"]);
    assert_eq!(sector_volume_proportions(&log, &one).unwrap(), [("Tech".to_string(), 1.0)].into());

    let two: BTreeMap<String, String> = [("A".into(), "Tech".into()), ("B".into(), "Energy".into())].into();
    let log = log_with(vec![rec(0, 3, 10.0), rec(1, -6, 5.0)], &["A", "B"]);
    let p = sector_volume_proportions(&log, &two).unwrap();
    assert_eq!(p["Tech"], 0.5);
    assert_eq!(p["Energy"], 0.5);

    let partial: BTreeMap<String, String> = [("A".into(), "Tech".into())].into();
    assert_eq!(sector_volume_proportions(&log, &partial), Err(BacktestError::UnmappedTicker("B".into())));
}

#[test]
fn sector_proportions_match_group_by() {
    let mut rng = crate::rng::seeded(3, 0);
    let tickers = ["A", "B", "C", "D", "E"];
    let sectors: BTreeMap<String, String> =
        tickers.iter().enumerate().map(|(i, t)| (t.to_string(), format!("S{}", i % 3))).collect();
    let records: Vec<TradeRecord> = (0..200)
        .map(|_| TradeRecord {
            day: rng.random_range(0..2),
            stock: rng.random_range(0..5),
            shares: rng.random_range(-100..=100),
            price: rng.random_range(1.0..300.0),
            cost: 0.0,
        })
        .collect();
    let log = log_with(records.clone(), &tickers);
    let p = sector_volume_proportions(&log, &sectors).unwrap();
    let mut oracle: BTreeMap<String, f64> = BTreeMap::new();
    for r in &records {
        *oracle.entry(format!("S{}", r.stock % 3)).or_default() += (r.shares as f64 * r.price).abs();
    }
    let total: f64 = oracle.values().sum();
    assert!((p.values().sum::<f64>() - 1.0).abs() < 1e-12);
    for (k, v) in oracle {
        assert!((p[&k] - v / total).abs() < 1e-12);
    }
}

#[test]
fn buy_and_hold_flat_market() {
    let frame = frame_from_opens(&[vec![50.0; 6], vec![20.0; 6]]);
    let cfg = EnvConfig { cost_rate: 0.0, ..EnvConfig::default() };
    let r = run_backtest(&Strategy::BuyAndHoldEqualWeight, &frame, &flat_signals(2, 6), &cfg).unwrap();
    assert!(r.daily_values.iter().all(|&v| v == 1_000_000.0));
    assert_eq!(r.metrics.cumulative_return, 0.0);
    assert_eq!(r.metrics.annualized_return, 0.0);
    assert_eq!(r.metrics.annualized_volatility, 0.0);
    assert_eq!(r.metrics.max_drawdown, 0.0);
    assert_eq!(r.metrics.sharpe_ratio, None);
}

#[test]
fn buy_and_hold_matches_fixed_share_valuation() {
    let spec = crate::marketdata::SyntheticMarketSpec::new(4, 80, 5, 0.5);
    let (frame, signals) = crate::marketdata::generate_synthetic(&spec).unwrap();
    let cfg = EnvConfig { cost_rate: 0.0, ..EnvConfig::default() };
    let r = run_backtest(&Strategy::BuyAndHoldEqualWeight, &frame, &signals, &cfg).unwrap();
    let shares: Vec<f64> = frame.opens(0).iter().map(|p| (250_000.0 / p).floor()).collect();
    let cash = 1_000_000.0 - shares.iter().zip(frame.opens(0)).map(|(s, p)| s * p).sum::<f64>();
    for t in 0..frame.n_days() {
        let v: f64 = shares.iter().zip(frame.opens(t)).map(|(s, p)| s * p).sum::<f64>() + cash;
        assert!((r.daily_values[t] - v).abs() < 1e-9 * v);
    }
}

#[test]
fn random_strategy_is_deterministic_and_reconciles() {
    let spec = crate::marketdata::SyntheticMarketSpec::new(3, 60, 6, 0.5);
    let (frame, signals) = crate::marketdata::generate_synthetic(&spec).unwrap();
    let cfg = EnvConfig::default();
    let a = run_backtest(&Strategy::Random { seed: 9 }, &frame, &signals, &cfg).unwrap();
    let b = run_backtest(&Strategy::Random { seed: 9 }, &frame, &signals, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.daily_values[0], cfg.initial_capital);
    assert!(a.daily_values.iter().all(|&v| v > 0.0));
    // Replay the trade log: value moves only by mark-to-market and costs.
    let mut holdings = vec![0i64; 3];
    for t in 0..frame.n_days() - 1 {
        let fills: Vec<_> = a.trade_log.records.iter().filter(|r| r.day == t).collect();
        let pre = a.daily_values[t];
        let cost: f64 = fills.iter().map(|f| f.cost).sum();
        for f in &fills {
            holdings[f.stock] += f.shares;
        }
        let price_move: f64 = (0..3).map(|i| holdings[i] as f64 * (frame.open(i, t + 1) - frame.open(i, t))).sum();
        assert!((a.daily_values[t + 1] - (pre - cost + price_move)).abs() < 1e-6, "day {t}");
    }
    let m = Metrics::from_values(&a.daily_values).unwrap();
    assert_eq!(m, a.metrics);
}

#[test]
fn dimension_checks() {
    let frame = frame_from_opens(&[vec![10.0, 11.0, 12.0]]);
    let hlc = HlcAgent::new(2, Default::default(), 0).unwrap();
    let err = run_backtest(&Strategy::PpoOnly { hlc }, &frame, &flat_signals(1, 3), &EnvConfig::default()).unwrap_err();
    assert!(matches!(err, Error::Backtest(BacktestError::DimensionMismatch { .. })));
    assert_eq!("ppo_only".parse::<StrategyKind>().unwrap(), StrategyKind::PpoOnly);
    assert!("momentum".parse::<StrategyKind>().is_err());
}

#[test]
fn exports_have_expected_shape() {
    let spec = crate::marketdata::SyntheticMarketSpec::new(2, 10, 7, 0.5);
    let (frame, signals) = crate::marketdata::generate_synthetic(&spec).unwrap();
    let r = run_backtest(&Strategy::Random { seed: 1 }, &frame, &signals, &EnvConfig::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    r.save_all(dir.path(), &serde_json::json!({"seed": 1}), 100).unwrap();
    let heat = std::fs::read_to_string(dir.path().join("heatmap.csv")).unwrap();
    assert_eq!(heat.lines().next().unwrap(), "ticker,day,log_signed_volume");
    assert_eq!(heat.lines().count(), 1 + 2 * 10);
    let daily = std::fs::read_to_string(dir.path().join("daily.csv")).unwrap();
    assert_eq!(daily.lines().count(), 11);
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    let stored: Metrics = serde_json::from_value(json["metrics"].clone()).unwrap();
    assert_eq!(stored, Metrics::from_values(&r.daily_values).unwrap());
}
