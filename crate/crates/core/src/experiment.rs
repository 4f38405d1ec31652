//! Multi-seed train/backtest sweeps and their aggregation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::backtest::{run_backtest, BacktestReport, Metrics, Strategy, StrategyKind};
use crate::ddpg::DdpgAgent;
use crate::marketdata::{generate_synthetic, MarketFrame, MarketDataError, SignalPanel, SyntheticMarketSpec};
use crate::par::{self, Exec};
use crate::ppo::HlcAgent;
use crate::trainer::{EpisodeLog, FlatDdpgTrainer, HrtTrainer, Phase, TrainerConfig};
use crate::Result;

/// Chronological train/test split of one market.
#[derive(Debug, Clone)]
pub struct SplitData {
    pub train_frame: MarketFrame,
    pub train_signals: SignalPanel,
    pub test_frame: MarketFrame,
    pub test_signals: SignalPanel,
}

impl SplitData {
    /// The last `round(T·test_fraction)` days become the test window.
    pub fn split(frame: &MarketFrame, signals: &SignalPanel, test_fraction: f64) -> Result<Self> {
        let t = frame.n_days();
        let n_test = (t as f64 * test_fraction).round() as usize;
        if !(0.0..1.0).contains(&test_fraction) || n_test < 2 || t - n_test < 2 {
            return Err(MarketDataError::InvalidSpec {
                field: "test_fraction",
                reason: format!("{test_fraction} leaves fewer than 2 days on one side of {t}"),
            }
            .into());
        }
        let cut = t - n_test;
        Ok(Self {
            train_frame: frame.slice_days(0..cut)?,
            train_signals: signals.slice_days(0..cut),
            test_frame: frame.slice_days(cut..t)?,
            test_signals: signals.slice_days(cut..t),
        })
    }

    /// A fresh synthetic market per seed, split in time.
    pub fn synthetic(spec: &SyntheticMarketSpec, test_fraction: f64) -> Result<Self> {
        let (frame, signals) = generate_synthetic(spec)?;
        Self::split(&frame, &signals, test_fraction)
    }
}

/// Agents produced by one training run.
#[derive(Debug, Clone)]
pub struct TrainedAgents {
    /// HLC as it stood at the end of Phase 1.
    pub phase1_hlc: HlcAgent,
    pub hlc: HlcAgent,
    pub llc: DdpgAgent,
    /// Flat DDPG baseline trained for as many episodes as the LLC.
    pub flat: DdpgAgent,
    pub episodes: usize,
    pub llc_episodes: usize,
}

/// Runs the full schedule on `train`, then the flat baseline.
pub fn train_agents<F>(config: &TrainerConfig, data: &SplitData, mut on_episode: F) -> Result<TrainedAgents>
where
    F: FnMut(&HrtTrainer, &EpisodeLog) -> Result<()>,
{
    let mut trainer = HrtTrainer::new(config.clone(), data.train_frame.clone(), data.train_signals.clone())?;
    let mut phase1 = None;
    trainer.run(|t, log| {
        if phase1.is_none() && t.phase() != Phase::Hlc {
            phase1 = Some(t.hlc().clone());
        }
        on_episode(t, log)
    })?;
    let llc_episodes = trainer.progress().llc_episodes;
    let mut flat = FlatDdpgTrainer::new(
        config.env.clone(),
        config.ddpg.clone(),
        data.train_frame.clone(),
        llc_episodes,
        config.schedule.seed,
        config.exec,
    )?;
    for _ in 0..llc_episodes {
        flat.run_episode()?;
    }
    Ok(TrainedAgents {
        phase1_hlc: phase1.unwrap_or_else(|| trainer.hlc().clone()),
        hlc: trainer.hlc().clone(),
        llc: trainer.llc().clone(),
        flat: flat.agent().clone(),
        episodes: trainer.progress().episodes,
        llc_episodes,
    })
}

impl TrainedAgents {
    pub fn strategy(&self, kind: StrategyKind, seed: u64) -> Strategy {
        match kind {
            StrategyKind::Hrt => Strategy::Hrt { hlc: self.hlc.clone(), llc: self.llc.clone() },
            StrategyKind::PpoOnly => Strategy::PpoOnly { hlc: self.phase1_hlc.clone() },
            StrategyKind::DdpgOnly => Strategy::DdpgOnly { agent: self.flat.clone() },
            StrategyKind::Random => Strategy::Random { seed },
            StrategyKind::BuyAndHoldEqualWeight => Strategy::BuyAndHoldEqualWeight,
        }
    }
}

/// Test-window results for one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    /// Directional accuracy on the test window of the untrained HLC.
    pub untrained_accuracy: f64,
    /// Same for the HLC at the end of Phase 1.
    pub phase1_accuracy: f64,
    pub episodes: usize,
    pub llc_episodes: usize,
    pub reports: Vec<BacktestReport>,
}

impl SeedOutcome {
    pub fn metrics(&self, kind: StrategyKind) -> Option<&Metrics> {
        self.reports.iter().find(|r| r.strategy == kind).map(|r| &r.metrics)
    }
}

/// Trains on the train window with `config` (seed overridden) and backtests
/// every strategy on the test window.
pub fn run_seed(config: &TrainerConfig, seed: u64, data: &SplitData) -> Result<SeedOutcome> {
    let mut config = config.clone();
    config.schedule.seed = seed;
    let mut untrained = HlcAgent::new(data.train_frame.n_stocks(), config.ppo.clone(), seed.wrapping_mul(2).wrapping_add(1))?;
    untrained.fit_obs_scale(&data.train_signals);
    let agents = train_agents(&config, data, |_, _| Ok(()))?;
    let reports = StrategyKind::ALL
        .iter()
        .map(|&k| run_backtest(&agents.strategy(k, seed), &data.test_frame, &data.test_signals, &config.env))
        .collect::<Result<Vec<_>>>()?;
    Ok(SeedOutcome {
        seed,
        untrained_accuracy: untrained.accuracy(&data.test_frame, &data.test_signals)?,
        phase1_accuracy: agents.phase1_hlc.accuracy(&data.test_frame, &data.test_signals)?,
        episodes: agents.episodes,
        llc_episodes: agents.llc_episodes,
        reports,
    })
}

/// [`run_seed`] for every seed, fanned out across seeds under `exec`.
/// `data` builds each seed's split.
pub fn run_sweep<D>(config: &TrainerConfig, seeds: &[u64], data: D, exec: Exec) -> Result<Vec<SeedOutcome>>
where
    D: Fn(u64) -> Result<SplitData> + Sync + Send,
{
    par::map(exec, seeds, |&seed| run_seed(config, seed, &data(seed)?)).into_iter().collect()
}

/// Mean and sample standard deviation of one metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    /// Zero for a single observation.
    pub std: f64,
    pub n: usize,
}

impl Summary {
    /// `None` for an empty sample.
    pub fn of(xs: &[f64]) -> Option<Self> {
        let n = xs.len();
        if n == 0 {
            return None;
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let std = if n < 2 {
            0.0
        } else {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        Some(Self { mean, std, n })
    }
}

/// Metric name to per-strategy summary, over every outcome that defines it.
/// An undefined Sharpe ratio (zero volatility) is left out of its sample.
pub type Aggregate = BTreeMap<String, BTreeMap<StrategyKind, Summary>>;

pub fn aggregate(metrics: &[(StrategyKind, Metrics)]) -> Aggregate {
    let mut samples: BTreeMap<String, BTreeMap<StrategyKind, Vec<f64>>> = BTreeMap::new();
    for (kind, m) in metrics {
        for (name, value) in m.named() {
            if name == "sharpe_ratio" && m.sharpe_ratio.is_none() {
                continue;
            }
            samples.entry(name.to_string()).or_default().entry(*kind).or_default().push(value);
        }
    }
    samples
        .into_iter()
        .map(|(name, by_kind)| {
            let row = by_kind.into_iter().filter_map(|(k, xs)| Summary::of(&xs).map(|s| (k, s))).collect();
            (name, row)
        })
        .collect()
}

/// Flattens sweep outcomes for [`aggregate`].
pub fn outcome_metrics(outcomes: &[SeedOutcome]) -> Vec<(StrategyKind, Metrics)> {
    outcomes.iter().flat_map(|o| o.reports.iter().map(|r| (r.strategy, r.metrics.clone()))).collect()
}

/// Seeds on which `a` has a strictly higher Sharpe ratio than `b`; an
/// undefined ratio counts as losing.
pub fn sharpe_wins(outcomes: &[SeedOutcome], a: StrategyKind, b: StrategyKind) -> usize {
    let sharpe = |o: &SeedOutcome, k| o.metrics(k).and_then(|m: &Metrics| m.sharpe_ratio);
    outcomes
        .iter()
        .filter(|o| match (sharpe(o, a), sharpe(o, b)) {
            (Some(x), Some(y)) => x > y,
            (Some(_), None) => true,
            _ => false,
        })
        .count()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_uses_sample_std() {
        let s = Summary::of(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(s.mean, 2.5);
        assert!((s.std - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(Summary::of(&[7.0]).unwrap().std, 0.0);
        assert_eq!(Summary::of(&[]), None);
    }

    #[test]
    fn aggregate_skips_undefined_sharpe() {
        let m = |sharpe| Metrics {
            cumulative_return: 0.1,
            annualized_return: 0.05,
            annualized_volatility: 0.2,
            sharpe_ratio: sharpe,
            max_drawdown: -0.1,
        };
        let rows = vec![
            (StrategyKind::Hrt, m(Some(1.0))),
            (StrategyKind::Hrt, m(Some(2.0))),
            (StrategyKind::Random, m(None)),
        ];
        let agg = aggregate(&rows);
        assert_eq!(agg["sharpe_ratio"][&StrategyKind::Hrt].mean, 1.5);
        assert!(!agg["sharpe_ratio"].contains_key(&StrategyKind::Random));
        assert_eq!(agg["cumulative_return"][&StrategyKind::Random].n, 1);
    }

    #[test]
    fn split_is_chronological() {
        let spec = SyntheticMarketSpec::new(2, 20, 1, 0.5);
        let (frame, signals) = generate_synthetic(&spec).unwrap();
        let d = SplitData::split(&frame, &signals, 0.25).unwrap();
        assert_eq!(d.train_frame.n_days(), 15);
        assert_eq!(d.test_frame.n_days(), 5);
        assert_eq!(d.test_frame.days()[0], frame.days()[15]);
        assert_eq!(d.test_signals.fr[1][0], signals.fr[1][15]);
        assert!(SplitData::split(&frame, &signals, 0.99).is_err());
        assert!(SplitData::split(&frame, &signals, 1.0).is_err());
    }

    #[test]
    fn tiny_sweep_is_reproducible() {
        let mut cfg = TrainerConfig::default();
        cfg.schedule.e_hlc = 2;
        cfg.schedule.e_llc = 1;
        cfg.schedule.max_phase3_episodes = 2;
        cfg.ddpg.batch_size = 8;
        let data = |seed| SplitData::synthetic(&SyntheticMarketSpec::new(2, 24, seed, 0.8), 0.5);
        let a = run_sweep(&cfg, &[1, 2], data, Exec::Parallel).unwrap();
        let b = run_sweep(&cfg, &[1, 2], data, Exec::Sequential).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[0].reports.len(), StrategyKind::ALL.len());
        assert_eq!(a[0].llc_episodes, 2);
        let wins = sharpe_wins(&a, StrategyKind::Hrt, StrategyKind::Random);
        assert!(wins <= 2);
    }
}
