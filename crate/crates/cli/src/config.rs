//! Declarative run configuration read from TOML.
//!
//! ```toml
//! output = "runs/demo"
//! seeds = [1, 2, 3]
//! test_fraction = 0.2
//!
//! [data.synthetic]
//! n_stocks = 5
//! n_days = 1000
//! seed = 1
//! signal_quality = 0.8
//!
//! [schedule]
//! e_hlc = 60
//! ```
//!
//! `[data.csv]` takes `prices` (long-format file or per-ticker directory),
//! `tickers`, and either `signals` (a `date,ticker,fr,ss` file) or
//! `baseline_lookback` for signals derived from prices. `[env]`, `[ppo]`,
//! `[ddpg]` and `[schedule]` are optional and default field by field.

use std::path::{Path, PathBuf};

use hrt_core::ddpg::DdpgConfig;
use hrt_core::env::EnvConfig;
use hrt_core::experiment::SplitData;
use hrt_core::marketdata::{
    baseline_signals, generate_synthetic, load_csv, load_signals_csv, MarketFrame, SignalPanel, SyntheticMarketSpec,
};
use hrt_core::par::Exec;
use hrt_core::ppo::PpoConfig;
use hrt_core::trainer::{TrainSchedule, TrainerConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Synthetic(SyntheticMarketSpec),
    Csv(CsvSource),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSource {
    pub prices: PathBuf,
    pub tickers: Vec<String>,
    #[serde(default)]
    pub signals: Option<PathBuf>,
    #[serde(default = "default_lookback")]
    pub baseline_lookback: usize,
}

fn default_lookback() -> usize {
    20
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSource,
    pub output: PathBuf,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Share of the most recent days held out for backtesting.
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default)]
    pub exec: Exec,
    #[serde(default)]
    pub env: EnvConfig,
    #[serde(default)]
    pub ppo: PpoConfig,
    #[serde(default)]
    pub ddpg: DdpgConfig,
    #[serde(default)]
    pub schedule: TrainSchedule,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_test_fraction() -> f64 {
    0.2
}

impl RunConfig {
    /// Parses, resolves relative data paths against the file's directory and validates.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        let parent = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        // Absolute, so the echoed config in a run directory works from anywhere.
        let base = std::path::absolute(parent).map_err(|e| CliError::io(format!("resolving {}", parent.display()), e))?;
        if let DataSource::Csv(csv) = &mut cfg.data {
            csv.prices = base.join(&csv.prices);
            if let Some(s) = &mut csv.signals {
                *s = base.join(&*s);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Validation(format!("config: {}", e.message().trim())))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Validation(m));
        match &self.data {
            DataSource::Synthetic(spec) => {
                spec.validate().map_err(|e| CliError::Validation(e.to_string()))?;
            }
            DataSource::Csv(csv) => {
                if csv.tickers.is_empty() {
                    return bad("data.csv.tickers must list at least one ticker".into());
                }
                if !csv.prices.exists() {
                    return bad(format!("data.csv.prices: {} does not exist", csv.prices.display()));
                }
                if let Some(s) = csv.signals.as_ref().filter(|s| !s.exists()) {
                    return bad(format!("data.csv.signals: {} does not exist", s.display()));
                }
                if csv.baseline_lookback == 0 {
                    return bad("data.csv.baseline_lookback must be >= 1".into());
                }
            }
        }
        if self.seeds.is_empty() {
            return bad("seeds must list at least one seed".into());
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return bad(format!("test_fraction must lie in (0, 1), got {}", self.test_fraction));
        }
        self.trainer(0).validate().map_err(|e| CliError::Validation(e.to_string()))
    }

    /// Trainer configuration for one seed.
    pub fn trainer(&self, seed: u64) -> TrainerConfig {
        TrainerConfig {
            env: self.env.clone(),
            ppo: self.ppo.clone(),
            ddpg: self.ddpg.clone(),
            schedule: TrainSchedule { seed, ..self.schedule.clone() },
            exec: self.exec,
        }
    }

    /// The fully resolved configuration for a single seed.
    pub fn for_seed(&self, seed: u64) -> Self {
        Self { seeds: vec![seed], ..self.clone() }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Loads or generates the full market. A synthetic market takes its seed
    /// from `seed` when given.
    pub fn market(&self, seed: Option<u64>) -> Result<(MarketFrame, SignalPanel), CliError> {
        match &self.data {
            DataSource::Synthetic(spec) => {
                let spec = SyntheticMarketSpec { seed: seed.unwrap_or(spec.seed), ..spec.clone() };
                Ok(generate_synthetic(&spec)?)
            }
            DataSource::Csv(csv) => {
                let frame = load_csv(&csv.prices, &csv.tickers)?;
                let signals = match &csv.signals {
                    Some(path) => load_signals_csv(path, &frame)?,
                    None => baseline_signals(&frame, csv.baseline_lookback),
                };
                Ok((frame, signals))
            }
        }
    }

    pub fn split(&self, seed: Option<u64>) -> Result<SplitData, CliError> {
        let (frame, signals) = self.market(seed)?;
        Ok(SplitData::split(&frame, &signals, self.test_fraction)?)
    }
}
