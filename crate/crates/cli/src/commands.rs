//! The four subcommands. Each returns the paths it wrote.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use hrt_core::backtest::{run_backtest, BacktestReport, Metrics, Strategy, StrategyKind};
use hrt_core::experiment::{aggregate, Aggregate, SplitData};
use hrt_core::marketdata::{write_csv, write_signals_csv};
use hrt_core::par;
use hrt_core::trainer::{EpisodeLog, FlatCheckpoint, FlatDdpgTrainer, HrtCheckpoint, HrtTrainer, Phase};
use serde::Serialize;

use crate::config::{DataSource, RunConfig};
use crate::CliError;

pub const PRICES_FILE: &str = "prices.csv";
pub const SIGNALS_FILE: &str = "signals.csv";
pub const CONFIG_ECHO: &str = "config.toml";

/// Files inside a training run directory.
#[derive(Debug, Clone)]
pub struct RunLayout {
    pub root: PathBuf,
}

impl RunLayout {
    pub fn for_seed(output: &Path, seed: u64) -> Self {
        Self { root: output.join(format!("seed-{seed}")) }
    }

    pub fn config(&self) -> PathBuf {
        self.root.join(CONFIG_ECHO)
    }

    pub fn checkpoint(&self, name: &str) -> PathBuf {
        self.root.join("checkpoints").join(format!("{name}.ckpt"))
    }

    pub fn phase_log(&self, phase: Phase) -> PathBuf {
        let name = match phase {
            Phase::Hlc => "phase1",
            Phase::Llc => "phase2",
            Phase::Alternating | Phase::Done => "phase3",
        };
        self.root.join("logs").join(format!("{name}.jsonl"))
    }

    pub fn backtest_dir(&self, kind: StrategyKind) -> PathBuf {
        self.root.join("backtest").join(kind.as_str())
    }
}

fn mkdir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(format!("creating {}", dir.display()), e))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::io(format!("writing {}", path.display()), e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    write_text(path, &serde_json::to_string_pretty(value).expect("serializable"))
}

/// Writes the synthetic market to `out/prices.csv` and `out/signals.csv`.
pub fn cmd_synth(cfg: &RunConfig, seed: Option<u64>, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    if !matches!(cfg.data, DataSource::Synthetic(_)) {
        return Err(CliError::Validation("synth needs a [data.synthetic] section".into()));
    }
    let (frame, signals) = cfg.market(seed)?;
    mkdir(out)?;
    let (prices, sig) = (out.join(PRICES_FILE), out.join(SIGNALS_FILE));
    write_csv(&frame, &prices)?;
    write_signals_csv(&frame, &signals, &sig)?;
    Ok(vec![prices, sig])
}

/// Options for [`cmd_train`].
#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Continue from `checkpoints/latest.ckpt` when present.
    pub resume: bool,
    /// Stop after this many episodes in this invocation.
    pub max_episodes: Option<usize>,
    pub quiet: bool,
}

/// What one seed's training produced.
#[derive(Debug, Clone, Serialize)]
pub struct TrainSummary {
    pub seed: u64,
    pub episodes: usize,
    pub llc_episodes: usize,
    pub timesteps: u64,
    pub finished: bool,
    pub run_dir: PathBuf,
}

/// Trains every seed in `seeds` into `out/seed-<N>/`.
pub fn cmd_train(cfg: &RunConfig, seeds: &[u64], out: &Path, opts: &TrainOptions) -> Result<Vec<TrainSummary>, CliError> {
    let data = cfg.split(None)?;
    seeds.iter().map(|&seed| train_seed(cfg, seed, &data, out, opts)).collect()
}

fn train_seed(
    cfg: &RunConfig,
    seed: u64,
    data: &SplitData,
    out: &Path,
    opts: &TrainOptions,
) -> Result<TrainSummary, CliError> {
    let layout = RunLayout::for_seed(out, seed);
    let run_cfg = cfg.for_seed(seed);
    let tcfg = cfg.trainer(seed);
    let latest = layout.checkpoint("latest");

    let mut trainer = if opts.resume && latest.exists() {
        let ckpt = HrtCheckpoint::load(&latest)?;
        if ckpt.config != tcfg {
            return Err(CliError::Validation(format!(
                "{} was written with a different configuration",
                latest.display()
            )));
        }
        let t = HrtTrainer::from_checkpoint(ckpt, data.train_frame.clone(), data.train_signals.clone())?;
        truncate_logs(&layout, t.progress().episodes)?;
        t
    } else {
        if layout.root.exists() {
            for dir in ["logs", "checkpoints", "backtest"] {
                let d = layout.root.join(dir);
                if d.exists() {
                    fs::remove_dir_all(&d).map_err(|e| CliError::io(format!("clearing {}", d.display()), e))?;
                }
            }
        }
        HrtTrainer::new(tcfg.clone(), data.train_frame.clone(), data.train_signals.clone())?
    };
    mkdir(&layout.root.join("logs"))?;
    mkdir(&layout.root.join("checkpoints"))?;
    write_text(&layout.config(), &run_cfg.to_toml())?;

    let every = tcfg.schedule.checkpoint_every;
    let mut ran = 0usize;
    while !trainer.is_done() && opts.max_episodes.is_none_or(|m| ran < m) {
        let before = trainer.phase();
        let log = trainer.run_episode()?;
        ran += 1;
        append_log(&layout.phase_log(log.phase), &log)?;
        if !opts.quiet {
            eprintln!(
                "seed {seed} episode {:>4} {:<11} learner {:<3} alpha {:.4} align {:+.3}/step llc {:+.4} value {:.0}",
                log.episode,
                format!("{:?}", log.phase).to_lowercase(),
                format!("{:?}", log.learner).to_lowercase(),
                log.alpha,
                log.mean_align_per_step,
                log.llc_return,
                log.final_value
            );
        }
        let after = trainer.phase();
        let ckpt = trainer.checkpoint();
        if after != before {
            match before {
                Phase::Hlc => ckpt.save(layout.checkpoint("phase1"))?,
                Phase::Llc => ckpt.save(layout.checkpoint("phase2"))?,
                _ => {}
            }
            if after == Phase::Done {
                ckpt.save(layout.checkpoint("final"))?;
            }
        }
        if after != before || (every > 0 && trainer.progress().episodes % every == 0) {
            ckpt.save(&latest)?;
        }
    }
    if ran > 0 || !latest.exists() {
        trainer.checkpoint().save(&latest)?;
    }

    let finished = trainer.is_done();
    let flat_path = layout.checkpoint("ddpg_only");
    if finished && !flat_path.exists() {
        let n = trainer.progress().llc_episodes;
        let mut flat = FlatDdpgTrainer::new(tcfg.env.clone(), tcfg.ddpg.clone(), data.train_frame.clone(), n, seed, tcfg.exec)?;
        for _ in 0..n {
            flat.run_episode()?;
        }
        flat.checkpoint().save(&flat_path)?;
    }
    let summary = TrainSummary {
        seed,
        episodes: trainer.progress().episodes,
        llc_episodes: trainer.progress().llc_episodes,
        timesteps: trainer.progress().timesteps,
        finished,
        run_dir: layout.root.clone(),
    };
    write_json(&layout.root.join("train_summary.json"), &summary)?;
    Ok(summary)
}

fn append_log(path: &Path, log: &EpisodeLog) -> Result<(), CliError> {
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| CliError::io(format!("opening {}", path.display()), e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer(&mut w, log).expect("log serializes");
    writeln!(w).and_then(|_| w.flush()).map_err(|e| CliError::io(format!("writing {}", path.display()), e))
}

/// Drops log lines for episodes the checkpoint has not seen, so a resumed
/// run appends exactly what an uninterrupted one would have written.
fn truncate_logs(layout: &RunLayout, keep_below: usize) -> Result<(), CliError> {
    for phase in [Phase::Hlc, Phase::Llc, Phase::Alternating] {
        let path = layout.phase_log(phase);
        if !path.exists() {
            continue;
        }
        let file = File::open(&path).map_err(|e| CliError::io(format!("reading {}", path.display()), e))?;
        let mut kept = String::new();
        for line in BufReader::new(file).lines() {
            let line = line.map_err(|e| CliError::io(format!("reading {}", path.display()), e))?;
            let log: EpisodeLog = serde_json::from_str(&line).map_err(hrt_core::Error::from)?;
            if log.episode < keep_below {
                kept.push_str(&line);
                kept.push('\n');
            }
        }
        write_text(&path, &kept)?;
    }
    Ok(())
}

/// Builds `kind` from its checkpoint. Learned strategies require one.
pub fn load_strategy(kind: StrategyKind, checkpoint: Option<&Path>, seed: u64) -> Result<Strategy, CliError> {
    let need = || {
        checkpoint.ok_or_else(|| CliError::Validation(format!("strategy {kind} needs --checkpoint")))
    };
    Ok(match kind {
        StrategyKind::Hrt => {
            let c = HrtCheckpoint::load(need()?)?;
            Strategy::Hrt { hlc: c.hlc, llc: c.llc }
        }
        StrategyKind::PpoOnly => Strategy::PpoOnly { hlc: HrtCheckpoint::load(need()?)?.hlc },
        StrategyKind::DdpgOnly => Strategy::DdpgOnly { agent: FlatCheckpoint::load(need()?)?.agent },
        StrategyKind::Random => Strategy::Random { seed },
        StrategyKind::BuyAndHoldEqualWeight => Strategy::BuyAndHoldEqualWeight,
    })
}

/// Backtests one strategy on the test window and writes its report files.
pub fn cmd_backtest(
    cfg: &RunConfig,
    kind: StrategyKind,
    checkpoint: Option<&Path>,
    seed: u64,
    out: &Path,
) -> Result<BacktestReport, CliError> {
    if let Some(p) = checkpoint.filter(|p| !p.exists()) {
        return Err(CliError::Validation(format!("checkpoint {} does not exist", p.display())));
    }
    let strategy = load_strategy(kind, checkpoint, seed)?;
    let data = cfg.split(None)?;
    let report = run_backtest(&strategy, &data.test_frame, &data.test_signals, &cfg.env)?;
    let echo = serde_json::to_value(cfg.for_seed(seed)).expect("config serializes");
    report.save_all(out, &echo, cfg.env.h_max)?;
    Ok(report)
}

/// Where the checkpoint for `kind` lives in a run directory.
fn run_checkpoint(layout: &RunLayout, kind: StrategyKind) -> Option<PathBuf> {
    match kind {
        StrategyKind::Hrt => Some(layout.checkpoint("final")),
        StrategyKind::PpoOnly => Some(layout.checkpoint("phase1")),
        StrategyKind::DdpgOnly => Some(layout.checkpoint("ddpg_only")),
        StrategyKind::Random | StrategyKind::BuyAndHoldEqualWeight => None,
    }
}

/// Backtests every strategy of one finished run into `run_dir/backtest/`.
pub fn backtest_run(run_dir: &Path) -> Result<Vec<(StrategyKind, Metrics)>, CliError> {
    let cfg = RunConfig::load(&run_dir.join(CONFIG_ECHO))?;
    let seed = cfg.seeds[0];
    let layout = RunLayout { root: run_dir.to_path_buf() };
    StrategyKind::ALL
        .iter()
        .map(|&kind| {
            let ckpt = run_checkpoint(&layout, kind);
            let r = cmd_backtest(&cfg, kind, ckpt.as_deref(), seed, &layout.backtest_dir(kind))?;
            Ok((kind, r.metrics))
        })
        .collect()
}

/// Backtests every run (in parallel across runs) and writes
/// `summary.csv` and `summary.json` into `out`.
pub fn cmd_aggregate(run_dirs: &[PathBuf], out: &Path) -> Result<Aggregate, CliError> {
    if run_dirs.is_empty() {
        return Err(CliError::Validation("aggregate needs at least one run directory".into()));
    }
    if let Some(d) = run_dirs.iter().find(|d| !d.join(CONFIG_ECHO).is_file()) {
        return Err(CliError::Validation(format!("{} is not a run directory (no {CONFIG_ECHO})", d.display())));
    }
    let per_run = par::map(par::Exec::Parallel, run_dirs, |d| backtest_run(d));
    let mut rows = Vec::new();
    for r in per_run {
        rows.extend(r?);
    }
    let table = aggregate(&rows);
    mkdir(out)?;
    write_summary_csv(&table, &out.join("summary.csv"))?;
    write_json(&out.join("summary.json"), &table)?;
    Ok(table)
}

/// Metric rows × strategy columns, each cell `mean ± std`.
pub fn write_summary_csv(table: &Aggregate, path: &Path) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(hrt_core::Error::from)?;
    let mut header = vec!["metric".to_string()];
    header.extend(StrategyKind::ALL.iter().map(|k| k.as_str().to_string()));
    w.write_record(&header).map_err(hrt_core::Error::from)?;
    for name in ["cumulative_return", "annualized_return", "annualized_volatility", "sharpe_ratio", "max_drawdown"] {
        let mut row = vec![name.to_string()];
        for k in StrategyKind::ALL {
            row.push(match table.get(name).and_then(|m| m.get(&k)) {
                Some(s) => format!("{:.4} ± {:.4}", s.mean, s.std),
                None => String::new(),
            });
        }
        w.write_record(&row).map_err(hrt_core::Error::from)?;
    }
    w.flush().map_err(|e| CliError::io(format!("writing {}", path.display()), e))
}
