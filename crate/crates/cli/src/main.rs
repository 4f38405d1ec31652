use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hrt_cli::commands::{cmd_aggregate, cmd_backtest, cmd_synth, cmd_train, TrainOptions};
use hrt_cli::{CliError, RunConfig, EXIT_VALIDATION};
use hrt_core::backtest::StrategyKind;

/// Hierarchical reinforcement-learning trader: synthesize data, train,
/// backtest and aggregate multi-seed runs.
#[derive(Debug, Parser)]
#[command(name = "hrt", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic market (prices.csv, signals.csv).
    Synth {
        #[arg(long)]
        config: PathBuf,
        /// Market seed, replacing data.synthetic.seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (default: the config's `output`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train one run directory per seed under OUT/seed-<N>/.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Train only this seed instead of the config's `seeds`.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Continue from checkpoints/latest.ckpt when present.
        #[arg(long)]
        resume: bool,
        /// Stop after this many episodes; continue later with --resume.
        #[arg(long)]
        max_episodes: Option<usize>,
        #[arg(long, short)]
        quiet: bool,
    },
    /// Backtest one strategy on the held-out window.
    Backtest {
        #[arg(long)]
        config: PathBuf,
        /// hrt, ppo_only, ddpg_only, random or buy_and_hold_equal_weight.
        #[arg(long)]
        strategy: StrategyKind,
        /// Run checkpoint (hrt, ppo_only) or flat checkpoint (ddpg_only).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Seed for the random strategy (default: first config seed).
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Backtest every strategy of each run and tabulate mean ± std.
    Aggregate {
        #[arg(required = true)]
        run_dirs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn out_or(out: Option<PathBuf>, cfg: &RunConfig) -> PathBuf {
    out.unwrap_or_else(|| cfg.output.clone())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth { config, seed, out } => {
            let cfg = RunConfig::load(&config)?;
            for p in cmd_synth(&cfg, seed, &out_or(out, &cfg))? {
                println!("{}", p.display());
            }
        }
        Command::Train { config, seed, out, resume, max_episodes, quiet } => {
            let cfg = RunConfig::load(&config)?;
            let seeds = seed.map_or_else(|| cfg.seeds.clone(), |s| vec![s]);
            let opts = TrainOptions { resume, max_episodes, quiet };
            for s in cmd_train(&cfg, &seeds, &out_or(out, &cfg), &opts)? {
                println!(
                    "seed {} {}: {} episodes ({} LLC), {} steps -> {}",
                    s.seed,
                    if s.finished { "finished" } else { "paused" },
                    s.episodes,
                    s.llc_episodes,
                    s.timesteps,
                    s.run_dir.display()
                );
            }
        }
        Command::Backtest { config, strategy, checkpoint, seed, out } => {
            let cfg = RunConfig::load(&config)?;
            let seed = seed.unwrap_or(cfg.seeds[0]);
            let out = out.unwrap_or_else(|| cfg.output.join("backtest").join(strategy.as_str()));
            let report = cmd_backtest(&cfg, strategy, checkpoint.as_deref(), seed, &out)?;
            for (name, value) in report.metrics.named() {
                println!("{name:<22} {value:.6}");
            }
            println!("reports -> {}", out.display());
        }
        Command::Aggregate { run_dirs, out } => {
            let table = cmd_aggregate(&run_dirs, &out)?;
            if let Some(sharpe) = table.get("sharpe_ratio") {
                for (k, s) in sharpe {
                    println!("sharpe {:<26} {:+.3} ± {:.3} (n={})", k.as_str(), s.mean, s.std, s.n);
                }
            }
            println!("summary -> {}", Path::new(&out).join("summary.csv").display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_VALIDATION as u8 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
