use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use hrt_cli::commands::{write_summary_csv, RunLayout};
use hrt_cli::{DataSource, RunConfig, EXIT_RUNTIME, EXIT_VALIDATION};
use hrt_core::backtest::{Metrics, StrategyKind};
use hrt_core::experiment::aggregate;
use hrt_core::marketdata::{generate_synthetic, load_csv, load_signals_csv};

const SMOKE: &str = r#"
output = "runs"
seeds = [3]
test_fraction = 0.25

[data.synthetic]
n_stocks = 2
n_days = 60
seed = 11
signal_quality = 0.8

[ppo]
minibatch_size = 32
epochs_per_iter = 4

[ddpg]
batch_size = 32

[schedule]
e_hlc = 3
e_llc = 1
max_phase3_episodes = 2
checkpoint_every = 1
"#;

fn hrt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hrt")).args(args).output().expect("binary runs")
}

fn setup(config: &str) -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.toml");
    std::fs::write(&path, config).unwrap();
    (dir, path)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn config_defaults_and_rejections() {
    let cfg = RunConfig::parse(SMOKE).unwrap();
    assert_eq!(cfg.ddpg.buffer_capacity, 200_000);
    assert_eq!(cfg.ddpg.gamma, 0.99);
    assert_eq!(cfg.schedule.lambda, 0.001);
    assert_eq!(cfg.env.cost_rate, 0.001);
    assert!(matches!(cfg.data, DataSource::Synthetic(_)));
    // The echo reproduces the configuration exactly.
    assert_eq!(RunConfig::parse(&cfg.to_toml()).unwrap(), cfg);

    let no_data = SMOKE.replace("[data.synthetic]", "[unused]");
    assert!(RunConfig::parse(&no_data).is_err());
    let two_sources = format!("{SMOKE}\n[data.csv]\nprices = \"p.csv\"\ntickers = [\"A\"]\n");
    assert!(RunConfig::parse(&two_sources).is_err());
    let typo = SMOKE.replace("e_hlc = 3", "e_hcl = 3");
    assert!(RunConfig::parse(&typo).is_err());
    let no_output = SMOKE.replace("output = \"runs\"", "");
    assert!(RunConfig::parse(&no_output).is_err());
}

#[test]
fn validation_failures_exit_before_compute() {
    let (_d, path) = setup(&SMOKE.replace("n_stocks = 2", "n_stocks = 0"));
    let o = hrt(&["train", "--config", s(&path)]);
    assert_eq!(o.status.code(), Some(EXIT_VALIDATION));
    assert!(stderr(&o).contains("n_stocks"), "{}", stderr(&o));

    let (_d, path) = setup(&SMOKE.replace("seeds = [3]", "seeds = [3]\nsurprise = 1"));
    assert_eq!(hrt(&["train", "--config", s(&path)]).status.code(), Some(EXIT_VALIDATION));

    let (_d, path) = setup(&SMOKE.replace("test_fraction = 0.25", "test_fraction = 1.5"));
    let o = hrt(&["synth", "--config", s(&path)]);
    assert_eq!(o.status.code(), Some(EXIT_VALIDATION));
    assert!(stderr(&o).contains("test_fraction"));

    let csv = r#"output = "o"
[data.csv]
prices = "missing.csv"
tickers = ["AAA"]
"#;
    let (_d, path) = setup(csv);
    let o = hrt(&["train", "--config", s(&path)]);
    assert_eq!(o.status.code(), Some(EXIT_VALIDATION));
    assert!(stderr(&o).contains("missing.csv"));

    assert_eq!(hrt(&["train", "--config", "/nonexistent.toml"]).status.code(), Some(EXIT_VALIDATION));
    assert_eq!(hrt(&["frobnicate"]).status.code(), Some(EXIT_VALIDATION));
}

#[test]
fn synth_round_trips_and_is_deterministic() {
    let (dir, path) = setup(SMOKE);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(hrt(&["synth", "--config", s(&path), "--out", s(&a)]).status.success());
    assert!(hrt(&["synth", "--config", s(&path), "--out", s(&b)]).status.success());
    for f in ["prices.csv", "signals.csv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap());
    }
    let cfg = RunConfig::parse(SMOKE).unwrap();
    let DataSource::Synthetic(spec) = &cfg.data else { unreachable!() };
    let (frame, signals) = generate_synthetic(spec).unwrap();
    let loaded = load_csv(a.join("prices.csv"), frame.tickers()).unwrap();
    assert_eq!(loaded, frame);
    assert_eq!(load_signals_csv(a.join("signals.csv"), &loaded).unwrap(), signals);

    let c = dir.path().join("c");
    assert!(hrt(&["synth", "--config", s(&path), "--out", s(&c), "--seed", "99"]).status.success());
    assert_ne!(std::fs::read(a.join("prices.csv")).unwrap(), std::fs::read(c.join("prices.csv")).unwrap());
}

#[test]
fn csv_config_trains_from_files() {
    let (dir, path) = setup(SMOKE);
    let data = dir.path().join("data");
    assert!(hrt(&["synth", "--config", s(&path), "--out", s(&data)]).status.success());
    let csv_cfg = r#"output = "csvrun"
test_fraction = 0.25
[data.csv]
prices = "data/prices.csv"
signals = "data/signals.csv"
tickers = ["SYN00", "SYN01"]
[schedule]
e_hlc = 2
e_llc = 1
max_phase3_episodes = 1
[ddpg]
batch_size = 16
"#;
    let cfg_path = dir.path().join("csv.toml");
    std::fs::write(&cfg_path, csv_cfg).unwrap();
    let cfg = RunConfig::load(&cfg_path).unwrap();
    let synthetic = RunConfig::load(&path).unwrap();
    assert_eq!(cfg.market(None).unwrap(), synthetic.market(None).unwrap());
    let out = dir.path().join("csvrun");
    let o = hrt(&["train", "--config", s(&cfg_path), "--out", s(&out), "-q"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(out.join("seed-0/checkpoints/final.ckpt").is_file());
}

#[test]
fn train_backtest_aggregate_smoke() {
    let (dir, path) = setup(SMOKE);
    let out = dir.path().join("runs");
    let start = Instant::now();
    let o = hrt(&["train", "--config", s(&path), "--out", s(&out), "--quiet"]);
    let elapsed = start.elapsed();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(elapsed < Duration::from_secs(60), "smoke run took {elapsed:?}");

    let layout = RunLayout::for_seed(&out, 3);
    for name in ["phase1", "phase2", "final", "latest", "ddpg_only"] {
        assert!(layout.checkpoint(name).is_file(), "{name}");
    }
    let lines = |p: PathBuf| std::fs::read_to_string(p).unwrap().lines().count();
    assert_eq!(lines(layout.root.join("logs/phase1.jsonl")), 3);
    assert_eq!(lines(layout.root.join("logs/phase2.jsonl")), 1);
    assert_eq!(lines(layout.root.join("logs/phase3.jsonl")), 2);
    let echo = RunConfig::load(&layout.config()).unwrap();
    assert_eq!(echo.seeds, [3]);
    assert_eq!(echo.schedule, RunConfig::load(&path).unwrap().schedule);

    // Learned strategies need weights; baselines do not.
    let o = hrt(&["backtest", "--config", s(&path), "--strategy", "hrt", "--out", s(&dir.path().join("x"))]);
    assert_eq!(o.status.code(), Some(EXIT_VALIDATION));
    assert!(stderr(&o).contains("checkpoint"));
    let random_dir = dir.path().join("random");
    let o = hrt(&["backtest", "--config", s(&path), "--strategy", "random", "--out", s(&random_dir)]);
    assert!(o.status.success(), "{}", stderr(&o));

    let hrt_dir = dir.path().join("hrt");
    let ckpt = layout.checkpoint("final");
    let o = hrt(&["backtest", "--config", s(&path), "--strategy", "hrt", "--checkpoint", s(&ckpt), "--out", s(&hrt_dir)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(hrt_dir.join("report.json")).unwrap()).unwrap();
    let stored: Metrics = serde_json::from_value(report["metrics"].clone()).unwrap();
    let mut rdr = csv::Reader::from_path(hrt_dir.join("daily.csv")).unwrap();
    let values: Vec<f64> = rdr.records().map(|r| r.unwrap()[2].parse().unwrap()).collect();
    assert_eq!(values.len(), 15);
    assert_eq!(stored, Metrics::from_values(&values).unwrap());

    // A flat checkpoint is not a run checkpoint.
    let o = hrt(&["backtest", "--config", s(&path), "--strategy", "hrt", "--checkpoint", s(&layout.checkpoint("ddpg_only"))]);
    assert_eq!(o.status.code(), Some(EXIT_RUNTIME));

    let summary = dir.path().join("summary");
    let o = hrt(&["aggregate", s(&layout.root), "--out", s(&summary)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(summary.join("summary.json")).unwrap()).unwrap();
    assert_eq!(table["cumulative_return"]["hrt"]["std"], 0.0);
    assert_eq!(table["cumulative_return"]["hrt"]["n"], 1);
    assert!(layout.backtest_dir(StrategyKind::DdpgOnly).join("trades.csv").is_file());
}

#[test]
fn interrupted_training_resumes_identically() {
    let (dir, path) = setup(SMOKE);
    let full = dir.path().join("full");
    let part = dir.path().join("part");
    assert!(hrt(&["train", "--config", s(&path), "--out", s(&full), "-q"]).status.success());
    let o = hrt(&["train", "--config", s(&path), "--out", s(&part), "-q", "--max-episodes", "4"]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("paused"));
    let o = hrt(&["train", "--config", s(&path), "--out", s(&part), "-q", "--resume"]);
    assert!(o.status.success(), "{}", stderr(&o));

    let (a, b) = (RunLayout::for_seed(&full, 3), RunLayout::for_seed(&part, 3));
    for name in ["final", "ddpg_only", "phase1", "phase2"] {
        assert_eq!(std::fs::read(a.checkpoint(name)).unwrap(), std::fs::read(b.checkpoint(name)).unwrap(), "{name}");
    }
    for log in ["phase1", "phase2", "phase3"] {
        let f = format!("logs/{log}.jsonl");
        assert_eq!(std::fs::read(a.root.join(&f)).unwrap(), std::fs::read(b.root.join(&f)).unwrap(), "{log}");
    }

    // A resumed run refuses a checkpoint written under other settings.
    let (_d2, other) = setup(&SMOKE.replace("e_hlc = 3", "e_hlc = 4"));
    let o = hrt(&["train", "--config", s(&other), "--out", s(&part), "-q", "--resume"]);
    assert_eq!(o.status.code(), Some(EXIT_VALIDATION));

    // Corrupting the checkpoint is a runtime failure.
    let latest = b.checkpoint("latest");
    let mut bytes = std::fs::read(&latest).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0xFF;
    std::fs::write(&latest, bytes).unwrap();
    let o = hrt(&["train", "--config", s(&path), "--out", s(&part), "-q", "--resume"]);
    assert_eq!(o.status.code(), Some(EXIT_RUNTIME));
    assert!(stderr(&o).contains("checksum"), "{}", stderr(&o));
}

#[test]
fn summary_table_layout() {
    let m = |x: f64| Metrics {
        cumulative_return: x,
        annualized_return: x,
        annualized_volatility: x,
        sharpe_ratio: Some(x),
        max_drawdown: -x,
    };
    let rows: Vec<_> = [1.0, 2.0, 3.0].iter().map(|&x| (StrategyKind::Hrt, m(x))).collect();
    let table = aggregate(&rows);
    let sharpe = table["sharpe_ratio"][&StrategyKind::Hrt];
    assert_eq!((sharpe.mean, sharpe.std, sharpe.n), (2.0, 1.0, 3));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("summary.csv");
    write_summary_csv(&table, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "metric,hrt,ppo_only,ddpg_only,random,buy_and_hold_equal_weight");
    assert_eq!(lines.len(), 6);
    assert!(lines[4].starts_with("sharpe_ratio,2.0000 ± 1.0000,"));
}
