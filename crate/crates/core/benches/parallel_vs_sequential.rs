//! Gradient steps under `Exec::Parallel` and `Exec::Sequential`.
//!
//! Build with `--no-default-features` to time the build without rayon.

use criterion::{criterion_group, criterion_main, BatchSize, BenchmarkId, Criterion};
use hrt_core::ddpg::{DdpgAgent, DdpgConfig, Transition};
use hrt_core::env::{EnvConfig, LlcObservation, TradingEnv};
use hrt_core::marketdata::{generate_synthetic, SyntheticMarketSpec};
use hrt_core::par::Exec;
use hrt_core::ppo::{compute_gae, HlcAgent, PpoConfig, Trajectory};
use hrt_core::rng::seeded;
use rand::Rng;

const MODES: [(&str, Exec); 2] = [("parallel", Exec::Parallel), ("sequential", Exec::Sequential)];

fn ppo_update(c: &mut Criterion) {
    let n = 10;
    let (frame, signals) = generate_synthetic(&SyntheticMarketSpec::new(n, 500, 1, 0.8)).unwrap();
    let cfg = PpoConfig { epochs_per_iter: 2, ..PpoConfig::default() };
    let mut agent = HlcAgent::new(n, cfg.clone(), 1).unwrap();
    agent.fit_obs_scale(&signals);
    let mut env = TradingEnv::new(&frame, &signals, EnvConfig::default()).unwrap();
    env.reset();
    let mut rng = seeded(1, 0);
    let mut traj = Trajectory::default();
    while !env.is_done() {
        let x = agent.features(&env.hlc_observation()).unwrap();
        let sample = agent.sample(&x, &mut rng).unwrap();
        let value = agent.value_of(&x).unwrap();
        let out = env.step(&sample.directive, &vec![0.0; n]).unwrap();
        traj.push(x, &sample, value, out.align_sum, out.done);
    }
    compute_gae(&mut traj, &cfg).unwrap();

    let mut group = c.benchmark_group("ppo_update_499_steps");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter_batched(
                || (agent.clone(), seeded(2, 0)),
                |(mut a, mut r)| a.update(&traj, &mut r, exec).unwrap(),
                BatchSize::LargeInput,
            )
        });
    }
    group.finish();
}

fn ddpg_update(c: &mut Criterion) {
    let n = 10;
    let dim = LlcObservation::dim(n);
    let mut agent = DdpgAgent::new(dim, n, DdpgConfig::default(), 3).unwrap();
    let mut rng = seeded(3, 0);
    let mut vec_of = |len: usize| -> Vec<f64> { (0..len).map(|_| rng.random_range(-1.0..1.0)).collect() };
    for _ in 0..2048 {
        let t = Transition {
            state: vec_of(dim),
            action: vec_of(n),
            reward: vec_of(1)[0],
            next_state: vec_of(dim),
            done: false,
        };
        agent.remember(t).unwrap();
    }

    let mut group = c.benchmark_group("ddpg_update_batch_256");
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter_batched(|| agent.clone(), |mut a| a.update(exec).unwrap(), BatchSize::LargeInput)
        });
    }
    group.finish();
}

criterion_group!(benches, ppo_update, ddpg_update);
criterion_main!(benches);
