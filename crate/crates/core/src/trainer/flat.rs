//! Single-level DDPG trader used as the flat baseline.
//!
//! The state is `[p/p₀, h/h_max, b/b₀]` (no signals, no directive) and each
//! actor output is a signed order: its sign picks buy or sell and its
//! magnitude scales `h_max`.

use std::path::Path;

use rand_chacha::ChaCha8Rng;

use super::{container, from_json, DdpgSummary};
use crate::binio::{ByteReader, ByteWriter};
use crate::ddpg::{DdpgAgent, DdpgConfig, Transition};
use crate::env::{DirectiveVector, EnvConfig, LlcScaling, PortfolioState, TradingEnv};
use crate::error::FormatError;
use crate::marketdata::{MarketFrame, SignalPanel};
use crate::par::Exec;
use crate::rng::{seeded, RngState};
use crate::Result;

const FLAT_MAGIC: &[u8; 8] = b"HRTFLAT\0";
const FLAT_VERSION: u32 = 1;
const STREAM_FLAT: u64 = 13;

pub fn flat_observe(state: &PortfolioState, scaling: &LlcScaling) -> Vec<f64> {
    let mut v = Vec::with_capacity(2 * state.prices.len() + 1);
    v.extend(state.prices.iter().zip(&scaling.first_prices).map(|(p, p0)| p / p0));
    v.extend(state.holdings.iter().map(|&h| h as f64 / scaling.h_max));
    v.push(state.cash / scaling.initial_capital);
    v
}

/// Splits signed actor outputs into a directive and magnitudes.
pub fn signed_to_orders(raw: &[f64]) -> (DirectiveVector, Vec<f64>) {
    let dir = raw
        .iter()
        .map(|&a| if a > 0.0 { 1 } else if a < 0.0 { -1 } else { 0 })
        .collect();
    let sizes = raw.iter().map(|a| a.abs().min(1.0)).collect();
    (DirectiveVector::new(dir).expect("signs are valid directives"), sizes)
}

#[derive(Debug, Clone)]
pub struct FlatDdpgTrainer {
    env_cfg: EnvConfig,
    frame: MarketFrame,
    agent: DdpgAgent,
    rng: ChaCha8Rng,
    episodes: usize,
    planned: usize,
    exec: Exec,
}

impl FlatDdpgTrainer {
    /// `planned_episodes` sets the exploration-noise decay horizon.
    pub fn new(
        env_cfg: EnvConfig,
        ddpg: DdpgConfig,
        frame: MarketFrame,
        planned_episodes: usize,
        seed: u64,
        exec: Exec,
    ) -> Result<Self> {
        env_cfg.validate()?;
        let n = frame.n_stocks();
        let agent = DdpgAgent::new(2 * n + 1, n, ddpg, seed.wrapping_mul(2).wrapping_add(3))?;
        Ok(Self {
            env_cfg,
            frame,
            agent,
            rng: seeded(seed, STREAM_FLAT),
            episodes: 0,
            planned: planned_episodes.max(1),
            exec,
        })
    }

    pub fn agent(&self) -> &DdpgAgent {
        &self.agent
    }

    pub fn episodes(&self) -> usize {
        self.episodes
    }

    pub fn run_episode(&mut self) -> Result<DdpgSummary> {
        let n = self.frame.n_stocks();
        let blank = empty_signals(n, self.frame.n_days());
        let mut env = TradingEnv::new(&self.frame, &blank, self.env_cfg.clone())?;
        env.reset();
        let scaling = LlcScaling::new(&self.frame, &self.env_cfg);
        let n_steps = env.n_steps() as f64;
        let mut summary = DdpgSummary::default();
        let mut state = flat_observe(env.state(), &scaling);
        let mut step = 0usize;
        while !env.is_done() {
            let progress = (self.episodes as f64 + step as f64 / n_steps) / self.planned as f64;
            let sigma = self.agent.config.sigma_at(progress);
            summary.noise_sigma = sigma;
            let raw = self.agent.act_raw(&state, sigma, &mut self.rng)?;
            let (directive, sizes) = signed_to_orders(&raw);
            let out = env.step(&directive, &sizes)?;
            let next = flat_observe(env.state(), &scaling);
            self.agent.remember(Transition {
                state: std::mem::replace(&mut state, next.clone()),
                action: raw,
                reward: out.llc_reward,
                next_state: next,
                done: out.done,
            })?;
            if self.agent.buffer.len() >= self.agent.config.batch_size {
                let stats = self.agent.update(self.exec)?;
                summary.updates += 1;
                summary.mean_critic_loss += stats.critic_loss;
                summary.mean_actor_objective += stats.actor_objective;
            }
            step += 1;
        }
        if summary.updates > 0 {
            summary.mean_critic_loss /= summary.updates as f64;
            summary.mean_actor_objective /= summary.updates as f64;
        }
        summary.buffer_fill = self.agent.buffer.len();
        self.episodes += 1;
        Ok(summary)
    }

    pub fn checkpoint(&self) -> FlatCheckpoint {
        FlatCheckpoint {
            env: self.env_cfg.clone(),
            agent: self.agent.clone(),
            rng: RngState::capture(&self.rng),
            episodes: self.episodes,
            planned: self.planned,
        }
    }

    pub fn from_checkpoint(ckpt: FlatCheckpoint, frame: MarketFrame, exec: Exec) -> Result<Self> {
        Ok(Self {
            env_cfg: ckpt.env,
            frame,
            rng: ckpt.rng.restore(),
            agent: ckpt.agent,
            episodes: ckpt.episodes,
            planned: ckpt.planned,
            exec,
        })
    }
}

/// The flat trader ignores signals; the environment still wants a panel.
pub(crate) fn empty_signals(n: usize, t: usize) -> SignalPanel {
    SignalPanel { fr: vec![vec![0.0; t]; n], ss: vec![vec![0.0; t]; n] }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlatCheckpoint {
    pub env: EnvConfig,
    pub agent: DdpgAgent,
    pub rng: RngState,
    pub episodes: usize,
    pub planned: usize,
}

impl FlatCheckpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.bytes_prefixed(&serde_json::to_vec(&self.env).expect("config serializes"));
        w.bytes_prefixed(&serde_json::to_vec(&self.agent.config).expect("config serializes"));
        self.agent.write(&mut w);
        self.rng.write(&mut w);
        w.u64(self.episodes as u64);
        w.u64(self.planned as u64);
        container::seal(FLAT_MAGIC, FLAT_VERSION, &w.into_inner())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FormatError> {
        let payload = container::open(bytes, FLAT_MAGIC, "HRTFLAT", FLAT_VERSION)?;
        let mut r = ByteReader::new(payload);
        let env: EnvConfig = from_json(r.bytes_prefixed()?)?;
        let ddpg: DdpgConfig = from_json(r.bytes_prefixed()?)?;
        let agent = DdpgAgent::read(&mut r, ddpg)?;
        let rng = RngState::read(&mut r)?;
        let episodes = r.u64()? as usize;
        let planned = r.u64()? as usize;
        Ok(Self { env, agent, rng, episodes, planned })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        container::write_file(path.as_ref(), &self.to_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = container::read_file(path.as_ref())?;
        Ok(Self::from_bytes(&bytes)?)
    }
}
