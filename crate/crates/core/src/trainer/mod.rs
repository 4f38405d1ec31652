//! Phased alternating training of the two controllers.
//!
//! Phase 1 trains the HLC on alignment rewards alone with no trades sized.
//! Phase 2 freezes the HLC (acting greedily) and trains the LLC with DDPG.
//! Phase 3 alternates controller-specific blocks whose length grows
//! geometrically; during HLC blocks the HLC reward mixes alignment and the
//! LLC reward with a decaying weight. The inactive controller is frozen in
//! every block.

mod container;
mod flat;

pub use flat::{flat_observe, signed_to_orders, FlatCheckpoint, FlatDdpgTrainer};

use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::binio::{ByteReader, ByteWriter};
use crate::ddpg::{to_magnitudes, DdpgAgent, DdpgConfig, Transition};
use crate::env::{alpha_schedule, hlc_reward, EnvConfig, LlcObservation, TradingEnv};
use crate::error::FormatError;
use crate::marketdata::{MarketFrame, SignalPanel};
use crate::par::Exec;
use crate::ppo::{compute_gae, HlcAgent, PpoConfig, PpoStats, Trajectory};
use crate::rng::{seeded, RngState};
use crate::Result;

const CHECKPOINT_MAGIC: &[u8; 8] = b"HRTCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

const STREAM_HLC: u64 = 11;
const STREAM_LLC: u64 = 12;

#[derive(Debug, Error, PartialEq)]
pub enum TrainerError {
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("data has {got} stock(s) but the agents expect {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("training already finished")]
    Finished,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSchedule {
    /// Phase-1 episodes.
    pub e_hlc: usize,
    /// Phase-2 episodes.
    pub e_llc: usize,
    /// Length of the first Phase-3 block for each controller.
    pub phase3_block: usize,
    /// Block length multiplier applied after each HLC/LLC pair of blocks.
    pub switch_growth: f64,
    pub max_phase3_episodes: usize,
    pub convergence_window: usize,
    pub convergence_tol: f64,
    /// Environment steps after which Phase 3 stops.
    pub total_timesteps: u64,
    pub alpha0: f64,
    /// Per-episode decay rate of the alignment weight.
    pub lambda: f64,
    /// Episodes between periodic checkpoints (0 disables them).
    pub checkpoint_every: usize,
    /// Keep per-step reward components in episode logs.
    pub log_steps: bool,
    pub seed: u64,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            e_hlc: 100,
            e_llc: 2,
            phase3_block: 1,
            switch_growth: 2.0,
            max_phase3_episodes: 6,
            convergence_window: 20,
            convergence_tol: 1e-3,
            total_timesteps: 500_000,
            alpha0: 1.0,
            lambda: 0.001,
            checkpoint_every: 10,
            log_steps: false,
            seed: 0,
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<(), TrainerError> {
        let bad = |m: &str| Err(TrainerError::InvalidSchedule(m.into()));
        if self.e_hlc == 0 || self.e_llc == 0 || self.phase3_block == 0 || self.max_phase3_episodes == 0 {
            return bad("episode counts must be >= 1");
        }
        if !(self.switch_growth >= 1.0 && self.switch_growth.is_finite()) {
            return bad("switch_growth must be >= 1");
        }
        if self.convergence_window == 0 || !(self.convergence_tol > 0.0) {
            return bad("convergence_window must be >= 1 and convergence_tol > 0");
        }
        if self.total_timesteps == 0 {
            return bad("total_timesteps must be > 0");
        }
        if !(self.alpha0 > 0.0 && self.alpha0 <= 1.0 && self.lambda >= 0.0) {
            return bad("alpha0 must lie in (0, 1] and lambda be >= 0");
        }
        Ok(())
    }

    /// Length of Phase-3 block `j` (even `j`: HLC, odd `j`: LLC).
    pub fn block_len(&self, j: usize) -> usize {
        let pair = (j / 2) as i32;
        ((self.phase3_block as f64) * self.switch_growth.powi(pair)).round().max(1.0) as usize
    }

    /// LLC episodes in Phase 2 plus those Phase 3 would run if it used all
    /// of `max_phase3_episodes`.
    pub fn planned_llc_episodes(&self) -> usize {
        let mut left = self.max_phase3_episodes;
        let mut llc = 0;
        let mut j = 0;
        while left > 0 {
            let n = self.block_len(j).min(left);
            if j % 2 == 1 {
                llc += n;
            }
            left -= n;
            j += 1;
        }
        self.e_llc + llc
    }
}

/// Everything that determines a training run apart from the data.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub env: EnvConfig,
    pub ppo: PpoConfig,
    pub ddpg: DdpgConfig,
    pub schedule: TrainSchedule,
    pub exec: Exec,
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.ppo.validate()?;
        self.ddpg.validate()?;
        self.schedule.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Hlc,
    Llc,
    Alternating,
    Done,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Converged,
    EpisodeLimit,
    TimestepBudget,
}

/// Which controller an episode trains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Learner {
    Hlc,
    Llc,
}

/// Position in the schedule.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Progress {
    pub phase: Option<Phase>,
    pub phase_episode: usize,
    pub block: usize,
    pub block_episode: usize,
    pub episodes: usize,
    pub timesteps: u64,
    /// Episodes completed after Phase 1; drives the alignment-weight decay.
    pub since_phase1: usize,
    pub llc_episodes: usize,
    /// Episode LLC-reward totals of every Phase-3 episode.
    pub phase3_returns: Vec<f64>,
    pub stop: Option<StopReason>,
}

impl Progress {
    pub fn current_phase(&self) -> Phase {
        self.phase.unwrap_or(Phase::Hlc)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub align_sum: f64,
    pub llc_reward: f64,
    pub alpha: f64,
    pub hlc_reward: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DdpgSummary {
    pub updates: usize,
    pub mean_critic_loss: f64,
    pub mean_actor_objective: f64,
    pub noise_sigma: f64,
    pub buffer_fill: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub phase: Phase,
    pub learner: Learner,
    pub episode: usize,
    pub phase_episode: usize,
    pub alpha: f64,
    pub steps: usize,
    pub align_total: f64,
    pub mean_align_per_step: f64,
    pub llc_return: f64,
    pub hlc_return: f64,
    pub final_value: f64,
    pub ppo: Option<PpoStats>,
    pub ddpg: Option<DdpgSummary>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub step_log: Option<Vec<StepLog>>,
}

/// Resumable training state machine; one call to [`HrtTrainer::run_episode`]
/// runs one episode over the whole training window.
#[derive(Debug, Clone)]
pub struct HrtTrainer {
    config: TrainerConfig,
    frame: MarketFrame,
    signals: SignalPanel,
    hlc: HlcAgent,
    llc: DdpgAgent,
    hlc_rng: ChaCha8Rng,
    llc_rng: ChaCha8Rng,
    progress: Progress,
}

fn check_data(frame: &MarketFrame, signals: &SignalPanel, n: usize) -> Result<()> {
    if frame.n_stocks() != n {
        return Err(TrainerError::DimensionMismatch { expected: n, got: frame.n_stocks() }.into());
    }
    if signals.n_stocks() != n || signals.n_days() != frame.n_days() {
        return Err(TrainerError::DimensionMismatch { expected: n, got: signals.n_stocks() }.into());
    }
    Ok(())
}

impl HrtTrainer {
    pub fn new(config: TrainerConfig, frame: MarketFrame, signals: SignalPanel) -> Result<Self> {
        config.validate()?;
        let n = frame.n_stocks();
        check_data(&frame, &signals, n)?;
        TradingEnv::new(&frame, &signals, config.env.clone())?;
        let seed = config.schedule.seed;
        let mut hlc = HlcAgent::new(n, config.ppo.clone(), seed.wrapping_mul(2).wrapping_add(1))?;
        hlc.fit_obs_scale(&signals);
        let llc = DdpgAgent::new(LlcObservation::dim(n), n, config.ddpg.clone(), seed.wrapping_mul(2).wrapping_add(2))?;
        Ok(Self {
            hlc_rng: seeded(seed, STREAM_HLC),
            llc_rng: seeded(seed, STREAM_LLC),
            config,
            frame,
            signals,
            hlc,
            llc,
            progress: Progress::default(),
        })
    }

    pub fn from_checkpoint(ckpt: HrtCheckpoint, frame: MarketFrame, signals: SignalPanel) -> Result<Self> {
        check_data(&frame, &signals, ckpt.hlc.n_stocks())?;
        Ok(Self {
            hlc_rng: ckpt.hlc_rng.restore(),
            llc_rng: ckpt.llc_rng.restore(),
            config: ckpt.config,
            frame,
            signals,
            hlc: ckpt.hlc,
            llc: ckpt.llc,
            progress: ckpt.progress,
        })
    }

    pub fn checkpoint(&self) -> HrtCheckpoint {
        HrtCheckpoint {
            config: self.config.clone(),
            progress: self.progress.clone(),
            hlc: self.hlc.clone(),
            llc: self.llc.clone(),
            hlc_rng: RngState::capture(&self.hlc_rng),
            llc_rng: RngState::capture(&self.llc_rng),
        }
    }

    pub fn config(&self) -> &TrainerConfig {
        &self.config
    }

    pub fn hlc(&self) -> &HlcAgent {
        &self.hlc
    }

    pub fn llc(&self) -> &DdpgAgent {
        &self.llc
    }

    pub fn progress(&self) -> &Progress {
        &self.progress
    }

    pub fn phase(&self) -> Phase {
        self.progress.current_phase()
    }

    pub fn is_done(&self) -> bool {
        self.phase() == Phase::Done
    }

    /// Alignment weight for the next episode. Pinned to `alpha0` in Phase 1,
    /// then decays with the number of episodes completed since.
    pub fn alpha(&self) -> f64 {
        let s = &self.config.schedule;
        alpha_schedule(self.progress.since_phase1 as f64, s.alpha0, s.lambda)
    }

    /// Runs episodes until training stops, handing each log to `on_episode`.
    pub fn run<F>(&mut self, mut on_episode: F) -> Result<()>
    where
        F: FnMut(&Self, &EpisodeLog) -> Result<()>,
    {
        while !self.is_done() {
            let log = self.run_episode()?;
            on_episode(self, &log)?;
        }
        Ok(())
    }

    pub fn run_episode(&mut self) -> Result<EpisodeLog> {
        let phase = self.phase();
        let mut log = match phase {
            Phase::Hlc => self.hlc_episode(true)?,
            Phase::Llc => self.llc_episode()?,
            Phase::Alternating if self.progress.block.is_multiple_of(2) => self.hlc_episode(false)?,
            Phase::Alternating => self.llc_episode()?,
            Phase::Done => return Err(TrainerError::Finished.into()),
        };
        log.phase = phase;
        log.episode = self.progress.episodes;
        log.phase_episode = self.progress.phase_episode;
        self.advance(&log);
        Ok(log)
    }

    fn advance(&mut self, log: &EpisodeLog) {
        let s = &self.config.schedule;
        let p = &mut self.progress;
        p.episodes += 1;
        p.timesteps += log.steps as u64;
        p.phase_episode += 1;
        match p.current_phase() {
            Phase::Hlc => {
                if p.phase_episode >= s.e_hlc {
                    p.phase = Some(Phase::Llc);
                    p.phase_episode = 0;
                }
            }
            Phase::Llc => {
                p.since_phase1 += 1;
                p.llc_episodes += 1;
                if p.phase_episode >= s.e_llc {
                    p.phase = Some(Phase::Alternating);
                    p.phase_episode = 0;
                }
            }
            Phase::Alternating => {
                p.since_phase1 += 1;
                if log.learner == Learner::Llc {
                    p.llc_episodes += 1;
                }
                p.phase3_returns.push(log.llc_return);
                p.block_episode += 1;
                if p.block_episode >= s.block_len(p.block) {
                    p.block += 1;
                    p.block_episode = 0;
                }
                p.stop = if converged(&p.phase3_returns, s.convergence_window, s.convergence_tol) {
                    Some(StopReason::Converged)
                } else if p.phase_episode >= s.max_phase3_episodes {
                    Some(StopReason::EpisodeLimit)
                } else if p.timesteps >= s.total_timesteps {
                    Some(StopReason::TimestepBudget)
                } else {
                    None
                };
                if p.stop.is_some() {
                    p.phase = Some(Phase::Done);
                }
            }
            Phase::Done => {}
        }
    }

    fn base_log(&self, learner: Learner, alpha: f64) -> EpisodeLog {
        EpisodeLog {
            phase: self.phase(),
            learner,
            episode: 0,
            phase_episode: 0,
            alpha,
            steps: 0,
            align_total: 0.0,
            mean_align_per_step: 0.0,
            llc_return: 0.0,
            hlc_return: 0.0,
            final_value: 0.0,
            ppo: None,
            ddpg: None,
            step_log: self.config.schedule.log_steps.then(Vec::new),
        }
    }

    /// HLC samples and learns; the LLC is frozen and sizes greedily, or
    /// sizes nothing at all when `zero_sizes` (Phase 1).
    fn hlc_episode(&mut self, zero_sizes: bool) -> Result<EpisodeLog> {
        let alpha = if zero_sizes { self.config.schedule.alpha0 } else { self.alpha() };
        let mut log = self.base_log(Learner::Hlc, alpha);
        let mut env = TradingEnv::new(&self.frame, &self.signals, self.config.env.clone())?;
        env.reset();
        let n = env.n_stocks();
        let mut traj = Trajectory::default();
        while !env.is_done() {
            let x = self.hlc.features(&env.hlc_observation())?;
            let sample = self.hlc.sample(&x, &mut self.hlc_rng)?;
            let value = self.hlc.value_of(&x)?;
            let sizes = if zero_sizes {
                vec![0.0; n]
            } else {
                let s = env.llc_observation(&sample.directive).to_vec();
                to_magnitudes(&self.llc.actor.forward(&s)?)
            };
            let out = env.step(&sample.directive, &sizes)?;
            let r_h = hlc_reward(out.align_sum, out.llc_reward, alpha);
            traj.push(x, &sample, value, r_h, out.done);
            log.align_total += out.align_sum;
            log.llc_return += out.llc_reward;
            log.hlc_return += r_h;
            if let Some(steps) = log.step_log.as_mut() {
                steps.push(StepLog { align_sum: out.align_sum, llc_reward: out.llc_reward, alpha, hlc_reward: r_h });
            }
        }
        compute_gae(&mut traj, &self.hlc.config)?;
        log.ppo = Some(self.hlc.update(&traj, &mut self.hlc_rng, self.config.exec)?);
        log.steps = traj.len();
        log.mean_align_per_step = log.align_total / log.steps as f64;
        log.final_value = env.state().value();
        Ok(log)
    }

    /// LLC explores and learns under the frozen HLC's greedy directives.
    fn llc_episode(&mut self) -> Result<EpisodeLog> {
        let alpha = self.alpha();
        let mut log = self.base_log(Learner::Llc, alpha);
        let directives = self.hlc.greedy_panel(&self.signals)?;
        let mut env = TradingEnv::new(&self.frame, &self.signals, self.config.env.clone())?;
        env.reset();
        let planned = self.config.schedule.planned_llc_episodes() as f64;
        let n_steps = env.n_steps() as f64;
        let mut summary = DdpgSummary::default();
        let mut state = env.llc_observation(&directives[0]).to_vec();
        let mut step = 0usize;
        while !env.is_done() {
            let progress = (self.progress.llc_episodes as f64 + step as f64 / n_steps) / planned;
            let sigma = self.config.ddpg.sigma_at(progress);
            summary.noise_sigma = sigma;
            let raw = self.llc.act_raw(&state, sigma, &mut self.llc_rng)?;
            let directive = &directives[env.state().day];
            let out = env.step(directive, &to_magnitudes(&raw))?;
            let next = env.llc_observation(&directives[env.state().day]).to_vec();
            self.llc.remember(Transition {
                state: std::mem::replace(&mut state, next.clone()),
                action: raw,
                reward: out.llc_reward,
                next_state: next,
                done: out.done,
            })?;
            if self.llc.buffer.len() >= self.config.ddpg.batch_size {
                let stats = self.llc.update(self.config.exec)?;
                summary.updates += 1;
                summary.mean_critic_loss += stats.critic_loss;
                summary.mean_actor_objective += stats.actor_objective;
            }
            let r_h = hlc_reward(out.align_sum, out.llc_reward, alpha);
            log.align_total += out.align_sum;
            log.llc_return += out.llc_reward;
            log.hlc_return += r_h;
            if let Some(steps) = log.step_log.as_mut() {
                steps.push(StepLog { align_sum: out.align_sum, llc_reward: out.llc_reward, alpha, hlc_reward: r_h });
            }
            step += 1;
        }
        if summary.updates > 0 {
            summary.mean_critic_loss /= summary.updates as f64;
            summary.mean_actor_objective /= summary.updates as f64;
        }
        summary.buffer_fill = self.llc.buffer.len();
        log.ddpg = Some(summary);
        log.steps = step;
        log.mean_align_per_step = log.align_total / step as f64;
        log.final_value = env.state().value();
        Ok(log)
    }
}

fn converged(returns: &[f64], window: usize, tol: f64) -> bool {
    if returns.len() < 2 * window {
        return false;
    }
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let recent = mean(&returns[returns.len() - window..]);
    let before = mean(&returns[returns.len() - 2 * window..returns.len() - window]);
    (recent - before).abs() / before.abs().max(1e-12) < tol
}

/// Complete training state: configuration, schedule position, both agents
/// (networks, targets, optimizers, replay buffer) and both RNG streams.
#[derive(Debug, Clone, PartialEq)]
pub struct HrtCheckpoint {
    pub config: TrainerConfig,
    pub progress: Progress,
    pub hlc: HlcAgent,
    pub llc: DdpgAgent,
    pub hlc_rng: RngState,
    pub llc_rng: RngState,
}

impl HrtCheckpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.bytes_prefixed(&serde_json::to_vec(&self.config).expect("config serializes"));
        w.bytes_prefixed(&serde_json::to_vec(&self.progress).expect("progress serializes"));
        self.hlc.write(&mut w);
        self.llc.write(&mut w);
        self.hlc_rng.write(&mut w);
        self.llc_rng.write(&mut w);
        container::seal(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, &w.into_inner())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FormatError> {
        let payload = container::open(bytes, CHECKPOINT_MAGIC, "HRTCKPT", CHECKPOINT_VERSION)?;
        let mut r = ByteReader::new(payload);
        let config: TrainerConfig = from_json(r.bytes_prefixed()?)?;
        let progress: Progress = from_json(r.bytes_prefixed()?)?;
        let hlc = HlcAgent::read(&mut r, config.ppo.clone())?;
        let llc = DdpgAgent::read(&mut r, config.ddpg.clone())?;
        let hlc_rng = RngState::read(&mut r)?;
        let llc_rng = RngState::read(&mut r)?;
        Ok(Self { config, progress, hlc, llc, hlc_rng, llc_rng })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        container::write_file(path.as_ref(), &self.to_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = container::read_file(path.as_ref())?;
        Ok(Self::from_bytes(&bytes)?)
    }
}

pub(crate) fn from_json<T: serde::de::DeserializeOwned>(bytes: &[u8]) -> Result<T, FormatError> {
    serde_json::from_slice(bytes).map_err(|e| FormatError::Invalid(e.to_string()))
}
