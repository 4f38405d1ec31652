//! DDPG agent for the low-level controller.
//!
//! The actor maps a state to `tanh` outputs in `[-1, 1]`; the critic scores
//! `[state, action]` pairs. The LLC reads actor outputs as trade magnitudes
//! `(a + 1) / 2`, while a flat DDPG trader can read them as signed orders.

mod buffer;

pub use buffer::{ReplayBuffer, Transition};

use ndarray::{s, Array2, ArrayView2, Axis};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::binio::{ByteReader, ByteWriter};
use crate::error::FormatError;
use crate::nn::{clip_grad_norm, Activation, AdamW, Mlp, NnError};
use crate::par::{self, Exec, GRAD_CHUNK};

#[derive(Debug, Error, PartialEq)]
pub enum DdpgError {
    #[error("replay buffer holds {size} transition(s); a batch needs {batch}")]
    BufferTooSmall { size: usize, batch: usize },
    #[error("length mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("non-finite loss at update step {step}")]
    NonFiniteLoss { step: usize },
    #[error("invalid DDPG config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DdpgConfig {
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub tau: f64,
    pub gamma: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    /// Initial exploration noise standard deviation, in actor output units.
    pub noise_sigma: f64,
    /// Fraction of `noise_sigma` left at the end of training (linear decay).
    pub noise_decay: f64,
    pub max_grad_norm: f64,
    pub weight_decay: f64,
    pub hidden: Vec<usize>,
}

impl Default for DdpgConfig {
    fn default() -> Self {
        Self {
            actor_lr: 1e-3,
            critic_lr: 1e-3,
            tau: 0.005,
            gamma: 0.99,
            batch_size: 256,
            buffer_capacity: 200_000,
            noise_sigma: 0.2,
            noise_decay: 0.1,
            max_grad_norm: 0.5,
            weight_decay: 0.01,
            hidden: vec![64, 64],
        }
    }
}

impl DdpgConfig {
    pub fn validate(&self) -> Result<(), DdpgError> {
        let bad = |m: &str| Err(DdpgError::InvalidConfig(m.into()));
        if !(self.actor_lr > 0.0 && self.critic_lr > 0.0) {
            return bad("learning rates must be > 0");
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("tau must lie in (0, 1]");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if self.batch_size == 0 || self.buffer_capacity == 0 {
            return bad("batch_size and buffer_capacity must be >= 1");
        }
        if !(self.noise_sigma >= 0.0 && (0.0..=1.0).contains(&self.noise_decay)) {
            return bad("noise_sigma must be >= 0 and noise_decay in [0, 1]");
        }
        if !(self.max_grad_norm > 0.0 && self.weight_decay >= 0.0) {
            return bad("max_grad_norm must be > 0 and weight_decay >= 0");
        }
        if self.hidden.contains(&0) {
            return bad("hidden widths must be >= 1");
        }
        Ok(())
    }

    /// Noise level after `progress ∈ [0, 1]` of training.
    pub fn sigma_at(&self, progress: f64) -> f64 {
        let p = progress.clamp(0.0, 1.0);
        self.noise_sigma * (1.0 - (1.0 - self.noise_decay) * p)
    }
}

/// Maps actor outputs in `[-1, 1]` to trade magnitudes in `[0, 1]`.
pub fn to_magnitudes(raw: &[f64]) -> Vec<f64> {
    raw.iter().map(|a| ((a + 1.0) / 2.0).clamp(0.0, 1.0)).collect()
}

/// Actor output plus Gaussian noise, clamped to `[-1, 1]`.
pub fn act_raw(actor: &Mlp, state: &[f64], sigma: f64, rng: &mut ChaCha8Rng) -> Result<Vec<f64>, DdpgError> {
    let mut a = actor.forward(state)?;
    if sigma > 0.0 {
        for v in a.iter_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *v = (*v + sigma * z).clamp(-1.0, 1.0);
        }
    }
    Ok(a)
}

/// Trade magnitudes in `[0, 1]` for the LLC.
pub fn act(actor: &Mlp, state: &[f64], sigma: f64, rng: &mut ChaCha8Rng) -> Result<Vec<f64>, DdpgError> {
    Ok(to_magnitudes(&act_raw(actor, state, sigma, rng)?))
}

fn stack<'a>(rows: impl ExactSizeIterator<Item = &'a [f64]>, width: usize) -> Array2<f64> {
    let mut m = Array2::zeros((rows.len(), width));
    for (r, row) in rows.enumerate() {
        m.row_mut(r).as_slice_mut().expect("contiguous").copy_from_slice(row);
    }
    m
}

fn concat(states: ArrayView2<'_, f64>, actions: ArrayView2<'_, f64>) -> Array2<f64> {
    ndarray::concatenate(Axis(1), &[states, actions]).expect("equal row counts")
}

/// `y_i = r_i + γ·(1 − done_i)·Q′(s′_i, μ′(s′_i))`.
pub fn td_target(critic_target: &Mlp, actor_target: &Mlp, batch: &[&Transition], gamma: f64) -> Result<Vec<f64>, DdpgError> {
    if batch.is_empty() {
        return Ok(Vec::new());
    }
    let next = stack(batch.iter().map(|t| t.next_state.as_slice()), actor_target.input_dim());
    let mu = actor_target.forward_batch(next.view())?;
    let q = critic_target.forward_batch(concat(next.view(), mu.view()).view())?;
    Ok(batch
        .iter()
        .enumerate()
        .map(|(i, t)| t.reward + if t.done { 0.0 } else { gamma * q[[i, 0]] })
        .collect())
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DdpgStats {
    pub critic_loss: f64,
    /// Mean `Q(s, μ(s))` over the batch after the critic step.
    pub actor_objective: f64,
}

/// Actor, critic, their targets and optimizers, and the replay buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct DdpgAgent {
    pub config: DdpgConfig,
    pub actor: Mlp,
    pub critic: Mlp,
    pub actor_target: Mlp,
    pub critic_target: Mlp,
    pub actor_opt: AdamW,
    pub critic_opt: AdamW,
    pub buffer: ReplayBuffer,
    updates: usize,
}

impl DdpgAgent {
    pub fn new(state_dim: usize, action_dim: usize, config: DdpgConfig, seed: u64) -> Result<Self, DdpgError> {
        config.validate()?;
        let actor = Mlp::with_hidden(state_dim, &config.hidden, action_dim, Activation::Tanh, Activation::Tanh, seed)?;
        let critic = Mlp::with_hidden(
            state_dim + action_dim,
            &config.hidden,
            1,
            Activation::Tanh,
            Activation::Identity,
            seed ^ 0xC41C,
        )?;
        let actor_opt = AdamW::for_net(&actor, config.actor_lr, config.weight_decay);
        let critic_opt = AdamW::for_net(&critic, config.critic_lr, config.weight_decay);
        let buffer = ReplayBuffer::new(config.buffer_capacity, crate::rng::seeded(seed, 0xB0F));
        Ok(Self {
            actor_target: actor.clone(),
            critic_target: critic.clone(),
            actor,
            critic,
            actor_opt,
            critic_opt,
            buffer,
            config,
            updates: 0,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.actor.input_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.actor.output_dim()
    }

    pub fn updates(&self) -> usize {
        self.updates
    }

    pub fn act_raw(&self, state: &[f64], sigma: f64, rng: &mut ChaCha8Rng) -> Result<Vec<f64>, DdpgError> {
        if state.len() != self.state_dim() {
            return Err(DdpgError::ShapeMismatch { expected: self.state_dim(), got: state.len() });
        }
        act_raw(&self.actor, state, sigma, rng)
    }

    pub fn act(&self, state: &[f64], sigma: f64, rng: &mut ChaCha8Rng) -> Result<Vec<f64>, DdpgError> {
        Ok(to_magnitudes(&self.act_raw(state, sigma, rng)?))
    }

    pub fn remember(&mut self, t: Transition) -> Result<(), DdpgError> {
        let (s, a) = (self.state_dim(), self.action_dim());
        for (expected, got) in [(s, t.state.len()), (s, t.next_state.len()), (a, t.action.len())] {
            if expected != got {
                return Err(DdpgError::ShapeMismatch { expected, got });
            }
        }
        self.buffer.push(t);
        Ok(())
    }

    /// One critic step, one actor step, then soft target updates.
    pub fn update(&mut self, exec: Exec) -> Result<DdpgStats, DdpgError> {
        let b = self.config.batch_size;
        if self.buffer.len() < b {
            return Err(DdpgError::BufferTooSmall { size: self.buffer.len(), batch: b });
        }
        let idx = self.buffer.sample_indices(b);
        let batch: Vec<&Transition> = idx.iter().map(|&i| self.buffer.get(i)).collect();
        let (sd, ad) = (self.state_dim(), self.action_dim());
        let states = stack(batch.iter().map(|t| t.state.as_slice()), sd);
        let actions = stack(batch.iter().map(|t| t.action.as_slice()), ad);
        let y = td_target(&self.critic_target, &self.actor_target, &batch, self.config.gamma)?;
        let inputs = concat(states.view(), actions.view());
        let bf = b as f64;

        let (mut grad, critic_loss) = critic_gradient(&self.critic, inputs.view(), &y, exec)?;
        let critic_loss = critic_loss / bf;
        if !critic_loss.is_finite() {
            return Err(DdpgError::NonFiniteLoss { step: self.updates });
        }
        clip_grad_norm(&mut grad, self.config.max_grad_norm);
        self.critic_opt.step(&mut self.critic, &grad)?;

        let (mut grad, q_sum) = actor_gradient(&self.actor, &self.critic, states.view(), exec)?;
        let actor_objective = q_sum / bf;
        if !actor_objective.is_finite() {
            return Err(DdpgError::NonFiniteLoss { step: self.updates });
        }
        clip_grad_norm(&mut grad, self.config.max_grad_norm);
        self.actor_opt.step(&mut self.actor, &grad)?;

        self.critic_target.soft_update(&self.critic, self.config.tau)?;
        self.actor_target.soft_update(&self.actor, self.config.tau)?;
        self.updates += 1;
        Ok(DdpgStats { critic_loss, actor_objective })
    }

    /// Actor gradient of `−mean Q(s, μ(s))` over `states` (one per row), as
    /// used by [`DdpgAgent::update`] before clipping, and `mean Q(s, μ(s))`.
    pub fn policy_gradient(&self, states: &[Vec<f64>], exec: Exec) -> Result<(Vec<f64>, f64), DdpgError> {
        let sd = self.state_dim();
        if let Some(bad) = states.iter().find(|s| s.len() != sd) {
            return Err(DdpgError::ShapeMismatch { expected: sd, got: bad.len() });
        }
        let batch = stack(states.iter().map(Vec::as_slice), sd);
        let (grad, q_sum) = actor_gradient(&self.actor, &self.critic, batch.view(), exec)?;
        Ok((grad, q_sum / states.len().max(1) as f64))
    }

    pub fn write(&self, w: &mut ByteWriter) {
        for net in [&self.actor, &self.critic, &self.actor_target, &self.critic_target] {
            net.write_to(w);
        }
        self.actor_opt.write(w);
        self.critic_opt.write(w);
        self.buffer.write(w);
        w.u64(self.updates as u64);
    }

    pub fn read(r: &mut ByteReader<'_>, config: DdpgConfig) -> Result<Self, FormatError> {
        let actor = Mlp::read_from(r)?;
        let critic = Mlp::read_from(r)?;
        let actor_target = Mlp::read_from(r)?;
        let critic_target = Mlp::read_from(r)?;
        let actor_opt = AdamW::read(r)?;
        let critic_opt = AdamW::read(r)?;
        let buffer = ReplayBuffer::read(r)?;
        let updates = r.u64()? as usize;
        if !actor.same_architecture(&actor_target) || !critic.same_architecture(&critic_target) {
            return Err(FormatError::Invalid("target networks differ from their sources".into()));
        }
        if critic.input_dim() != actor.input_dim() + actor.output_dim() {
            return Err(FormatError::Invalid("critic input width disagrees with the actor".into()));
        }
        Ok(Self { config, actor, critic, actor_target, critic_target, actor_opt, critic_opt, buffer, updates })
    }
}

/// Gradient of `mean (Q(x) − y)²` over the rows of `inputs`, and the summed squared error.
fn critic_gradient(critic: &Mlp, inputs: ArrayView2<'_, f64>, y: &[f64], exec: Exec) -> Result<(Vec<f64>, f64), NnError> {
    let bf = inputs.nrows() as f64;
    let parts = par::map_chunks(exec, inputs.nrows(), GRAD_CHUNK, |r| {
        let cache = critic.forward_cached(inputs.slice(s![r.clone(), ..]))?;
        let q = cache.output();
        let mut g = Array2::zeros(q.dim());
        let mut loss = 0.0;
        for (k, i) in r.enumerate() {
            let err = q[[k, 0]] - y[i];
            loss += err * err;
            g[[k, 0]] = 2.0 * err / bf;
        }
        Ok((critic.backward(&cache, g.view())?.0, loss))
    });
    reduce(parts)
}

/// Gradient of `−mean Q(s, μ(s))` with respect to the actor, chained through
/// the critic's input gradient, and the summed `Q(s, μ(s))`.
fn actor_gradient(actor: &Mlp, critic: &Mlp, states: ArrayView2<'_, f64>, exec: Exec) -> Result<(Vec<f64>, f64), NnError> {
    let bf = states.nrows() as f64;
    let sd = states.ncols();
    let parts = par::map_chunks(exec, states.nrows(), GRAD_CHUNK, |r| {
        let s_chunk = states.slice(s![r.clone(), ..]);
        let a_cache = actor.forward_cached(s_chunk)?;
        let q_cache = critic.forward_cached(concat(s_chunk, a_cache.output().view()).view())?;
        let q_sum = q_cache.output().sum();
        let g = Array2::from_elem((r.len(), 1), -1.0 / bf);
        let (_, dq_din) = critic.backward(&q_cache, g.view())?;
        Ok((actor.backward(&a_cache, dq_din.slice(s![.., sd..]))?.0, q_sum))
    });
    reduce(parts)
}

fn reduce(parts: Vec<Result<(Vec<f64>, f64), NnError>>) -> Result<(Vec<f64>, f64), NnError> {
    let mut grads = Vec::with_capacity(parts.len());
    let mut total = 0.0;
    for p in parts {
        let (g, v) = p?;
        grads.push(g);
        total += v;
    }
    Ok((par::sum_in_order(grads), total))
}
