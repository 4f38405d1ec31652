//! PPO agent for the high-level controller.
//!
//! The policy network ends in a per-stock softmax over `[buy, sell, hold]`,
//! so the joint action over `3^N` directives factorizes into `N` independent
//! categoricals. The value network is a separate MLP with a scalar output.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::binio::{ByteReader, ByteWriter};
use crate::env::{DirectiveVector, HlcObservation};
use crate::error::FormatError;
use crate::marketdata::{forward_returns, MarketFrame, SignalPanel};
use crate::nn::{clip_grad_norm, Activation, AdamW, Mlp, NnError};
use crate::par::{self, Exec, GRAD_CHUNK};

const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum PpoError {
    #[error("length mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("non-finite loss at update step {step}")]
    NonFiniteLoss { step: usize },
    #[error("policy issued no buy/sell decisions on days with a price move")]
    NoTrades,
    #[error("trajectory is empty")]
    EmptyTrajectory,
    #[error("advantages have not been computed")]
    MissingAdvantages,
    #[error("invalid PPO config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub learning_rate: f64,
    pub clip_eps: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub epochs_per_iter: usize,
    pub minibatch_size: usize,
    /// Steps per rollout; 0 means one full pass over the training window.
    pub rollout_horizon: usize,
    pub entropy_coef: f64,
    pub max_grad_norm: f64,
    pub weight_decay: f64,
    pub hidden: Vec<usize>,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            learning_rate: 3e-4,
            clip_eps: 0.2,
            gamma: 0.99,
            gae_lambda: 0.95,
            epochs_per_iter: 10,
            minibatch_size: 256,
            rollout_horizon: 0,
            entropy_coef: 0.01,
            max_grad_norm: 0.5,
            weight_decay: 0.01,
            hidden: vec![64, 64],
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<(), PpoError> {
        let bad = |m: &str| Err(PpoError::InvalidConfig(m.into()));
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be > 0");
        }
        if !(self.clip_eps > 0.0) {
            return bad("clip_eps must be > 0");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gae_lambda must lie in [0, 1]");
        }
        if self.epochs_per_iter == 0 || self.minibatch_size == 0 {
            return bad("epochs_per_iter and minibatch_size must be >= 1");
        }
        if !(self.entropy_coef >= 0.0 && self.max_grad_norm > 0.0 && self.weight_decay >= 0.0) {
            return bad("entropy_coef, weight_decay must be >= 0 and max_grad_norm > 0");
        }
        if self.hidden.contains(&0) {
            return bad("hidden widths must be >= 1");
        }
        Ok(())
    }
}

/// One rollout. `obs` rows are the scaled network inputs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub obs: Vec<Vec<f64>>,
    /// Per-stock action index (0 buy, 1 sell, 2 hold).
    pub actions: Vec<Vec<usize>>,
    /// Per-stock log-probabilities under the behavior policy.
    pub log_probs: Vec<Vec<f64>>,
    pub values: Vec<f64>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    /// Value estimate of the state after the last step, used when it is not terminal.
    pub bootstrap_value: f64,
    pub returns: Vec<f64>,
    pub advantages: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }

    pub fn push(&mut self, obs: Vec<f64>, sample: &DirectiveSample, value: f64, reward: f64, done: bool) {
        self.obs.push(obs);
        self.actions.push(sample.actions.clone());
        self.log_probs.push(sample.log_probs.clone());
        self.values.push(value);
        self.rewards.push(reward);
        self.dones.push(done);
    }

    pub fn joint_log_prob(&self, t: usize) -> f64 {
        self.log_probs[t].iter().sum()
    }
}

/// A sampled directive with its per-stock and joint log-probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectiveSample {
    pub directive: DirectiveVector,
    pub actions: Vec<usize>,
    pub log_probs: Vec<f64>,
    pub log_prob: f64,
}

fn log_p(p: f64) -> f64 {
    p.max(LOG_FLOOR).ln()
}

/// Samples each stock's action from its softmax group of `probs`.
pub fn sample_from_probs(probs: &[f64], rng: &mut ChaCha8Rng) -> DirectiveSample {
    let mut actions = Vec::with_capacity(probs.len() / 3);
    let mut log_probs = Vec::with_capacity(probs.len() / 3);
    for group in probs.chunks(3) {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut k = 2;
        for (j, &p) in group.iter().enumerate() {
            acc += p;
            if u < acc {
                k = j;
                break;
            }
        }
        actions.push(k);
        log_probs.push(log_p(group[k]));
    }
    DirectiveSample {
        directive: DirectiveVector::from_action_indices(&actions),
        log_prob: log_probs.iter().sum(),
        actions,
        log_probs,
    }
}

/// Runs the policy on `obs` and samples a directive.
pub fn sample_directive(policy: &Mlp, obs: &[f64], rng: &mut ChaCha8Rng) -> Result<DirectiveSample, PpoError> {
    let probs = policy.forward(obs)?;
    Ok(sample_from_probs(&probs, rng))
}

/// Most probable action per stock (ties resolve to the lower index).
pub fn greedy_from_probs(probs: &[f64]) -> Vec<usize> {
    probs
        .chunks(3)
        .map(|g| {
            let mut best = 0;
            for k in 1..g.len() {
                if g[k] > g[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

/// Raw GAE: `Â_t = Σ_k (γλ)^k δ_{t+k}` with `δ_t = r_t + γV(s_{t+1})(1−done_t) − V(s_t)`.
pub fn gae(rewards: &[f64], values: &[f64], dones: &[bool], bootstrap: f64, gamma: f64, lambda: f64) -> Vec<f64> {
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let next_value = if t + 1 < n { values[t + 1] } else { bootstrap };
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * live - values[t];
        running = delta + gamma * lambda * live * running;
        adv[t] = running;
    }
    adv
}

/// Fills `returns = Â + V` from raw advantages, then normalizes the
/// advantages over the rollout to mean 0 and standard deviation 1.
pub fn compute_gae(traj: &mut Trajectory, cfg: &PpoConfig) -> Result<(), PpoError> {
    let n = traj.len();
    if n == 0 {
        return Err(PpoError::EmptyTrajectory);
    }
    for len in [traj.actions.len(), traj.log_probs.len(), traj.values.len(), traj.rewards.len(), traj.dones.len()] {
        if len != n {
            return Err(PpoError::ShapeMismatch { expected: n, got: len });
        }
    }
    let adv = gae(&traj.rewards, &traj.values, &traj.dones, traj.bootstrap_value, cfg.gamma, cfg.gae_lambda);
    traj.returns = adv.iter().zip(&traj.values).map(|(a, v)| a + v).collect();
    traj.advantages = normalize(&adv);
    Ok(())
}

fn normalize(x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    x.iter().map(|v| (v - mean) / (sd + 1e-8)).collect()
}

/// Per-sample clipped surrogate: `(r·Â, clip(r, 1−ε, 1+ε)·Â, min of the two)`.
pub fn surrogate_terms(ratio: f64, advantage: f64, eps: f64) -> (f64, f64, f64) {
    let unclipped = ratio * advantage;
    let clipped = ratio.clamp(1.0 - eps, 1.0 + eps) * advantage;
    (unclipped, clipped, unclipped.min(clipped))
}

/// Averages over all minibatches of one update call.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PpoStats {
    pub surrogate: f64,
    pub value_loss: f64,
    /// Mean per-stock entropy.
    pub entropy: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
    pub minibatches: usize,
}

#[derive(Default)]
struct PolicyChunk {
    grad: Vec<f64>,
    surrogate: f64,
    entropy: f64,
    clipped: f64,
    kl: f64,
}

fn rows(data: &[Vec<f64>], idx: &[usize]) -> Array2<f64> {
    let d = data[idx[0]].len();
    let mut m = Array2::zeros((idx.len(), d));
    for (r, &i) in idx.iter().enumerate() {
        m.row_mut(r).as_slice_mut().expect("contiguous").copy_from_slice(&data[i]);
    }
    m
}

fn policy_chunk(policy: &Mlp, traj: &Trajectory, idx: &[usize], cfg: &PpoConfig, batch: f64) -> Result<PolicyChunk, NnError> {
    let x = rows(&traj.obs, idx);
    let cache = policy.forward_cached(x.view())?;
    let probs = cache.output();
    let mut g = Array2::zeros(probs.dim());
    let mut out = PolicyChunk::default();
    for (r, &i) in idx.iter().enumerate() {
        let p = probs.row(r);
        let p = p.as_slice().expect("contiguous");
        let acts = &traj.actions[i];
        let new_lp: f64 = acts.iter().enumerate().map(|(s, &a)| log_p(p[3 * s + a])).sum();
        let old_lp = traj.joint_log_prob(i);
        let ratio = (new_lp - old_lp).exp();
        let adv = traj.advantages[i];
        let (unclipped, clipped, obj) = surrogate_terms(ratio, adv, cfg.clip_eps);
        out.surrogate += obj;
        out.kl += old_lp - new_lp;
        // The clipped branch carries no gradient once it is the smaller term.
        let coef = if unclipped <= clipped {
            ratio * adv
        } else {
            out.clipped += 1.0;
            0.0
        };
        let gr = g.row_mut(r).into_slice().expect("contiguous");
        for (s, &a) in acts.iter().enumerate() {
            gr[3 * s + a] -= coef / p[3 * s + a].max(LOG_FLOOR) / batch;
        }
        for (k, &pk) in p.iter().enumerate() {
            out.entropy -= pk * log_p(pk);
            gr[k] += cfg.entropy_coef * (log_p(pk) + 1.0) / batch;
        }
    }
    out.grad = policy.backward(&cache, g.view())?.0;
    Ok(out)
}

fn value_chunk(value: &Mlp, traj: &Trajectory, idx: &[usize], batch: f64) -> Result<(Vec<f64>, f64), NnError> {
    let x = rows(&traj.obs, idx);
    let cache = value.forward_cached(x.view())?;
    let v = cache.output();
    let mut g = Array2::zeros(v.dim());
    let mut loss = 0.0;
    for (r, &i) in idx.iter().enumerate() {
        let err = v[[r, 0]] - traj.returns[i];
        loss += err * err;
        g[[r, 0]] = 2.0 * err / batch;
    }
    Ok((value.backward(&cache, g.view())?.0, loss))
}

/// The HLC: policy and value networks, their optimizers and the fixed input scaling.
#[derive(Debug, Clone, PartialEq)]
pub struct HlcAgent {
    pub config: PpoConfig,
    pub policy: Mlp,
    pub value: Mlp,
    pub policy_opt: AdamW,
    pub value_opt: AdamW,
    /// Multiplier applied to each raw `[fr, ss]` feature before the networks see it.
    pub obs_scale: Vec<f64>,
    updates: usize,
}

impl HlcAgent {
    pub fn new(n_stocks: usize, config: PpoConfig, seed: u64) -> Result<Self, PpoError> {
        config.validate()?;
        let input = 2 * n_stocks;
        let mut policy = Mlp::with_hidden(
            input,
            &config.hidden,
            3 * n_stocks,
            Activation::Tanh,
            Activation::SoftmaxGroups(3),
            seed,
        )?;
        // Start near the uniform policy.
        let fan_in = *config.hidden.last().unwrap_or(&input);
        let n = policy.param_count();
        let last = (fan_in + 1) * 3 * n_stocks;
        policy.params_mut()[n - last..].iter_mut().for_each(|w| *w *= 0.01);
        let value = Mlp::with_hidden(input, &config.hidden, 1, Activation::Tanh, Activation::Identity, seed ^ 0x5EED)?;
        let policy_opt = AdamW::for_net(&policy, config.learning_rate, config.weight_decay);
        let value_opt = AdamW::for_net(&value, config.learning_rate, config.weight_decay);
        Ok(Self { obs_scale: vec![1.0; input], config, policy, value, policy_opt, value_opt, updates: 0 })
    }

    pub fn n_stocks(&self) -> usize {
        self.obs_scale.len() / 2
    }

    pub fn updates(&self) -> usize {
        self.updates
    }

    /// Scales forward-return inputs by the inverse of their pooled standard
    /// deviation over `signals`; sentiment inputs stay as they are.
    pub fn fit_obs_scale(&mut self, signals: &SignalPanel) {
        let cells: Vec<f64> = signals.fr.iter().flatten().copied().collect();
        let n = cells.len() as f64;
        let mean = cells.iter().sum::<f64>() / n;
        let sd = (cells.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        let k = self.n_stocks();
        let s = if sd > 0.0 && sd.is_finite() { 1.0 / sd } else { 1.0 };
        self.obs_scale = (0..2 * k).map(|j| if j < k { s } else { 1.0 }).collect();
    }

    pub fn features(&self, obs: &HlcObservation) -> Result<Vec<f64>, PpoError> {
        let raw = obs.to_vec();
        if raw.len() != self.obs_scale.len() {
            return Err(PpoError::ShapeMismatch { expected: self.obs_scale.len(), got: raw.len() });
        }
        Ok(raw.iter().zip(&self.obs_scale).map(|(x, s)| x * s).collect())
    }

    pub fn probabilities(&self, features: &[f64]) -> Result<Vec<f64>, PpoError> {
        Ok(self.policy.forward(features)?)
    }

    pub fn value_of(&self, features: &[f64]) -> Result<f64, PpoError> {
        Ok(self.value.forward(features)?[0])
    }

    pub fn sample(&self, features: &[f64], rng: &mut ChaCha8Rng) -> Result<DirectiveSample, PpoError> {
        sample_directive(&self.policy, features, rng)
    }

    pub fn greedy(&self, features: &[f64]) -> Result<DirectiveVector, PpoError> {
        let probs = self.probabilities(features)?;
        Ok(DirectiveVector::from_action_indices(&greedy_from_probs(&probs)))
    }

    /// Greedy directives for every day of a signal panel, `[day]`.
    pub fn greedy_panel(&self, signals: &SignalPanel) -> Result<Vec<DirectiveVector>, PpoError> {
        let n = self.n_stocks();
        if signals.n_stocks() != n {
            return Err(PpoError::ShapeMismatch { expected: n, got: signals.n_stocks() });
        }
        let t = signals.n_days();
        let mut x = Array2::zeros((t, 2 * n));
        for day in 0..t {
            for i in 0..n {
                x[[day, i]] = signals.fr[i][day] * self.obs_scale[i];
                x[[day, n + i]] = signals.ss[i][day] * self.obs_scale[n + i];
            }
        }
        let probs = self.policy.forward_batch(x.view())?;
        Ok(probs
            .rows()
            .into_iter()
            .map(|p| DirectiveVector::from_action_indices(&greedy_from_probs(p.as_slice().expect("contiguous"))))
            .collect())
    }

    /// Clipped-surrogate policy update and value regression over
    /// `epochs_per_iter` passes of shuffled minibatches.
    pub fn update(&mut self, traj: &Trajectory, rng: &mut ChaCha8Rng, exec: Exec) -> Result<PpoStats, PpoError> {
        let n = traj.len();
        if n == 0 {
            return Err(PpoError::EmptyTrajectory);
        }
        if traj.advantages.len() != n || traj.returns.len() != n {
            return Err(PpoError::MissingAdvantages);
        }
        let cfg = self.config.clone();
        let mut stats = PpoStats::default();
        let mut order: Vec<usize> = (0..n).collect();
        let mut samples = 0.0;
        let mut stock_samples = 0.0;
        for _ in 0..cfg.epochs_per_iter {
            order.shuffle(rng);
            for mb in order.chunks(cfg.minibatch_size) {
                let batch = mb.len() as f64;
                let policy = &self.policy;
                let parts = par::map_chunks(exec, mb.len(), GRAD_CHUNK, |r| {
                    policy_chunk(policy, traj, &mb[r], &cfg, batch)
                });
                let mut grads = Vec::with_capacity(parts.len());
                let (mut surr, mut ent) = (0.0, 0.0);
                for p in parts {
                    let p = p?;
                    surr += p.surrogate;
                    ent += p.entropy;
                    stats.clip_fraction += p.clipped;
                    stats.approx_kl += p.kl;
                    grads.push(p.grad);
                }
                let loss = -(surr + cfg.entropy_coef * ent) / batch;
                if !loss.is_finite() {
                    return Err(PpoError::NonFiniteLoss { step: self.updates });
                }
                let mut grad = par::sum_in_order(grads);
                clip_grad_norm(&mut grad, cfg.max_grad_norm);
                self.policy_opt.step(&mut self.policy, &grad)?;

                let value = &self.value;
                let parts = par::map_chunks(exec, mb.len(), GRAD_CHUNK, |r| value_chunk(value, traj, &mb[r], batch));
                let mut grads = Vec::with_capacity(parts.len());
                let mut vloss = 0.0;
                for p in parts {
                    let (g, l) = p?;
                    vloss += l;
                    grads.push(g);
                }
                if !vloss.is_finite() {
                    return Err(PpoError::NonFiniteLoss { step: self.updates });
                }
                let mut grad = par::sum_in_order(grads);
                clip_grad_norm(&mut grad, cfg.max_grad_norm);
                self.value_opt.step(&mut self.value, &grad)?;

                stats.surrogate += surr;
                stats.entropy += ent;
                stats.value_loss += vloss;
                samples += batch;
                stock_samples += batch * self.n_stocks() as f64;
                stats.minibatches += 1;
                self.updates += 1;
            }
        }
        stats.surrogate /= samples;
        stats.value_loss /= samples;
        stats.clip_fraction /= samples;
        stats.approx_kl /= samples;
        stats.entropy /= stock_samples;
        Ok(stats)
    }

    /// Fraction of greedy buy/sell decisions whose sign matches the realized
    /// next-day open-to-open return. Cells with a zero return are skipped.
    pub fn accuracy(&self, frame: &MarketFrame, signals: &SignalPanel) -> Result<f64, PpoError> {
        hlc_accuracy(self, frame, signals)
    }

    pub fn write(&self, w: &mut ByteWriter) {
        self.policy.write_to(w);
        self.value.write_to(w);
        self.policy_opt.write(w);
        self.value_opt.write(w);
        w.f64s(&self.obs_scale);
        w.u64(self.updates as u64);
    }

    pub fn read(r: &mut ByteReader<'_>, config: PpoConfig) -> Result<Self, FormatError> {
        let policy = Mlp::read_from(r)?;
        let value = Mlp::read_from(r)?;
        let policy_opt = AdamW::read(r)?;
        let value_opt = AdamW::read(r)?;
        let obs_scale = r.f64s()?;
        let updates = r.u64()? as usize;
        if policy.input_dim() != obs_scale.len() || value.input_dim() != obs_scale.len() {
            return Err(FormatError::Invalid("HLC networks disagree with observation width".into()));
        }
        Ok(Self { config, policy, value, policy_opt, value_opt, obs_scale, updates })
    }
}

/// See [`HlcAgent::accuracy`]. Errors with [`PpoError::NoTrades`] when every
/// counted decision is a hold.
pub fn hlc_accuracy(agent: &HlcAgent, frame: &MarketFrame, signals: &SignalPanel) -> Result<f64, PpoError> {
    if frame.n_days() != signals.n_days() {
        return Err(PpoError::ShapeMismatch { expected: frame.n_days(), got: signals.n_days() });
    }
    let directives = agent.greedy_panel(signals)?;
    let fwd = forward_returns(frame);
    let (mut hits, mut total) = (0usize, 0usize);
    for (t, d) in directives.iter().take(frame.n_days().saturating_sub(1)).enumerate() {
        for (i, &a) in d.entries().iter().enumerate() {
            let r = fwd[i][t];
            if a == 0 || r == 0.0 {
                continue;
            }
            total += 1;
            if (a > 0) == (r > 0.0) {
                hits += 1;
            }
        }
    }
    if total == 0 {
        return Err(PpoError::NoTrades);
    }
    Ok(hits as f64 / total as f64)
}
