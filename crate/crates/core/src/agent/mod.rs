//! Actor-critic agent with factored softmax heads.
//!
//! The full agent picks a bitrate, a generation size and a code rate per
//! chunk. The ablation picks only the bitrate and always streams at code
//! rate 1 with the largest generation.

mod checkpoint;
mod net;
mod policy;
mod train;

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::sim::{Action, SimConfig, SimError};

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint};
pub use net::{leaky, log_softmax, Dense, LEAKY_SLOPE};
pub use policy::{
    act_greedy, actor_forward, clip_norm, critic_forward, discounted_returns, gradients, loss_terms,
    HeadDistributions, LossTerms, LossWeights, NetShape, PolicyParams, Sample,
};
pub use train::{evaluate_greedy, run_episode, train, CurvePoint, EpisodeSpec, Rollout, TrainEnv, TrainResult};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AgentError {
    #[error("expected length {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("non-finite gradient; update skipped")]
    NonFiniteGradient,
    #[error("empty batch")]
    EmptyBatch,
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Which action components the agent controls.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AgentKind {
    /// Bitrate, generation size and code rate.
    Nancy,
    /// Bitrate only, uncoded.
    Pensieve,
}

impl AgentKind {
    pub fn name(self) -> &'static str {
        match self {
            AgentKind::Nancy => "nancy",
            AgentKind::Pensieve => "pensieve",
        }
    }

    pub fn head_sizes(self, cfg: &SimConfig) -> Vec<usize> {
        match self {
            AgentKind::Nancy => vec![cfg.ladder.len(), cfg.gen_sizes.len(), cfg.code_rates.len()],
            AgentKind::Pensieve => vec![cfg.ladder.len()],
        }
    }

    pub fn net_shape(self, cfg: &SimConfig, hidden: &[usize]) -> NetShape {
        NetShape {
            input: crate::sim::observation_len(cfg),
            hidden: hidden.to_vec(),
            heads: self.head_sizes(cfg),
        }
    }

    /// Maps one index per head to an environment action.
    pub fn to_action(self, cfg: &SimConfig, idx: &[usize]) -> Action {
        match self {
            AgentKind::Nancy => Action::new(idx[0], idx[1], idx[2]),
            AgentKind::Pensieve => cfg.uncoded_action(idx[0]),
        }
    }
}

impl fmt::Display for AgentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AgentKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "nancy" => Ok(AgentKind::Nancy),
            "pensieve" => Ok(AgentKind::Pensieve),
            other => Err(format!("unknown agent kind {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Optimizer {
    /// Plain gradient step.
    Sgd,
    Adam,
}

impl FromStr for Optimizer {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "sgd" => Ok(Optimizer::Sgd),
            "adam" => Ok(Optimizer::Adam),
            other => Err(format!("unknown optimizer {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Actor learning rate.
    pub alpha: f64,
    /// Critic learning rate.
    pub critic_alpha: f64,
    pub beta_start: f64,
    pub beta_end: f64,
    pub gamma: f64,
    pub workers: usize,
    /// Episodes each worker runs per epoch.
    pub episodes_per_worker: usize,
    pub epochs: usize,
    pub seed: u64,
    pub hidden: Vec<usize>,
    pub clip_norm: f64,
    pub optimizer: Optimizer,
    /// Workers apply their own updates as soon as their episode ends.
    pub asynchronous: bool,
    /// Validation period in epochs; 0 disables validation.
    pub validate_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 1e-4,
            critic_alpha: 1e-4,
            beta_start: 3.0,
            beta_end: 0.3,
            gamma: 0.99,
            workers: 8,
            episodes_per_worker: 1,
            epochs: 2000,
            seed: 0,
            hidden: vec![128, 128],
            clip_norm: 5.0,
            optimizer: Optimizer::Adam,
            asynchronous: false,
            validate_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        let bad = |m: &str| Err(AgentError::Config(m.to_string()));
        if !(self.alpha > 0.0 && self.critic_alpha > 0.0) {
            return bad("learning rates must be positive");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must be in (0, 1]");
        }
        if !(self.beta_start >= 0.0 && self.beta_end >= 0.0) {
            return bad("beta must be non-negative");
        }
        if self.workers == 0 || self.episodes_per_worker == 0 {
            return bad("workers and episodes per worker must be positive");
        }
        if !(self.clip_norm > 0.0) {
            return bad("clip norm must be positive");
        }
        Ok(())
    }

    /// Entropy weight for `epoch` (0-based), linear from start to end.
    pub fn beta_at(&self, epoch: usize) -> f64 {
        if self.epochs <= 1 {
            return self.beta_start;
        }
        let t = (epoch.min(self.epochs - 1)) as f64 / (self.epochs - 1) as f64;
        self.beta_start + (self.beta_end - self.beta_start) * t
    }
}

/// One decision: observation, head indices, reward, and whether the episode ended.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub obs: Vec<f64>,
    pub action: Vec<usize>,
    pub reward: f64,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub steps: Vec<Step>,
}

impl Trajectory {
    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct UpdateMetrics {
    pub mean_head_entropy: Vec<f64>,
    pub mean_advantage: f64,
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub actor_grad_norm: f64,
    pub critic_grad_norm: f64,
    pub samples: usize,
}

impl UpdateMetrics {
    pub fn mean_entropy(&self) -> f64 {
        self.mean_head_entropy.iter().sum()
    }
}

/// Turns trajectories into samples: returns are bootstrapped with the critic
/// when a trajectory ends without `done`.
fn build_targets(params: &PolicyParams, batch: &[Trajectory], gamma: f64) -> Result<Vec<(f64, f64)>, AgentError> {
    let mut out = Vec::new();
    for traj in batch {
        let Some(last) = traj.steps.last() else {
            continue;
        };
        if traj.steps.iter().any(|s| !s.reward.is_finite()) {
            return Err(AgentError::NonFiniteGradient);
        }
        let bootstrap = if last.done { 0.0 } else { critic_forward(params, &last.obs)? };
        let rewards: Vec<f64> = traj.steps.iter().map(|s| s.reward).collect();
        for (s, g) in traj.steps.iter().zip(discounted_returns(&rewards, gamma, bootstrap)) {
            let v = critic_forward(params, &s.obs)?;
            out.push((g - v, g));
        }
    }
    Ok(out)
}

/// Gradient step on `-sum A log pi - beta sum H + 1/2 sum (G - V)^2`,
/// with the actor and critic gradients clipped separately.
///
/// Returns the loss metrics and the clipped gradient. The gradient is
/// checked for finiteness before it is returned.
fn batch_gradient(
    params: &PolicyParams,
    batch: &[Trajectory],
    gamma: f64,
    beta: f64,
    clip: f64,
) -> Result<(UpdateMetrics, PolicyParams), AgentError> {
    let targets = build_targets(params, batch, gamma)?;
    if targets.is_empty() {
        return Err(AgentError::EmptyBatch);
    }
    let samples: Vec<Sample<'_>> = batch
        .iter()
        .flat_map(|t| &t.steps)
        .zip(&targets)
        .map(|(s, &(advantage, target))| Sample {
            obs: &s.obs,
            action: &s.action,
            advantage,
            target,
        })
        .collect();
    let weights = LossWeights {
        policy: 1.0,
        entropy: beta,
        critic: 1.0,
    };
    let (terms, mut grads) = gradients(params, &samples, weights)?;
    let n = samples.len() as f64;
    let mut head_entropy = vec![0.0; params.heads.len()];
    for s in &samples {
        let d = actor_forward(params, s.obs)?;
        for (acc, h) in head_entropy.iter_mut().zip(d.head_entropies()) {
            *acc += h / n;
        }
    }
    let actor_count = params.actor_tensor_count();
    let mut tensors = grads.tensors_mut();
    let (actor, critic) = tensors.split_at_mut(actor_count);
    let actor_grad_norm = clip_norm(actor, clip);
    let critic_grad_norm = clip_norm(critic, clip);
    if !actor_grad_norm.is_finite() || !critic_grad_norm.is_finite() {
        return Err(AgentError::NonFiniteGradient);
    }
    let metrics = UpdateMetrics {
        mean_head_entropy: head_entropy,
        mean_advantage: targets.iter().map(|t| t.0).sum::<f64>() / n,
        actor_loss: terms.policy / n,
        critic_loss: terms.critic / n,
        actor_grad_norm,
        critic_grad_norm,
        samples: samples.len(),
    };
    Ok((metrics, grads))
}

/// One plain gradient step. On error the caller's parameters are untouched.
pub fn update(
    params: &PolicyParams,
    batch: &[Trajectory],
    cfg: &TrainConfig,
    beta: f64,
) -> Result<(PolicyParams, UpdateMetrics), AgentError> {
    let (metrics, grads) = batch_gradient(params, batch, cfg.gamma, beta, cfg.clip_norm)?;
    let mut next = params.clone();
    let actor_count = params.actor_tensor_count();
    for (i, (p, g)) in next.tensors_mut().into_iter().zip(grads.tensors()).enumerate() {
        let rate = if i < actor_count { cfg.alpha } else { cfg.critic_alpha };
        p.iter_mut().zip(g).for_each(|(p, g)| *p -= rate * g);
    }
    if !next.is_finite() {
        return Err(AgentError::NonFiniteGradient);
    }
    Ok((next, metrics))
}

/// Parameters plus optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct Learner {
    pub params: PolicyParams,
    optimizer: Optimizer,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl Learner {
    pub fn new(params: PolicyParams, optimizer: Optimizer) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        Self {
            params,
            optimizer,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn update(&mut self, batch: &[Trajectory], cfg: &TrainConfig, beta: f64) -> Result<UpdateMetrics, AgentError> {
        if self.optimizer == Optimizer::Sgd {
            let (next, metrics) = update(&self.params, batch, cfg, beta)?;
            self.params = next;
            return Ok(metrics);
        }
        let (metrics, grads) = batch_gradient(&self.params, batch, cfg.gamma, beta, cfg.clip_norm)?;
        let mut next = self.params.clone();
        let t = (self.step + 1) as f64;
        let c1 = 1.0 - ADAM_BETA1.powf(t);
        let c2 = 1.0 - ADAM_BETA2.powf(t);
        let mut m = self.m.clone();
        let mut v = self.v.clone();
        let actor_count = self.params.actor_tensor_count();
        let tensors = next.tensors_mut().into_iter().zip(grads.tensors()).zip(&mut m).zip(&mut v);
        for (t, (((p, g), m), v)) in tensors.enumerate() {
            let rate = if t < actor_count { cfg.alpha } else { cfg.critic_alpha };
            for i in 0..p.len() {
                m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
                v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
                p[i] -= rate * (m[i] / c1) / ((v[i] / c2).sqrt() + ADAM_EPS);
            }
        }
        if !next.is_finite() {
            return Err(AgentError::NonFiniteGradient);
        }
        self.params = next;
        self.m = m;
        self.v = v;
        self.step += 1;
        Ok(metrics)
    }
}
