use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::policy::{actor_forward, PolicyParams};
use super::{AgentError, AgentKind, Learner, Step, TrainConfig, Trajectory};
use crate::par::map_ordered;
use crate::qoe::QoeParams;
use crate::sim::{ChannelMode, Session, SimConfig, Trace, VideoManifest};

/// Everything needed to run episodes.
#[derive(Debug, Clone)]
pub struct TrainEnv {
    pub sim: SimConfig,
    pub manifest: VideoManifest,
    pub qoe: QoeParams,
    pub traces: Vec<Trace>,
    /// Loss ratios drawn uniformly per training episode.
    pub loss_set: Vec<f64>,
    /// Fixed greedy episodes used to pick the best parameters.
    pub validation: Vec<EpisodeSpec>,
    pub kind: AgentKind,
}

/// Trace index, loss ratio and session seed of one episode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeSpec {
    pub trace: usize,
    pub loss: f64,
    pub seed: u64,
}

/// How actions are chosen during an episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rollout {
    Sample { seed: u64 },
    Greedy,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    /// 1-based.
    pub epoch: usize,
    pub mean_reward: f64,
    /// Sum over heads of the per-head mean entropy.
    pub mean_entropy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainResult {
    pub params: PolicyParams,
    pub curve: Vec<CurvePoint>,
    pub best_validation: Option<f64>,
    /// Epoch at which the returned parameters were current; 0 means initial.
    pub best_epoch: usize,
}

impl TrainEnv {
    /// Spreads `count` validation episodes over the traces and loss set.
    pub fn spread_validation(&mut self, count: usize, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.validation = (0..count)
            .map(|i| EpisodeSpec {
                trace: i % self.traces.len().max(1),
                loss: self.loss_set[(i * 7) % self.loss_set.len().max(1)],
                seed: rng.random(),
            })
            .collect();
    }

    fn validate(&self) -> Result<(), AgentError> {
        if self.traces.is_empty() {
            return Err(AgentError::Config("no training traces".into()));
        }
        if self.loss_set.is_empty() || self.loss_set.iter().any(|p| !(0.0..1.0).contains(p)) {
            return Err(AgentError::Config("loss set must be non-empty ratios in [0, 1)".into()));
        }
        if self.validation.iter().any(|v| v.trace >= self.traces.len()) {
            return Err(AgentError::Config("validation episode refers to a missing trace".into()));
        }
        Ok(())
    }

    fn draw_spec<R: Rng>(&self, rng: &mut R) -> EpisodeSpec {
        EpisodeSpec {
            trace: rng.random_range(0..self.traces.len()),
            loss: self.loss_set[rng.random_range(0..self.loss_set.len())],
            seed: rng.random(),
        }
    }
}

/// Runs one full episode and records every decision.
pub fn run_episode(
    env: &TrainEnv,
    params: &PolicyParams,
    spec: EpisodeSpec,
    rollout: Rollout,
) -> Result<Trajectory, AgentError> {
    let trace = env.traces[spec.trace].with_loss(spec.loss);
    let mut session = Session::new(&env.sim, &env.manifest, &trace, &env.qoe, spec.seed, ChannelMode::Coded)?;
    let mut rng = match rollout {
        Rollout::Sample { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
        Rollout::Greedy => None,
    };
    let mut traj = Trajectory::default();
    let mut obs = session.observation().0;
    while !session.done() {
        let dist = actor_forward(params, &obs)?;
        let idx = match rng.as_mut() {
            Some(r) => dist.sample(r),
            None => dist.greedy(),
        };
        let out = session.step(env.kind.to_action(&env.sim, &idx))?;
        traj.steps.push(Step {
            obs,
            action: idx,
            reward: out.reward,
            done: out.done,
        });
        obs = out.observation.0;
    }
    Ok(traj)
}

/// Mean greedy episode reward over `specs`.
pub fn evaluate_greedy(env: &TrainEnv, params: &PolicyParams, specs: &[EpisodeSpec]) -> Result<f64, AgentError> {
    let totals = map_ordered(specs, |&s| run_episode(env, params, s, Rollout::Greedy).map(|t| t.total_reward()))?;
    Ok(totals.iter().sum::<f64>() / totals.len().max(1) as f64)
}

/// Trains an actor-critic agent.
///
/// Each epoch, every worker runs `episodes_per_worker` sampled episodes on
/// randomly drawn (trace, loss, seed) triples. In synchronous mode all
/// trajectories form one batch and one update; in asynchronous mode each
/// worker snapshots the parameters, runs its episodes and applies its own
/// update under a lock. Episode draws depend only on the seed, so
/// synchronous training is reproducible regardless of thread count.
pub fn train(env: &TrainEnv, cfg: &TrainConfig, init: PolicyParams) -> Result<TrainResult, AgentError> {
    cfg.validate()?;
    env.validate()?;
    let expected = env.kind.net_shape(&env.sim, &cfg.hidden);
    if init.shape() != expected {
        return Err(AgentError::ShapeMismatch {
            expected: expected.input,
            got: init.input_len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut learner = Learner::new(init.clone(), cfg.optimizer);
    let mut curve = Vec::with_capacity(cfg.epochs);
    let validating = cfg.validate_every > 0 && !env.validation.is_empty();
    let mut best = if validating {
        Some((evaluate_greedy(env, &init, &env.validation)?, 0usize, init))
    } else {
        None
    };

    for epoch in 0..cfg.epochs {
        let beta = cfg.beta_at(epoch);
        let jobs: Vec<Vec<(EpisodeSpec, u64)>> = (0..cfg.workers)
            .map(|_| {
                (0..cfg.episodes_per_worker)
                    .map(|_| (env.draw_spec(&mut rng), rng.random()))
                    .collect()
            })
            .collect();

        let (rewards, entropy) = if cfg.asynchronous {
            let shared = Mutex::new((&mut learner, 0.0f64, 0usize));
            let totals = map_ordered(&jobs, |job| {
                let snapshot = shared.lock().expect("poisoned").0.params.clone();
                let batch = job
                    .iter()
                    .map(|&(spec, seed)| run_episode(env, &snapshot, spec, Rollout::Sample { seed }))
                    .collect::<Result<Vec<_>, _>>()?;
                let mut guard = shared.lock().expect("poisoned");
                let m = guard.0.update(&batch, cfg, beta)?;
                guard.1 += m.mean_entropy();
                guard.2 += 1;
                Ok::<_, AgentError>(batch.iter().map(Trajectory::total_reward).collect::<Vec<_>>())
            })?;
            let (_, ent, n) = shared.into_inner().expect("poisoned");
            (totals.concat(), ent / n.max(1) as f64)
        } else {
            let snapshot = &learner.params;
            let flat: Vec<(EpisodeSpec, u64)> = jobs.concat();
            let batch = map_ordered(&flat, |&(spec, seed)| run_episode(env, snapshot, spec, Rollout::Sample { seed }))?;
            let m = learner.update(&batch, cfg, beta)?;
            (batch.iter().map(Trajectory::total_reward).collect(), m.mean_entropy())
        };
        curve.push(CurvePoint {
            epoch: epoch + 1,
            mean_reward: rewards.iter().sum::<f64>() / rewards.len() as f64,
            mean_entropy: entropy,
        });

        let last = epoch + 1 == cfg.epochs;
        if validating && ((epoch + 1) % cfg.validate_every == 0 || last) {
            let score = evaluate_greedy(env, &learner.params, &env.validation)?;
            let (best_score, _, _) = best.as_ref().expect("validating");
            if score > *best_score {
                best = Some((score, epoch + 1, learner.params.clone()));
            }
        }
    }

    Ok(match best {
        Some((score, epoch, params)) => TrainResult {
            params,
            curve,
            best_validation: Some(score),
            best_epoch: epoch,
        },
        None => TrainResult {
            params: learner.params,
            curve,
            best_validation: None,
            best_epoch: cfg.epochs,
        },
    })
}
