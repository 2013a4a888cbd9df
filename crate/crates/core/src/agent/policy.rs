use rand::Rng;

use super::net::{log_softmax, trunk_backward, trunk_forward, Dense};
use super::AgentError;

/// Layer sizes shared by the actor and the critic.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetShape {
    pub input: usize,
    pub hidden: Vec<usize>,
    /// One categorical head per action component.
    pub heads: Vec<usize>,
}

/// Actor (trunk + softmax heads) and critic (trunk + scalar head) weights.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub actor_trunk: Vec<Dense>,
    pub heads: Vec<Dense>,
    pub critic_trunk: Vec<Dense>,
    pub value_head: Dense,
}

fn trunk<F: FnMut(usize, usize) -> Dense>(shape: &NetShape, mut make: F) -> Vec<Dense> {
    let mut prev = shape.input;
    shape
        .hidden
        .iter()
        .map(|&h| {
            let l = make(prev, h);
            prev = h;
            l
        })
        .collect()
}

impl PolicyParams {
    pub fn new<R: Rng>(shape: &NetShape, rng: &mut R) -> Self {
        let top = *shape.hidden.last().unwrap_or(&shape.input);
        let actor_trunk = trunk(shape, |i, o| Dense::uniform(i, o, rng));
        let heads = shape.heads.iter().map(|&n| Dense::uniform(top, n, rng)).collect();
        let critic_trunk = trunk(shape, |i, o| Dense::uniform(i, o, rng));
        let value_head = Dense::uniform(top, 1, rng);
        Self {
            actor_trunk,
            heads,
            critic_trunk,
            value_head,
        }
    }

    /// Same shape, all zeros; also used as a gradient accumulator.
    pub fn zeros(shape: &NetShape) -> Self {
        let top = *shape.hidden.last().unwrap_or(&shape.input);
        Self {
            actor_trunk: trunk(shape, Dense::zeros),
            heads: shape.heads.iter().map(|&n| Dense::zeros(top, n)).collect(),
            critic_trunk: trunk(shape, Dense::zeros),
            value_head: Dense::zeros(top, 1),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.shape())
    }

    pub fn shape(&self) -> NetShape {
        NetShape {
            input: self.actor_trunk.first().map_or(self.heads[0].inputs, |l| l.inputs),
            hidden: self.actor_trunk.iter().map(|l| l.outputs).collect(),
            heads: self.heads.iter().map(|h| h.outputs).collect(),
        }
    }

    pub fn input_len(&self) -> usize {
        self.shape().input
    }

    pub fn head_sizes(&self) -> Vec<usize> {
        self.heads.iter().map(|h| h.outputs).collect()
    }

    pub fn actor_layers(&self) -> impl Iterator<Item = &Dense> {
        self.actor_trunk.iter().chain(&self.heads)
    }

    pub fn critic_layers(&self) -> impl Iterator<Item = &Dense> {
        self.critic_trunk.iter().chain(std::iter::once(&self.value_head))
    }

    /// Every weight and bias vector, actor first, in a fixed order.
    pub fn tensors(&self) -> Vec<&[f64]> {
        self.actor_layers()
            .chain(self.critic_layers())
            .flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()])
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.actor_trunk
            .iter_mut()
            .chain(self.heads.iter_mut())
            .chain(self.critic_trunk.iter_mut())
            .chain(std::iter::once(&mut self.value_head))
            .flat_map(|l| [l.weights.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    /// Number of actor tensors at the front of [`tensors`](Self::tensors).
    pub fn actor_tensor_count(&self) -> usize {
        2 * (self.actor_trunk.len() + self.heads.len())
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    fn check_input(&self, obs: &[f64]) -> Result<(), AgentError> {
        let expected = self.input_len();
        if obs.len() != expected {
            return Err(AgentError::ShapeMismatch {
                expected,
                got: obs.len(),
            });
        }
        Ok(())
    }

    fn head_logits(&self, obs: &[f64]) -> (super::net::TrunkTrace, Vec<Vec<f64>>) {
        let trace = trunk_forward(&self.actor_trunk, obs);
        let logits = self.heads.iter().map(|h| h.forward(trace.output())).collect();
        (trace, logits)
    }
}

/// Per-head action distributions.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadDistributions {
    pub log_probs: Vec<Vec<f64>>,
}

impl HeadDistributions {
    pub fn probs(&self) -> Vec<Vec<f64>> {
        self.log_probs
            .iter()
            .map(|lp| lp.iter().map(|v| v.exp()).collect())
            .collect()
    }

    /// Joint log-probability of one index per head.
    pub fn joint_log_prob(&self, action: &[usize]) -> f64 {
        self.log_probs.iter().zip(action).map(|(lp, &a)| lp[a]).sum()
    }

    pub fn head_entropies(&self) -> Vec<f64> {
        self.log_probs.iter().map(|lp| entropy(lp)).collect()
    }

    /// Argmax per head; ties go to the lower index.
    pub fn greedy(&self) -> Vec<usize> {
        self.log_probs
            .iter()
            .map(|lp| {
                let mut best = 0;
                for (i, &v) in lp.iter().enumerate() {
                    if v > lp[best] {
                        best = i;
                    }
                }
                best
            })
            .collect()
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<usize> {
        self.log_probs
            .iter()
            .map(|lp| {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (i, v) in lp.iter().enumerate() {
                    acc += v.exp();
                    if u < acc {
                        return i;
                    }
                }
                lp.len() - 1
            })
            .collect()
    }
}

fn entropy(log_probs: &[f64]) -> f64 {
    -log_probs.iter().map(|&lp| lp.exp() * lp).sum::<f64>()
}

pub fn actor_forward(params: &PolicyParams, obs: &[f64]) -> Result<HeadDistributions, AgentError> {
    params.check_input(obs)?;
    let (_, logits) = params.head_logits(obs);
    Ok(HeadDistributions {
        log_probs: logits.iter().map(|z| log_softmax(z)).collect(),
    })
}

pub fn critic_forward(params: &PolicyParams, obs: &[f64]) -> Result<f64, AgentError> {
    params.check_input(obs)?;
    let trace = trunk_forward(&params.critic_trunk, obs);
    Ok(params.value_head.forward(trace.output())[0])
}

pub fn act_greedy(params: &PolicyParams, obs: &[f64]) -> Result<Vec<usize>, AgentError> {
    Ok(actor_forward(params, obs)?.greedy())
}

/// `G_t = r_t + gamma G_{t+1}` with `G_T = bootstrap`.
pub fn discounted_returns(rewards: &[f64], gamma: f64, bootstrap: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = bootstrap;
    for (o, &r) in out.iter_mut().zip(rewards).rev() {
        acc = r + gamma * acc;
        *o = acc;
    }
    out
}

/// One training sample with its advantage and return target frozen.
#[derive(Debug, Clone, Copy)]
pub struct Sample<'a> {
    pub obs: &'a [f64],
    pub action: &'a [usize],
    pub advantage: f64,
    pub target: f64,
}

/// Weights of the three loss terms in
/// `L = policy * (-sum A log pi) - entropy * sum H + critic * 1/2 sum (G - V)^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub policy: f64,
    pub entropy: f64,
    pub critic: f64,
}

/// Unweighted loss terms summed over samples.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossTerms {
    /// `-sum_t A_t log pi(a_t | s_t)`
    pub policy: f64,
    /// `sum_t sum_heads H`
    pub entropy: f64,
    /// `1/2 sum_t (G_t - V(s_t))^2`
    pub critic: f64,
}

impl LossTerms {
    pub fn weighted(&self, w: LossWeights) -> f64 {
        w.policy * self.policy - w.entropy * self.entropy + w.critic * self.critic
    }
}

/// Loss terms only, for finite-difference checks.
pub fn loss_terms(params: &PolicyParams, samples: &[Sample<'_>]) -> Result<LossTerms, AgentError> {
    let mut terms = LossTerms::default();
    for s in samples {
        let dist = actor_forward(params, s.obs)?;
        terms.policy -= s.advantage * dist.joint_log_prob(s.action);
        terms.entropy += dist.head_entropies().iter().sum::<f64>();
        let v = critic_forward(params, s.obs)?;
        terms.critic += 0.5 * (s.target - v).powi(2);
    }
    Ok(terms)
}

/// Loss terms and the gradient of their weighted sum.
pub fn gradients(
    params: &PolicyParams,
    samples: &[Sample<'_>],
    weights: LossWeights,
) -> Result<(LossTerms, PolicyParams), AgentError> {
    let mut grads = params.zeros_like();
    let mut terms = LossTerms::default();
    for s in samples {
        params.check_input(s.obs)?;
        if s.action.len() != params.heads.len() || s.action.iter().zip(&params.heads).any(|(&a, h)| a >= h.outputs) {
            return Err(AgentError::ShapeMismatch {
                expected: params.heads.len(),
                got: s.action.len(),
            });
        }

        // Actor.
        let (trace, logits) = params.head_logits(s.obs);
        let mut d_trunk = vec![0.0; trace.output().len()];
        for (h, z) in logits.iter().enumerate() {
            let lp = log_softmax(z);
            let ent = entropy(&lp);
            terms.policy -= s.advantage * lp[s.action[h]];
            terms.entropy += ent;
            // dL/dz = w_p A (p - e_a) + w_e p (log p + H)
            let dz: Vec<f64> = lp
                .iter()
                .enumerate()
                .map(|(i, &l)| {
                    let p = l.exp();
                    let onehot = if i == s.action[h] { 1.0 } else { 0.0 };
                    weights.policy * s.advantage * (p - onehot) + weights.entropy * p * (l + ent)
                })
                .collect();
            let dh = params.heads[h].backward(trace.output(), &dz, &mut grads.heads[h]);
            d_trunk.iter_mut().zip(&dh).for_each(|(a, b)| *a += b);
        }
        trunk_backward(&params.actor_trunk, &trace, d_trunk, &mut grads.actor_trunk);

        // Critic.
        let ctrace = trunk_forward(&params.critic_trunk, s.obs);
        let v = params.value_head.forward(ctrace.output())[0];
        terms.critic += 0.5 * (s.target - v).powi(2);
        let dv = weights.critic * (v - s.target);
        let dh = params.value_head.backward(ctrace.output(), &[dv], &mut grads.value_head);
        trunk_backward(&params.critic_trunk, &ctrace, dh, &mut grads.critic_trunk);
    }
    Ok((terms, grads))
}

/// Scales `tensors` in place so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_norm(tensors: &mut [&mut [f64]], max_norm: f64) -> f64 {
    let norm = tensors
        .iter()
        .flat_map(|t| t.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm.is_finite() {
        let s = max_norm / norm;
        tensors.iter_mut().for_each(|t| t.iter_mut().for_each(|v| *v *= s));
    }
    norm
}
