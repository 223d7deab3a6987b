//! Per-agent learning runtime: replay buffer, epsilon-greedy control, target
//! network and the three deep loss variants.
//!
//! All three algorithms share the squared TD error. PQL adds penalty terms
//! that push down the Q values of unselected actions whose estimates sit
//! close to the maximum, but only when the experience was "significantly
//! good": the gate `C1` fires when reward plus bootstrap exceeds the current
//! maximum Q by more than `t1 = t1_fraction * reward`, and `C2` selects the
//! actions within `t2` of the maximum. The gates and every max term are
//! treated as constants, so gradients flow only through `Q(z, a_t)` in the TD
//! term and through each penalized `Q(z, a')`. HQL instead scales the squared
//! TD error by a degraded rate when the estimate already exceeds the target.

use crate::env::Observation;
use crate::nn::{self, AdamState, DenseNet, Gradients, OutputLoss};
use ndarray::Array2;
use rand::Rng;
use std::collections::VecDeque;

/// One transition. The next observation is carried for generality even
/// though a zero discount never reads it.
#[derive(Debug, Clone, PartialEq)]
pub struct Experience {
    pub obs: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_obs: Vec<f64>,
}

impl Experience {
    pub fn new(obs: &Observation, action: usize, reward: f64, next_obs: &Observation) -> Self {
        Experience { obs: obs.flatten(), action, reward, next_obs: next_obs.flatten() }
    }
}

/// Fixed-capacity ring buffer; oldest experience is evicted first.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    items: VecDeque<Experience>,
    capacity: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0);
        ReplayBuffer { items: VecDeque::with_capacity(capacity), capacity }
    }

    pub fn push(&mut self, e: Experience) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(e);
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn get(&self, i: usize) -> &Experience {
        &self.items[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Experience> {
        self.items.iter()
    }
}

/// Which loss drives the gradient step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LearningRule {
    Iql,
    Pql,
    Hql,
}

/// Learning hyperparameters shared by all rules.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentConfig {
    /// Discount factor.
    pub gamma: f64,
    /// PQL penalty factor.
    pub beta_penalty: f64,
    /// PQL gate threshold as a fraction of the experience reward.
    pub t1_fraction: f64,
    /// PQL closeness threshold on Q gaps.
    pub t2: f64,
    /// Epsilon schedule: max(1 - scale * growth^t, floor).
    pub eps_scale: f64,
    pub eps_growth: f64,
    pub eps_floor: f64,
    /// Copy online -> target every this many training steps.
    pub target_sync_period: u64,
    pub batch_size: usize,
    /// HQL weight on negative-TD samples.
    pub hql_degraded_rate: f64,
    pub replay_capacity: usize,
    pub learning_rate: f64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            gamma: 0.0,
            beta_penalty: 0.05,
            t1_fraction: 0.1,
            t2: 1.0,
            eps_scale: 0.7,
            eps_growth: 1.0005,
            eps_floor: 0.01,
            target_sync_period: 100,
            batch_size: 128,
            hql_degraded_rate: 0.4,
            replay_capacity: 3600,
            learning_rate: 1e-4,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<(), String> {
        let checks = [
            ((0.0..=1.0).contains(&self.gamma), "gamma in [0, 1]"),
            (self.beta_penalty >= 0.0, "beta_penalty >= 0"),
            (self.t2 > 0.0, "t2 > 0"),
            (self.eps_scale >= 0.0, "eps_scale >= 0"),
            (self.eps_growth >= 1.0, "eps_growth >= 1"),
            ((0.0..=1.0).contains(&self.eps_floor), "eps_floor in [0, 1]"),
            (self.target_sync_period >= 1, "target_sync_period >= 1"),
            (self.batch_size >= 1, "batch_size >= 1"),
            (
                self.hql_degraded_rate > 0.0 && self.hql_degraded_rate <= 1.0,
                "hql_degraded_rate in (0, 1]",
            ),
            (self.replay_capacity >= 1, "replay_capacity >= 1"),
            (self.learning_rate > 0.0, "learning_rate > 0"),
        ];
        for (ok, msg) in checks {
            if !ok {
                return Err(msg.to_string());
            }
        }
        Ok(())
    }
}

/// Exploration probability after `t` training steps.
pub fn epsilon(config: &AgentConfig, t: u64) -> f64 {
    (1.0 - config.eps_scale * config.eps_growth.powf(t as f64)).max(config.eps_floor)
}

/// One learning agent: online and target networks, optimizer state and its
/// private replay buffer.
#[derive(Debug, Clone)]
pub struct Agent {
    pub online: DenseNet,
    pub target: DenseNet,
    pub adam: AdamState,
    pub buffer: ReplayBuffer,
    pub config: AgentConfig,
    pub rule: LearningRule,
    pub train_steps: u64,
}

impl Agent {
    /// `widths` is the full chain starting at the input width; the dueling
    /// heads are sized from the last entry and `n_actions`.
    pub fn new<R: Rng>(
        widths: &[usize],
        n_actions: usize,
        config: AgentConfig,
        rule: LearningRule,
        rng: &mut R,
    ) -> Agent {
        let online = nn::init_net(widths, n_actions, rng);
        let target = online.clone();
        let adam = AdamState::new(&online, config.learning_rate);
        let buffer = ReplayBuffer::new(config.replay_capacity);
        Agent { online, target, adam, buffer, config, rule, train_steps: 0 }
    }

    pub fn epsilon(&self) -> f64 {
        epsilon(&self.config, self.train_steps)
    }

    /// Greedy argmax with ties broken by the lowest action index; when
    /// `exploring`, a uniform random action with probability epsilon.
    pub fn select_action<R: Rng>(&self, obs: &Observation, rng: &mut R, exploring: bool) -> usize {
        if exploring && rng.gen::<f64>() < self.epsilon() {
            return rng.gen_range(0..self.online.n_actions());
        }
        argmax(&self.online.forward(&obs.flatten()))
    }

    /// TD error of one experience, bootstrapping from the target network.
    pub fn td_error(&self, e: &Experience) -> f64 {
        let q = self.online.forward(&e.obs);
        let boot = if self.config.gamma == 0.0 {
            0.0
        } else {
            self.config.gamma * max_q(&self.target.forward(&e.next_obs))
        };
        e.reward + boot - q[e.action]
    }

    /// Loss of the agent's configured rule on a batch (value only).
    pub fn loss(&self, batch: &[&Experience]) -> f64 {
        let (x, spec) = self.batch_loss(batch, self.rule);
        nn::loss_value(&self.online, &x.view(), &spec)
    }

    /// Loss and exact parameter gradients of the configured rule on a batch.
    pub fn loss_gradient(&self, batch: &[&Experience]) -> (f64, Gradients) {
        let (x, spec) = self.batch_loss(batch, self.rule);
        nn::loss_gradient(&self.online, &x.view(), &spec)
    }

    /// Assemble the input matrix and the output-space loss for a batch. The
    /// bootstrap terms come from the target network and are constants of the
    /// optimization.
    fn batch_loss(&self, batch: &[&Experience], rule: LearningRule) -> (Array2<f64>, QLoss) {
        assert!(!batch.is_empty(), "empty batch");
        let d = self.online.input_width();
        let mut x = Array2::zeros((batch.len(), d));
        for (mut row, e) in x.axis_iter_mut(ndarray::Axis(0)).zip(batch) {
            assert_eq!(e.obs.len(), d, "observation width mismatch");
            for (dst, &src) in row.iter_mut().zip(&e.obs) {
                *dst = src;
            }
        }
        let bootstrap = if self.config.gamma == 0.0 {
            vec![0.0; batch.len()]
        } else {
            batch
                .iter()
                .map(|e| self.config.gamma * max_q(&self.target.forward(&e.next_obs)))
                .collect()
        };
        let spec = QLoss {
            rule,
            actions: batch.iter().map(|e| e.action).collect(),
            rewards: batch.iter().map(|e| e.reward).collect(),
            bootstrap,
            beta_penalty: self.config.beta_penalty,
            t1_fraction: self.config.t1_fraction,
            t2: self.config.t2,
            hql_degraded_rate: self.config.hql_degraded_rate,
        };
        (x, spec)
    }

    /// One training step: no-op until the buffer holds a full batch, then a
    /// uniform with-replacement mini-batch, one Adam update, and a periodic
    /// target sync.
    pub fn train_step<R: Rng>(&mut self, rng: &mut R) -> bool {
        if self.buffer.len() < self.config.batch_size {
            return false;
        }
        let batch: Vec<&Experience> = (0..self.config.batch_size)
            .map(|_| self.buffer.get(rng.gen_range(0..self.buffer.len())))
            .collect();
        let (x, spec) = self.batch_loss(&batch, self.rule);
        let (_, grads) = nn::loss_gradient(&self.online, &x.view(), &spec);
        nn::adam_step(&mut self.online, &mut self.adam, &grads);
        self.train_steps += 1;
        if self.train_steps % self.config.target_sync_period == 0 {
            self.target = self.online.clone();
        }
        true
    }
}

pub fn argmax(q: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in q.iter().enumerate().skip(1) {
        if v > q[best] {
            best = i;
        }
    }
    best
}

fn max_q(q: &[f64]) -> f64 {
    q.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
}

/// The IQL / PQL / HQL losses expressed at the network outputs.
///
/// Per sample `i` with selected action `a_i`, reward `r_i` and constant
/// bootstrap `boot_i`:
///
/// - IQL: `delta_i^2` with `delta_i = r_i + boot_i - Q(z_i, a_i)`,
/// - HQL: `w * delta_i^2`, `w = 1` if `delta_i > 0` else the degraded rate,
/// - PQL: `delta_i^2 + beta * sum_{a != a_i} C1_i C2_i(a) Q(z_i, a)`.
///
/// The returned loss and gradient are averaged over the batch.
struct QLoss {
    rule: LearningRule,
    actions: Vec<usize>,
    rewards: Vec<f64>,
    bootstrap: Vec<f64>,
    beta_penalty: f64,
    t1_fraction: f64,
    t2: f64,
    hql_degraded_rate: f64,
}

impl OutputLoss for QLoss {
    fn eval(&self, q: &Array2<f64>) -> (f64, Array2<f64>) {
        let b = q.nrows();
        let inv_b = 1.0 / b as f64;
        let mut grad = Array2::zeros(q.raw_dim());
        let mut loss = 0.0;
        for i in 0..b {
            let row = q.row(i);
            let a = self.actions[i];
            let target = self.rewards[i] + self.bootstrap[i];
            let delta = target - row[a];
            match self.rule {
                LearningRule::Iql => {
                    loss += delta * delta * inv_b;
                    grad[[i, a]] = -2.0 * delta * inv_b;
                }
                LearningRule::Hql => {
                    let w = if delta > 0.0 { 1.0 } else { self.hql_degraded_rate };
                    loss += w * delta * delta * inv_b;
                    grad[[i, a]] = -2.0 * w * delta * inv_b;
                }
                LearningRule::Pql => {
                    loss += delta * delta * inv_b;
                    grad[[i, a]] = -2.0 * delta * inv_b;
                    if self.beta_penalty != 0.0 {
                        let max_q = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let significantly_good =
                            target - max_q > self.t1_fraction * self.rewards[i];
                        if significantly_good {
                            for (j, &qa) in row.iter().enumerate() {
                                if j != a && max_q - qa < self.t2 {
                                    loss += self.beta_penalty * qa * inv_b;
                                    grad[[i, j]] += self.beta_penalty * inv_b;
                                }
                            }
                        }
                    }
                }
            }
        }
        (loss, grad)
    }
}

/// IQL loss of a batch under `agent`'s networks: mean squared TD error.
pub fn iql_loss(agent: &Agent, batch: &[&Experience]) -> f64 {
    let (x, spec) = agent.batch_loss(batch, LearningRule::Iql);
    nn::loss_value(&agent.online, &x.view(), &spec)
}

/// PQL loss: mean squared TD error plus the gated penalty terms.
pub fn pql_loss(agent: &Agent, batch: &[&Experience]) -> f64 {
    let (x, spec) = agent.batch_loss(batch, LearningRule::Pql);
    nn::loss_value(&agent.online, &x.view(), &spec)
}

/// HQL loss: squared TD error with the degraded weight on negative errors.
pub fn hql_loss(agent: &Agent, batch: &[&Experience]) -> f64 {
    let (x, spec) = agent.batch_loss(batch, LearningRule::Hql);
    nn::loss_value(&agent.online, &x.view(), &spec)
}
