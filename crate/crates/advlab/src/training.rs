//! Desk-scale trainers that produce the policy pool: DQN for value-based
//! deterministic policies and a synchronous advantage policy-gradient
//! trainer for stochastic ones, plus top-performer selection.
//!
//! Both trainers are plain SGD with a fixed step size and are bitwise
//! deterministic given their config seed: weight init, exploration, replay
//! sampling, episode seeds, and evaluation seeds all draw from one seeded
//! stream.

use crate::envs::{EnvConfig, EnvError, Observation, StackedEnv};
use crate::policy::{
    act_greedy, act_stochastic, forward_policy, init_weights, ArchitectureSpec, HeadKind,
    PolicyError, PolicyKind, PolicyNetwork, PolicyOutput, Provenance, TracedWeights, WeightMap,
};
use crate::tensor::{Tape, Tensor, TensorError, VarId};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::sync::Arc;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training diverged at iteration {iteration}: {detail}")]
    Diverged { iteration: usize, detail: String },
    #[error("no training curves supplied")]
    EmptyInput,
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("replay buffer is empty")]
    EmptyBuffer,
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Dqn,
    Pg,
}

impl Algorithm {
    pub const ALL: [Algorithm; 2] = [Algorithm::Dqn, Algorithm::Pg];

    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::Dqn => "dqn",
            Algorithm::Pg => "pg",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Hyperparameters for one training run.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TrainConfig {
    pub algorithm: Algorithm,
    pub seed: u64,
    pub iterations: usize,
    pub steps_per_iteration: usize,
    pub learning_rate: f64,
    pub gamma: f64,
    /// ε-greedy schedule (dqn): linear from start to end over decay steps.
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub epsilon_decay_steps: usize,
    pub batch_size: usize,
    pub replay_capacity: usize,
    /// Collected steps before updates begin (dqn).
    pub warmup_steps: usize,
    /// Environment steps between SGD updates (dqn).
    pub update_every: usize,
    /// Entropy bonus weight (pg).
    pub entropy_weight: f64,
    /// Value-head regression weight (pg).
    pub value_loss_weight: f64,
    /// Rollouts per iteration for the training curve.
    pub eval_rollouts: usize,
}

impl TrainConfig {
    pub fn dqn(seed: u64) -> Self {
        TrainConfig {
            algorithm: Algorithm::Dqn,
            seed,
            iterations: 20,
            steps_per_iteration: 2500,
            learning_rate: 0.01,
            gamma: 0.97,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_steps: 30_000,
            batch_size: 32,
            replay_capacity: 4000,
            warmup_steps: 500,
            update_every: 4,
            entropy_weight: 0.0,
            value_loss_weight: 0.0,
            eval_rollouts: 5,
        }
    }

    pub fn pg(seed: u64) -> Self {
        TrainConfig {
            algorithm: Algorithm::Pg,
            seed,
            iterations: 60,
            steps_per_iteration: 1500,
            learning_rate: 0.02,
            gamma: 0.97,
            epsilon_start: 0.0,
            epsilon_end: 0.0,
            epsilon_decay_steps: 1,
            batch_size: 256,
            replay_capacity: 0,
            warmup_steps: 0,
            update_every: 1,
            entropy_weight: 0.01,
            value_loss_weight: 0.5,
            eval_rollouts: 5,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(TrainError::Config(format!(
                "gamma must be in (0, 1], got {}",
                self.gamma
            )));
        }
        if self.learning_rate <= 0.0 {
            return Err(TrainError::Config("learning rate must be positive".into()));
        }
        if self.epsilon_start < self.epsilon_end {
            return Err(TrainError::Config(
                "exploration schedule must be non-increasing".into(),
            ));
        }
        if self.iterations == 0 || self.steps_per_iteration == 0 || self.batch_size == 0 {
            return Err(TrainError::Config(
                "iterations, steps, and batch size must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Exploration probability after `step` collected environment steps:
/// linear decay from start to end, then the floor.
pub fn exploration_epsilon(config: &TrainConfig, step: usize) -> f64 {
    let decay = config.epsilon_decay_steps.max(1);
    if step >= decay {
        return config.epsilon_end;
    }
    let frac = step as f64 / decay as f64;
    config.epsilon_start + (config.epsilon_end - config.epsilon_start) * frac
}

/// Per-iteration mean evaluation return plus wall-clock seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub mean_return: f64,
    pub wall_secs: f64,
}

/// One entry per completed training iteration.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingCurve {
    pub points: Vec<CurvePoint>,
}

impl TrainingCurve {
    /// Mean return over the last ten iterations (the selection score).
    pub fn score(&self) -> f64 {
        let n = self.points.len().min(10);
        let tail = &self.points[self.points.len() - n..];
        tail.iter().map(|p| p.mean_return).sum::<f64>() / n as f64
    }

    pub fn mean_returns(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.mean_return).collect()
    }
}

/// Keep the curves scoring within 80% of the best (sign-safe: threshold is
/// max − 0.2·|max|), best first, capped.
pub fn select_top_policies(curves: &[TrainingCurve], cap: usize) -> Result<Vec<usize>, TrainError> {
    if curves.is_empty() {
        return Err(TrainError::EmptyInput);
    }
    for (i, curve) in curves.iter().enumerate() {
        if curve.points.len() < 10 {
            return Err(TrainError::Config(format!(
                "curve {i} has {} iterations; selection needs at least 10",
                curve.points.len()
            )));
        }
    }
    let scores: Vec<f64> = curves.iter().map(|c| c.score()).collect();
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let threshold = max - 0.2 * max.abs();
    let mut qualified: Vec<usize> = (0..curves.len())
        .filter(|&i| scores[i] >= threshold)
        .collect();
    qualified.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .expect("finite scores")
            .then(a.cmp(&b))
    });
    qualified.truncate(cap);
    Ok(qualified)
}

/// Builds fresh environment pipelines for a trainer.
pub trait EnvFactory: Sync {
    fn make(&self) -> StackedEnv;
}

impl EnvFactory for EnvConfig {
    fn make(&self) -> StackedEnv {
        self.build()
    }
}

/// Result of one training run.
pub struct TrainOutcome {
    pub policy: PolicyNetwork,
    pub curve: TrainingCurve,
}

// ── Replay buffer ───────────────────────────────────────────────────────

/// One stored interaction. Observations are shared pointers so consecutive
/// transitions do not duplicate their stacked frames.
#[derive(Debug, Clone)]
pub struct Transition {
    pub obs: Arc<Observation>,
    pub action: usize,
    pub reward: f64,
    pub next_obs: Arc<Observation>,
    pub done: bool,
}

/// Ring storage of transitions with uniform with-replacement sampling.
pub struct ReplayBuffer {
    slots: Vec<Transition>,
    capacity: usize,
    cursor: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1);
        ReplayBuffer {
            slots: Vec::with_capacity(capacity),
            capacity,
            cursor: 0,
        }
    }

    /// Insert, overwriting the oldest slot once at capacity.
    pub fn push(&mut self, transition: Transition) {
        if self.slots.len() < self.capacity {
            self.slots.push(transition);
        } else {
            self.slots[self.cursor] = transition;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Uniform sample with replacement over the occupied slots.
    pub fn sample<R: Rng>(&self, batch: usize, rng: &mut R) -> Result<Vec<&Transition>, TrainError> {
        if self.slots.is_empty() {
            return Err(TrainError::EmptyBuffer);
        }
        Ok((0..batch)
            .map(|_| &self.slots[rng.random_range(0..self.slots.len())])
            .collect())
    }
}

// ── Shared helpers ──────────────────────────────────────────────────────

fn derive_default_arch(factory: &dyn EnvFactory, head: HeadKind) -> ArchitectureSpec {
    let env = factory.make();
    ArchitectureSpec::desk_default(env.observation_shape(), env.action_count(), head)
}

fn rebuild(net: &PolicyNetwork, weights: WeightMap) -> Result<PolicyNetwork, PolicyError> {
    PolicyNetwork::new(net.spec().clone(), weights, net.provenance().clone())
}

fn sgd_step(
    weights: &WeightMap,
    grads: &[Option<Tensor>],
    lr: f64,
) -> Result<WeightMap, TensorError> {
    let mut entries = Vec::with_capacity(weights.entries().len());
    for ((name, w), g) in weights.entries().iter().zip(grads) {
        let tensor = match g {
            Some(g) => {
                let data = w
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&w, &g)| w - lr * g)
                    .collect();
                Tensor::from_vec(w.shape().to_vec(), data)?
            }
            None => w.clone(),
        };
        entries.push((name.clone(), tensor));
    }
    Ok(WeightMap::from_entries(entries))
}

fn diverged(iteration: usize, err: impl fmt::Display) -> TrainError {
    TrainError::Diverged {
        iteration,
        detail: err.to_string(),
    }
}

/// Undiscounted return of one evaluation episode, acting greedily for
/// Q-value policies and sampling for stochastic ones.
fn episode_return(net: &PolicyNetwork, env: &mut StackedEnv, seed: u64) -> Result<f64, TrainError> {
    let mut obs = env.reset(seed);
    let mut action_rng = ChaCha8Rng::seed_from_u64(crate::derive_seed(seed, 1));
    let mut total = 0.0;
    loop {
        let action = match net.kind() {
            PolicyKind::QValue => act_greedy(net, &obs)?,
            PolicyKind::Stochastic => act_stochastic(net, &obs, &mut action_rng)?,
        };
        let (next, reward, done) = env.step(action)?;
        total += reward;
        obs = next;
        if done {
            return Ok(total);
        }
    }
}

fn evaluation_mean(
    net: &PolicyNetwork,
    factory: &dyn EnvFactory,
    rollouts: usize,
    rng: &mut ChaCha8Rng,
) -> Result<f64, TrainError> {
    let mut env = factory.make();
    let rollouts = rollouts.max(1);
    let mut total = 0.0;
    for _ in 0..rollouts {
        total += episode_return(net, &mut env, rng.random())?;
    }
    Ok(total / rollouts as f64)
}

fn onehot(index: usize, n: usize) -> Tensor {
    let mut data = vec![0.0; n];
    data[index] = 1.0;
    Tensor::from_vec(vec![n], data).expect("onehot")
}

fn max_q(net: &PolicyNetwork, obs: &Observation) -> Result<f64, PolicyError> {
    match forward_policy(net, obs)? {
        PolicyOutput::Q(q) => Ok(q
            .values()
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max)),
        PolicyOutput::Distribution(_) => Err(PolicyError::WrongKind { expected: "q-value" }),
    }
}

// ── DQN ─────────────────────────────────────────────────────────────────

/// Bootstrap targets r + γ·(1−done)·max_a' Q(s', a'), computed outside the
/// tape so they stay constant under differentiation.
fn dqn_targets(
    net: &PolicyNetwork,
    batch: &[&Transition],
    gamma: f64,
) -> Result<Vec<f64>, PolicyError> {
    batch
        .iter()
        .map(|tr| {
            if tr.done {
                Ok(tr.reward)
            } else {
                Ok(tr.reward + gamma * max_q(net, &tr.next_obs)?)
            }
        })
        .collect()
}

/// Mean squared Bellman error over the batch against fixed targets;
/// returns the loss value and the gradient per weight tensor.
fn dqn_loss_and_grads(
    net: &PolicyNetwork,
    batch: &[&Transition],
    targets: &[f64],
) -> Result<(f64, Vec<Option<Tensor>>), TrainError> {
    let mut tape = Tape::new();
    let weights = TracedWeights::insert(net, &mut tape);
    let actions = net.action_count();
    let mut acc: Option<VarId> = None;
    let map_t = |e: TensorError| TrainError::Policy(e.into());
    for (tr, &target) in batch.iter().zip(targets) {
        let input = tape.leaf(tr.obs.frames().clone());
        let fwd = crate::policy::traced_forward(net.spec(), &weights, &mut tape, input)?;
        let mask = tape.leaf(onehot(tr.action, actions));
        let picked = tape.mul(fwd.logits, mask).map_err(map_t)?;
        let q_sa = tape.sum(picked).map_err(map_t)?;
        let t = tape.leaf(Tensor::scalar(target));
        let diff = tape.sub(q_sa, t).map_err(map_t)?;
        let sq = tape.mul(diff, diff).map_err(map_t)?;
        acc = Some(match acc {
            Some(a) => tape.add(a, sq).map_err(map_t)?,
            None => sq,
        });
    }
    let total = acc.expect("non-empty batch");
    let loss = tape.scale(total, 1.0 / batch.len() as f64).map_err(map_t)?;
    let loss_value = tape.value(loss).item().map_err(map_t)?;
    let grads = tape.backward(loss).map_err(map_t)?;
    let weight_grads = weights
        .vars()
        .iter()
        .map(|&v| grads.wrt(v).cloned())
        .collect();
    Ok((loss_value, weight_grads))
}

/// Train a Q-value policy with ε-greedy exploration and experience replay.
pub fn train_dqn(factory: &dyn EnvFactory, config: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    let arch = derive_default_arch(factory, HeadKind::QValues);
    train_dqn_with_arch(factory, arch, config)
}

pub fn train_dqn_with_arch(
    factory: &dyn EnvFactory,
    arch: ArchitectureSpec,
    config: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    if config.algorithm != Algorithm::Dqn {
        return Err(TrainError::Config("config is not tagged dqn".into()));
    }
    if arch.head != HeadKind::QValues {
        return Err(TrainError::Config("dqn needs a q-value head".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut net = PolicyNetwork::new(
        arch.clone(),
        init_weights(&arch, &mut rng)?,
        Provenance {
            algorithm: Algorithm::Dqn.name().into(),
            seed: config.seed,
            train_return: 0.0,
        },
    )?;
    let actions = net.action_count();

    let mut buffer = ReplayBuffer::new(config.replay_capacity.max(config.batch_size));
    let mut env = factory.make();
    let mut obs = Arc::new(env.reset(rng.random()));
    let mut total_steps = 0usize;
    let mut curve = TrainingCurve::default();

    for iteration in 0..config.iterations {
        let start = Instant::now();
        for _ in 0..config.steps_per_iteration {
            let eps = exploration_epsilon(config, total_steps);
            let action = if rng.random::<f64>() < eps {
                rng.random_range(0..actions)
            } else {
                act_greedy(&net, &obs).map_err(|e| diverged(iteration, e))?
            };
            let (next, reward, done) = env.step(action)?;
            let next = Arc::new(next);
            buffer.push(Transition {
                obs: Arc::clone(&obs),
                action,
                reward,
                next_obs: Arc::clone(&next),
                done,
            });
            obs = if done {
                Arc::new(env.reset(rng.random()))
            } else {
                next
            };
            total_steps += 1;

            if buffer.len() >= config.warmup_steps.max(config.batch_size)
                && total_steps % config.update_every.max(1) == 0
            {
                let batch = buffer.sample(config.batch_size, &mut rng)?;
                let targets =
                    dqn_targets(&net, &batch, config.gamma).map_err(|e| diverged(iteration, e))?;
                let (loss, grads) = dqn_loss_and_grads(&net, &batch, &targets)?;
                if !loss.is_finite() {
                    return Err(diverged(iteration, "non-finite loss"));
                }
                let updated = sgd_step(net.weights(), &grads, config.learning_rate)
                    .map_err(|e| diverged(iteration, e))?;
                net = rebuild(&net, updated).map_err(|e| diverged(iteration, e))?;
            }
        }
        let mean = evaluation_mean(&net, factory, config.eval_rollouts, &mut rng)?;
        curve.points.push(CurvePoint {
            mean_return: mean,
            wall_secs: start.elapsed().as_secs_f64(),
        });
    }

    let provenance = Provenance {
        algorithm: Algorithm::Dqn.name().into(),
        seed: config.seed,
        train_return: curve.score(),
    };
    let policy = PolicyNetwork::new(arch, net.weights().clone(), provenance)?;
    Ok(TrainOutcome { policy, curve })
}

// ── Policy gradient ─────────────────────────────────────────────────────

struct PgSample {
    obs: Arc<Observation>,
    action: usize,
    ret: f64,
}

/// The value head is trainer state only: a dense layer on the policy
/// trunk, regressed to the discounted return. It never becomes part of the
/// returned policy or its checkpoint.
struct ValueHead {
    w: Tensor,
    b: Tensor,
}

impl ValueHead {
    fn init(arch: &ArchitectureSpec, rng: &mut ChaCha8Rng) -> Result<Self, TrainError> {
        let trunk_dim = arch
            .weight_shapes()?
            .iter()
            .rev()
            .find(|(name, _)| name.ends_with(".w"))
            .map(|(_, shape)| shape[1])
            .ok_or_else(|| TrainError::Config("pg needs a final dense layer".into()))?;
        let limit = (6.0 / (trunk_dim + 1) as f64).sqrt();
        let data = (0..trunk_dim)
            .map(|_| rng.random_range(-limit..limit))
            .collect();
        Ok(ValueHead {
            w: Tensor::from_vec(vec![1, trunk_dim], data).expect("value head"),
            b: Tensor::zeros(vec![1, 1]),
        })
    }
}

/// One SGD step on a minibatch: policy term −logπ(a|s)·A with the
/// advantage held constant, entropy bonus, and value regression.
fn pg_update(
    net: &PolicyNetwork,
    vhead: &ValueHead,
    samples: &[PgSample],
    config: &TrainConfig,
) -> Result<(f64, Vec<Option<Tensor>>, Tensor, Tensor), TrainError> {
    let mut tape = Tape::new();
    let weights = TracedWeights::insert(net, &mut tape);
    let vw = tape.leaf(vhead.w.clone());
    let vb = tape.leaf(vhead.b.clone());
    let actions = net.action_count();
    let map_t = |e: TensorError| TrainError::Policy(e.into());

    let mut acc: Option<VarId> = None;
    for sample in samples {
        let input = tape.leaf(sample.obs.frames().clone());
        let fwd = crate::policy::traced_forward(net.spec(), &weights, &mut tape, input)?;

        let v_lin = tape.matmul(vw, fwd.trunk).map_err(map_t)?;
        let v_mat = tape.add(v_lin, vb).map_err(map_t)?;
        let v = tape.reshape(v_mat, vec![1]).map_err(map_t)?;
        let v_value = tape.value(v).item().map_err(map_t)?;
        let advantage = sample.ret - v_value;

        let logp = tape.log_softmax(fwd.logits).map_err(map_t)?;
        let mask = tape.leaf(onehot(sample.action, actions));
        let picked = tape.mul(logp, mask).map_err(map_t)?;
        let log_pi = tape.sum(picked).map_err(map_t)?;
        let pg_term = tape.scale(log_pi, -advantage).map_err(map_t)?;

        // minimizing Σ p·log p maximizes entropy
        let p = tape.softmax(fwd.logits).map_err(map_t)?;
        let plogp = tape.mul(p, logp).map_err(map_t)?;
        let neg_entropy = tape.sum(plogp).map_err(map_t)?;
        let ent_term = tape
            .scale(neg_entropy, config.entropy_weight)
            .map_err(map_t)?;

        let g = tape.leaf(Tensor::scalar(sample.ret));
        let diff = tape.sub(v, g).map_err(map_t)?;
        let sq = tape.mul(diff, diff).map_err(map_t)?;
        let v_term = tape.scale(sq, config.value_loss_weight).map_err(map_t)?;

        let s1 = tape.add(pg_term, ent_term).map_err(map_t)?;
        let sample_loss = tape.add(s1, v_term).map_err(map_t)?;
        acc = Some(match acc {
            Some(a) => tape.add(a, sample_loss).map_err(map_t)?,
            None => sample_loss,
        });
    }
    let total = acc.expect("non-empty minibatch");
    let loss = tape
        .scale(total, 1.0 / samples.len() as f64)
        .map_err(map_t)?;
    let loss_value = tape.value(loss).item().map_err(map_t)?;
    let grads = tape.backward(loss).map_err(map_t)?;

    let weight_grads: Vec<Option<Tensor>> = weights
        .vars()
        .iter()
        .map(|&v| grads.wrt(v).cloned())
        .collect();
    let lr = config.learning_rate;
    let step = |t: &Tensor, g: Option<&Tensor>| -> Result<Tensor, TensorError> {
        match g {
            Some(g) => {
                let data = t
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&w, &gv)| w - lr * gv)
                    .collect();
                Tensor::from_vec(t.shape().to_vec(), data)
            }
            None => Ok(t.clone()),
        }
    };
    let new_vw = step(&vhead.w, grads.wrt(vw)).map_err(map_t)?;
    let new_vb = step(&vhead.b, grads.wrt(vb)).map_err(map_t)?;
    Ok((loss_value, weight_grads, new_vw, new_vb))
}

/// Train a stochastic policy by synchronous advantage policy gradient with
/// a learned value baseline and an entropy bonus.
pub fn train_pg(factory: &dyn EnvFactory, config: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    let arch = derive_default_arch(factory, HeadKind::Distribution);
    train_pg_with_arch(factory, arch, config)
}

pub fn train_pg_with_arch(
    factory: &dyn EnvFactory,
    arch: ArchitectureSpec,
    config: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    if config.algorithm != Algorithm::Pg {
        return Err(TrainError::Config("config is not tagged pg".into()));
    }
    if arch.head != HeadKind::Distribution {
        return Err(TrainError::Config("pg needs a distribution head".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut net = PolicyNetwork::new(
        arch.clone(),
        init_weights(&arch, &mut rng)?,
        Provenance {
            algorithm: Algorithm::Pg.name().into(),
            seed: config.seed,
            train_return: 0.0,
        },
    )?;
    let mut vhead = ValueHead::init(&arch, &mut rng)?;
    let mut env = factory.make();
    let mut curve = TrainingCurve::default();

    for iteration in 0..config.iterations {
        let start = Instant::now();

        // collect whole episodes until the step budget is reached
        let mut samples: Vec<PgSample> = Vec::with_capacity(config.steps_per_iteration);
        while samples.len() < config.steps_per_iteration {
            let mut obs = Arc::new(env.reset(rng.random()));
            let mut episode: Vec<(Arc<Observation>, usize, f64)> = Vec::new();
            loop {
                let action =
                    act_stochastic(&net, &obs, &mut rng).map_err(|e| diverged(iteration, e))?;
                let (next, reward, done) = env.step(action)?;
                episode.push((Arc::clone(&obs), action, reward));
                obs = Arc::new(next);
                if done {
                    break;
                }
            }
            let mut g = 0.0;
            let mut tail = Vec::with_capacity(episode.len());
            for (obs, action, reward) in episode.into_iter().rev() {
                g = reward + config.gamma * g;
                tail.push(PgSample { obs, action, ret: g });
            }
            tail.reverse();
            samples.extend(tail);
        }

        for chunk in samples.chunks(config.batch_size) {
            let (loss, grads, vw, vb) = pg_update(&net, &vhead, chunk, config)?;
            if !loss.is_finite() {
                return Err(diverged(iteration, "non-finite loss"));
            }
            let updated = sgd_step(net.weights(), &grads, config.learning_rate)
                .map_err(|e| diverged(iteration, e))?;
            net = rebuild(&net, updated).map_err(|e| diverged(iteration, e))?;
            vhead = ValueHead { w: vw, b: vb };
        }

        let mean = evaluation_mean(&net, factory, config.eval_rollouts, &mut rng)?;
        curve.points.push(CurvePoint {
            mean_return: mean,
            wall_secs: start.elapsed().as_secs_f64(),
        });
    }

    let provenance = Provenance {
        algorithm: Algorithm::Pg.name().into(),
        seed: config.seed,
        train_return: curve.score(),
    };
    let policy = PolicyNetwork::new(arch, net.weights().clone(), provenance)?;
    Ok(TrainOutcome { policy, curve })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{Environment, Frame, StepResult};
    use crate::policy::Layer;
    use crate::tensor::{finite_difference_gradient, max_relative_error};

    /// One-step environment: a constant frame, rewards fixed per action,
    /// episode ends immediately.
    struct OneStep {
        rewards: Vec<f64>,
        done: bool,
    }

    fn const_frame() -> Frame {
        Frame::from_values(2, 2, vec![0.25; 4])
    }

    impl Environment for OneStep {
        fn reset(&mut self, _seed: u64) -> Frame {
            self.done = false;
            const_frame()
        }

        fn step(&mut self, action: usize) -> Result<StepResult, EnvError> {
            if self.done {
                return Err(EnvError::EpisodeDone);
            }
            if action >= self.rewards.len() {
                return Err(EnvError::InvalidAction {
                    action,
                    count: self.rewards.len(),
                });
            }
            self.done = true;
            Ok(StepResult {
                frame: const_frame(),
                reward: self.rewards[action],
                done: true,
            })
        }

        fn action_count(&self) -> usize {
            self.rewards.len()
        }

        fn frame_shape(&self) -> (usize, usize) {
            (2, 2)
        }

        fn min_return(&self) -> f64 {
            0.0
        }
    }

    struct OneStepFactory {
        rewards: Vec<f64>,
    }

    impl EnvFactory for OneStepFactory {
        fn make(&self) -> StackedEnv {
            StackedEnv::new(
                Box::new(OneStep {
                    rewards: self.rewards.clone(),
                    done: false,
                }),
                1,
                self.rewards.len(),
            )
        }
    }

    fn flat_arch(actions: usize, head: HeadKind) -> ArchitectureSpec {
        ArchitectureSpec {
            input_shape: vec![1, 2, 2],
            layers: vec![
                Layer::Flatten,
                Layer::Dense { units: 8 },
                Layer::Relu,
                Layer::Dense { units: actions },
            ],
            head,
        }
    }

    #[test]
    fn replay_buffer_ring_semantics() {
        let obs = Arc::new(Observation::from_tensor(Tensor::zeros(vec![1, 2, 2])));
        let tr = |r: f64| Transition {
            obs: Arc::clone(&obs),
            action: 0,
            reward: r,
            next_obs: Arc::clone(&obs),
            done: false,
        };
        let mut buffer = ReplayBuffer::new(2);
        buffer.push(tr(1.0));
        buffer.push(tr(2.0));
        buffer.push(tr(3.0));
        assert_eq!(buffer.len(), 2);
        let rewards: Vec<f64> = buffer.slots.iter().map(|t| t.reward).collect();
        assert_eq!(rewards, vec![3.0, 2.0], "oldest slot was overwritten");

        let mut single = ReplayBuffer::new(4);
        single.push(tr(7.0));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let sampled = single.sample(1, &mut rng).unwrap();
        assert_eq!(sampled[0].reward, 7.0);

        let empty = ReplayBuffer::new(4);
        assert!(matches!(
            empty.sample(1, &mut rng),
            Err(TrainError::EmptyBuffer)
        ));
    }

    #[test]
    fn replay_sampling_is_uniform_chi_squared() {
        let obs = Arc::new(Observation::from_tensor(Tensor::zeros(vec![1, 2, 2])));
        let mut buffer = ReplayBuffer::new(10);
        for i in 0..10 {
            buffer.push(Transition {
                obs: Arc::clone(&obs),
                action: i,
                reward: 0.0,
                next_obs: Arc::clone(&obs),
                done: false,
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut counts = [0usize; 10];
        for tr in buffer.sample(10_000, &mut rng).unwrap() {
            counts[tr.action] += 1;
        }
        let expected = 1000.0;
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        // df = 9, p = 0.01 critical value
        assert!(chi2 < 21.666, "chi-squared {chi2}");
    }

    #[test]
    fn exploration_schedule_is_monotone_and_floors() {
        let config = TrainConfig::dqn(0);
        let mut last = f64::INFINITY;
        for step in (0..60_000).step_by(500) {
            let eps = exploration_epsilon(&config, step);
            assert!(eps <= last);
            last = eps;
        }
        assert_eq!(
            exploration_epsilon(&config, config.epsilon_decay_steps),
            config.epsilon_end
        );
        assert_eq!(exploration_epsilon(&config, usize::MAX), config.epsilon_end);
    }

    fn curve_of(score: f64) -> TrainingCurve {
        TrainingCurve {
            points: (0..10)
                .map(|_| CurvePoint {
                    mean_return: score,
                    wall_secs: 0.0,
                })
                .collect(),
        }
    }

    #[test]
    fn top_policy_selection() {
        let curves = vec![curve_of(100.0), curve_of(85.0), curve_of(60.0)];
        assert_eq!(select_top_policies(&curves, 3).unwrap(), vec![0, 1]);

        let single = vec![curve_of(50.0)];
        assert_eq!(select_top_policies(&single, 3).unwrap(), vec![0]);

        // sign-safe rule: −10 < −2 − 0.2·2 = −2.4
        let negative = vec![curve_of(-2.0), curve_of(-10.0)];
        assert_eq!(select_top_policies(&negative, 3).unwrap(), vec![0]);

        assert!(matches!(
            select_top_policies(&[], 3),
            Err(TrainError::EmptyInput)
        ));
    }

    #[test]
    fn dqn_drives_q_to_bellman_fixed_point() {
        let factory = OneStepFactory {
            rewards: vec![1.0, 1.0],
        };
        let config = TrainConfig {
            iterations: 12,
            steps_per_iteration: 150,
            learning_rate: 0.05,
            warmup_steps: 16,
            batch_size: 16,
            update_every: 1,
            eval_rollouts: 2,
            ..TrainConfig::dqn(3)
        };
        let outcome =
            train_dqn_with_arch(&factory, flat_arch(2, HeadKind::QValues), &config).unwrap();
        let mut env = factory.make();
        let obs = env.reset(0);
        match forward_policy(&outcome.policy, &obs).unwrap() {
            PolicyOutput::Q(q) => {
                for &v in q.values() {
                    assert!((v - 1.0).abs() < 1e-3, "Q value {v} should reach 1");
                }
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn dqn_terminal_rewards_learned_exactly() {
        let factory = OneStepFactory {
            rewards: vec![0.25, 0.75],
        };
        let config = TrainConfig {
            iterations: 12,
            steps_per_iteration: 150,
            learning_rate: 0.05,
            warmup_steps: 16,
            batch_size: 16,
            update_every: 1,
            eval_rollouts: 2,
            ..TrainConfig::dqn(4)
        };
        let outcome =
            train_dqn_with_arch(&factory, flat_arch(2, HeadKind::QValues), &config).unwrap();
        let mut env = factory.make();
        let obs = env.reset(0);
        match forward_policy(&outcome.policy, &obs).unwrap() {
            PolicyOutput::Q(q) => {
                assert!((q.values()[0] - 0.25).abs() < 1e-2);
                assert!((q.values()[1] - 0.75).abs() < 1e-2);
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn bootstrap_target_carries_no_gradient() {
        // Autodiff gradients of the batch loss must match finite
        // differences of the loss with the targets held fixed.
        let factory = OneStepFactory {
            rewards: vec![0.5, 1.0],
        };
        let arch = flat_arch(2, HeadKind::QValues);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net = PolicyNetwork::new(
            arch.clone(),
            init_weights(&arch, &mut rng).unwrap(),
            Provenance {
                algorithm: "dqn".into(),
                seed: 9,
                train_return: 0.0,
            },
        )
        .unwrap();

        let mut env = factory.make();
        let obs = Arc::new(env.reset(1));
        let transitions: Vec<Transition> = (0..4)
            .map(|i| Transition {
                obs: Arc::clone(&obs),
                action: i % 2,
                reward: 0.5,
                next_obs: Arc::clone(&obs),
                done: i % 2 == 0,
            })
            .collect();
        let batch: Vec<&Transition> = transitions.iter().collect();
        let targets = dqn_targets(&net, &batch, 0.9).unwrap();
        let (_, grads) = dqn_loss_and_grads(&net, &batch, &targets).unwrap();

        for (slot, (name, base)) in net.weights().entries().iter().enumerate() {
            let fd = finite_difference_gradient(
                |t| {
                    let mut entries = net.weights().entries().to_vec();
                    entries[slot] = (name.clone(), t.clone());
                    let candidate = PolicyNetwork::new(
                        arch.clone(),
                        WeightMap::from_entries(entries),
                        net.provenance().clone(),
                    )
                    .unwrap();
                    dqn_loss_and_grads(&candidate, &batch, &targets).unwrap().0
                },
                base,
                1e-5,
            );
            let ad = grads[slot]
                .clone()
                .unwrap_or_else(|| Tensor::zeros(base.shape().to_vec()));
            let err = max_relative_error(&ad, &fd, 1e-8);
            assert!(err < 1e-4, "{name}: relative error {err}");
        }
    }

    #[test]
    fn pg_solves_two_armed_bandit() {
        let factory = OneStepFactory {
            rewards: vec![0.0, 1.0],
        };
        let config = TrainConfig {
            iterations: 80,
            steps_per_iteration: 64,
            learning_rate: 0.15,
            batch_size: 32,
            entropy_weight: 0.005,
            eval_rollouts: 2,
            ..TrainConfig::pg(7)
        };
        let outcome =
            train_pg_with_arch(&factory, flat_arch(2, HeadKind::Distribution), &config).unwrap();
        let mut env = factory.make();
        let obs = env.reset(0);
        match forward_policy(&outcome.policy, &obs).unwrap() {
            PolicyOutput::Distribution(d) => {
                assert!(
                    d.probs()[1] > 0.95,
                    "better arm probability {}",
                    d.probs()[1]
                );
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn entropy_only_objective_drifts_to_uniform() {
        // zero rewards force the advantage to ~0, leaving only the entropy
        // bonus, whose maximizer is the uniform distribution
        let factory = OneStepFactory {
            rewards: vec![0.0, 0.0, 0.0],
        };
        let config = TrainConfig {
            iterations: 40,
            steps_per_iteration: 32,
            learning_rate: 0.1,
            batch_size: 32,
            entropy_weight: 0.05,
            eval_rollouts: 1,
            ..TrainConfig::pg(11)
        };
        let outcome =
            train_pg_with_arch(&factory, flat_arch(3, HeadKind::Distribution), &config).unwrap();
        let mut env = factory.make();
        let obs = env.reset(0);
        match forward_policy(&outcome.policy, &obs).unwrap() {
            PolicyOutput::Distribution(d) => {
                for &p in d.probs() {
                    assert!(
                        (p - 1.0 / 3.0).abs() < 0.05,
                        "probability {p} far from uniform"
                    );
                }
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn training_runs_are_deterministic() {
        let factory = OneStepFactory {
            rewards: vec![0.0, 1.0],
        };
        let dqn_config = TrainConfig {
            iterations: 3,
            steps_per_iteration: 60,
            warmup_steps: 16,
            batch_size: 16,
            eval_rollouts: 2,
            ..TrainConfig::dqn(5)
        };
        let run =
            || train_dqn_with_arch(&factory, flat_arch(2, HeadKind::QValues), &dqn_config).unwrap();
        let (a, b) = (run(), run());
        assert_eq!(a.curve.mean_returns(), b.curve.mean_returns());
        for ((_, wa), (_, wb)) in a
            .policy
            .weights()
            .entries()
            .iter()
            .zip(b.policy.weights().entries())
        {
            assert_eq!(wa.data(), wb.data());
        }

        let pg_config = TrainConfig {
            iterations: 3,
            steps_per_iteration: 32,
            batch_size: 16,
            eval_rollouts: 2,
            ..TrainConfig::pg(6)
        };
        let run = || {
            train_pg_with_arch(&factory, flat_arch(2, HeadKind::Distribution), &pg_config).unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.curve.mean_returns(), b.curve.mean_returns());
        for ((_, wa), (_, wb)) in a
            .policy
            .weights()
            .entries()
            .iter()
            .zip(b.policy.weights().entries())
        {
            assert_eq!(wa.data(), wb.data());
        }
    }
}
