//! DQN victims: training with experience replay and a periodically synced
//! target network, greedy inference, evaluation and checkpoints.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::environments::{EnvKind, Environment, Observation};
use crate::error::{check_dim, Error, Result};
use crate::numerics::{
    argmax, max_value, seeded_rng, Activation, Checkpoint, DenseNetwork, Matrix, Optimizer,
    OptimizerKind,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DqnConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub gamma: f64,
    /// Environment steps between target-network syncs.
    pub target_sync_every: usize,
    pub replay_capacity: usize,
    pub training_episodes: usize,
    pub eps_start: f64,
    pub eps_end: f64,
    /// Fraction of the training episodes over which epsilon decays linearly.
    pub eps_decay_fraction: f64,
    /// Transitions gathered before the first gradient step.
    pub learning_starts: usize,
    pub hidden: Vec<usize>,
    pub optimizer: OptimizerKind,
    /// Episodes between validation evaluations.
    pub eval_every: usize,
    pub eval_episodes: usize,
    /// Return the best validated snapshot instead of the final network.
    pub keep_best: bool,
}

impl Default for DqnConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 32,
            gamma: 0.99,
            target_sync_every: 500,
            replay_capacity: 100_000,
            training_episodes: 300,
            eps_start: 1.0,
            eps_end: 0.05,
            eps_decay_fraction: 0.5,
            learning_starts: 1_000,
            hidden: vec![128, 128],
            optimizer: OptimizerKind::Adam,
            eval_every: 10,
            eval_episodes: 5,
            keep_best: true,
        }
    }
}

impl DqnConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("dqn config: {m}")));
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1)");
        }
        if !(self.eps_start >= self.eps_end && self.eps_end >= 0.0 && self.eps_start <= 1.0) {
            return bad("need 1 >= eps_start >= eps_end >= 0");
        }
        if self.batch_size == 0 || self.replay_capacity < self.batch_size {
            return bad("batch size must be positive and fit in the replay buffer");
        }
        if self.target_sync_every == 0 || self.eval_every == 0 || self.eval_episodes == 0 {
            return bad("sync and evaluation periods must be positive");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be finite and non-negative");
        }
        if !(self.eps_decay_fraction > 0.0 && self.eps_decay_fraction <= 1.0) {
            return bad("eps_decay_fraction must lie in (0, 1]");
        }
        Ok(())
    }

    /// Exploration rate for a zero-based training episode.
    pub fn epsilon(&self, episode: usize) -> f64 {
        let horizon = self.eps_decay_fraction * self.training_episodes as f64;
        let progress = if horizon > 0.0 {
            (episode as f64 / horizon).min(1.0)
        } else {
            1.0
        };
        self.eps_start + (self.eps_end - self.eps_start) * progress
    }
}

/// The victim's action-value network.
#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork {
    net: DenseNetwork,
}

impl QNetwork {
    pub fn new(net: DenseNetwork) -> Self {
        Self { net }
    }

    /// `input -> hidden... (relu) -> action_count (identity)`, Xavier init.
    pub fn xavier<R: Rng + ?Sized>(
        input_dim: usize,
        hidden: &[usize],
        action_count: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let dims: Vec<usize> = std::iter::once(input_dim)
            .chain(hidden.iter().copied())
            .chain(std::iter::once(action_count))
            .collect();
        Ok(Self::new(DenseNetwork::xavier(
            &dims,
            Activation::Relu,
            Activation::Identity,
            rng,
        )?))
    }

    pub fn network(&self) -> &DenseNetwork {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut DenseNetwork {
        &mut self.net
    }

    pub fn into_network(self) -> DenseNetwork {
        self.net
    }

    pub fn input_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn action_count(&self) -> usize {
        self.net.output_dim()
    }

    /// Q-vector for one observation.
    pub fn q_values(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.net.forward(x)
    }

    /// Greedy action; ties go to the lowest action index.
    pub fn act_greedy(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.q_values(x)?))
    }
}

/// Bellman backup `r + gamma * max(q_next)`, or `r` at episode end.
pub fn td_target(reward: f64, done: bool, gamma: f64, q_next: &[f64]) -> f64 {
    if done {
        reward
    } else {
        reward + gamma * max_value(q_next)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub done: bool,
}

/// Fixed-capacity ring buffer with uniform sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    items: Vec<Transition>,
    capacity: usize,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidArgument("replay capacity must be positive".into()));
        }
        Ok(Self {
            items: Vec::with_capacity(capacity.min(4096)),
            capacity,
            next: 0,
        })
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
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

    /// Uniform sample with replacement.
    pub fn sample<'a, R: Rng + ?Sized>(&'a self, batch: usize, rng: &mut R) -> Vec<&'a Transition> {
        if self.items.is_empty() {
            return Vec::new();
        }
        (0..batch)
            .map(|_| &self.items[rng.random_range(0..self.items.len())])
            .collect()
    }
}

/// One point of the training curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    /// Number of training episodes completed.
    pub episode: usize,
    pub steps: usize,
    pub eval_return: f64,
}

pub const CURVE_HEADER: &str = "episode,steps,eval_return";

pub fn write_curve_csv<W: Write>(out: &mut W, curve: &[CurvePoint]) -> Result<()> {
    writeln!(out, "{CURVE_HEADER}")?;
    for p in curve {
        writeln!(out, "{},{},{:?}", p.episode, p.steps, p.eval_return)?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainedAgent {
    pub env: EnvKind,
    pub seed: u64,
    pub config: DqnConfig,
    pub qnet: QNetwork,
    pub curve: Vec<CurvePoint>,
    /// Validation return of the returned network (`None` when no
    /// evaluation ran).
    pub final_eval_return: Option<f64>,
}

/// Seeds used while training never collide with small evaluation seeds.
fn training_episode_seed(seed: u64, episode: usize) -> u64 {
    (1u64 << 40) ^ seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ episode as u64
}

fn validation_seed(seed: u64) -> u64 {
    (2u64 << 40) ^ seed.wrapping_mul(0xBF58_476D_1CE4_E5B9)
}

/// Trains a DQN victim on `env`.
pub fn train(env: EnvKind, config: &DqnConfig, seed: u64) -> Result<TrainedAgent> {
    config.validate()?;
    let desc = env.descriptor();
    let mut rng = seeded_rng(seed);
    let mut qnet = QNetwork::xavier(
        desc.observation_len(),
        &config.hidden,
        desc.action_count,
        &mut rng,
    )?;
    let mut target = qnet.clone();
    let mut optimizer = Optimizer::new(config.optimizer, config.learning_rate)?;
    let mut replay = ReplayBuffer::new(config.replay_capacity)?;
    let mut game = env.make();
    let mut curve = Vec::new();
    let mut best: Option<(f64, QNetwork)> = None;
    let mut total_steps = 0usize;
    let warmup = config.learning_starts.max(config.batch_size);

    for episode in 0..config.training_episodes {
        let eps = config.epsilon(episode);
        let mut obs = game.reset(training_episode_seed(seed, episode)).into_pixels();
        loop {
            let action = if rng.random::<f64>() < eps {
                rng.random_range(0..desc.action_count)
            } else {
                qnet.act_greedy(&obs)?
            };
            let step = game.step(action)?;
            let next = step.observation.into_pixels();
            replay.push(Transition {
                state: obs,
                action,
                reward: step.reward,
                next_state: next.clone(),
                done: step.done,
            });
            obs = next;
            total_steps += 1;

            if replay.len() >= warmup {
                let batch = replay.sample(config.batch_size, &mut rng);
                let loss = train_step(&mut qnet, &target, &mut optimizer, &batch, config.gamma)?;
                if !loss.is_finite() {
                    return Err(Error::Divergence(format!(
                        "TD loss became {loss} at step {total_steps}"
                    )));
                }
            }
            if total_steps.is_multiple_of(config.target_sync_every) {
                target = qnet.clone();
            }
            if step.done {
                break;
            }
        }

        let completed = episode + 1;
        if completed % config.eval_every == 0 || completed == config.training_episodes {
            let eval = evaluate(&qnet, env, config.eval_episodes, validation_seed(seed))?;
            curve.push(CurvePoint {
                episode: completed,
                steps: total_steps,
                eval_return: eval.mean_return,
            });
            let improved = best.as_ref().is_none_or(|(b, _)| eval.mean_return > *b);
            if config.keep_best && improved {
                best = Some((eval.mean_return, qnet.clone()));
            }
        }
    }

    let (qnet, final_eval_return) = match best {
        Some((ret, net)) if config.keep_best => (net, Some(ret)),
        _ => {
            let last = curve.last().map(|p| p.eval_return);
            (qnet, last)
        }
    };
    Ok(TrainedAgent {
        env,
        seed,
        config: config.clone(),
        qnet,
        curve,
        final_eval_return,
    })
}

/// One gradient step on the squared TD error; returns the batch loss.
fn train_step(
    qnet: &mut QNetwork,
    target: &QNetwork,
    optimizer: &mut Optimizer,
    batch: &[&Transition],
    gamma: f64,
) -> Result<f64> {
    let states = Matrix::from_rows(&batch.iter().map(|t| &t.state[..]).collect::<Vec<_>>())?;
    let next_states =
        Matrix::from_rows(&batch.iter().map(|t| &t.next_state[..]).collect::<Vec<_>>())?;
    let q_next = target.net.forward_batch(&next_states)?;
    let pass = qnet.net.forward_pass(&states)?;
    let q = pass.output();
    let n = batch.len() as f64;
    let mut upstream = Matrix::zeros(batch.len(), q.cols());
    let mut loss = 0.0;
    for (i, t) in batch.iter().enumerate() {
        let y = td_target(t.reward, t.done, gamma, q_next.row(i));
        let err = q.row(i)[t.action] - y;
        loss += err * err / n;
        upstream.row_mut(i)[t.action] = 2.0 * err / n;
    }
    let grads = qnet
        .net
        .backward(&pass, &upstream, true, false)?
        .params
        .expect("requested parameter gradients");
    if grads.is_finite() {
        optimizer.step(qnet.net.parameters_mut(), &grads.slices())?;
    }
    Ok(loss)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub mean_return: f64,
    pub returns: Vec<f64>,
}

/// Greedy rollouts on seeds `seed, seed + 1, ...`.
pub fn evaluate(qnet: &QNetwork, env: EnvKind, episodes: usize, seed: u64) -> Result<Evaluation> {
    check_dim("q-network input", env.descriptor().observation_len(), qnet.input_dim())?;
    let mut game = env.make();
    let returns = (0..episodes as u64)
        .map(|i| greedy_episode(qnet, game.as_mut(), seed + i))
        .collect::<Result<Vec<_>>>()?;
    let mean_return = if returns.is_empty() {
        0.0
    } else {
        returns.iter().sum::<f64>() / returns.len() as f64
    };
    Ok(Evaluation {
        mean_return,
        returns,
    })
}

fn greedy_episode(qnet: &QNetwork, game: &mut dyn Environment, seed: u64) -> Result<f64> {
    let mut obs: Observation = game.reset(seed);
    let mut ret = 0.0;
    loop {
        let step = game.step(qnet.act_greedy(obs.pixels())?)?;
        ret += step.reward;
        if step.done {
            return Ok(ret);
        }
        obs = step.observation;
    }
}

const AGENT_KIND: &str = "agent";

impl TrainedAgent {
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::new(AGENT_KIND);
        c.push_meta("env", self.env);
        c.push_meta("seed", self.seed);
        if let Some(r) = self.final_eval_return {
            c.push_meta("final_eval_return", format!("{r:?}"));
        }
        let cfg = &self.config;
        c.push_meta("dqn.learning_rate", format!("{:?}", cfg.learning_rate));
        c.push_meta("dqn.batch_size", cfg.batch_size);
        c.push_meta("dqn.gamma", format!("{:?}", cfg.gamma));
        c.push_meta("dqn.target_sync_every", cfg.target_sync_every);
        c.push_meta("dqn.replay_capacity", cfg.replay_capacity);
        c.push_meta("dqn.training_episodes", cfg.training_episodes);
        c.push_meta("dqn.eps_start", format!("{:?}", cfg.eps_start));
        c.push_meta("dqn.eps_end", format!("{:?}", cfg.eps_end));
        c.push_meta("dqn.eps_decay_fraction", format!("{:?}", cfg.eps_decay_fraction));
        c.push_meta("dqn.learning_starts", cfg.learning_starts);
        c.push_meta(
            "dqn.hidden",
            cfg.hidden
                .iter()
                .map(|h| h.to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
        c.push_meta(
            "dqn.optimizer",
            match cfg.optimizer {
                OptimizerKind::Sgd => "sgd",
                OptimizerKind::Adam => "adam",
            },
        );
        c.push_meta("dqn.eval_every", cfg.eval_every);
        c.push_meta("dqn.eval_episodes", cfg.eval_episodes);
        c.push_meta("dqn.keep_best", cfg.keep_best);
        c.push_network("q", self.qnet.network().clone());
        c
    }

    /// Restores an agent. The training curve is not part of the checkpoint.
    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        c.expect_kind(AGENT_KIND)?;
        let hidden = c
            .meta("dqn.hidden")
            .unwrap_or("")
            .split(',')
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse()
                    .map_err(|_| Error::Format(format!("bad hidden width `{s}`")))
            })
            .collect::<Result<Vec<usize>>>()?;
        let optimizer = match c.meta("dqn.optimizer") {
            Some("sgd") => OptimizerKind::Sgd,
            _ => OptimizerKind::Adam,
        };
        let config = DqnConfig {
            learning_rate: c.meta_parse("dqn.learning_rate")?,
            batch_size: c.meta_parse("dqn.batch_size")?,
            gamma: c.meta_parse("dqn.gamma")?,
            target_sync_every: c.meta_parse("dqn.target_sync_every")?,
            replay_capacity: c.meta_parse("dqn.replay_capacity")?,
            training_episodes: c.meta_parse("dqn.training_episodes")?,
            eps_start: c.meta_parse("dqn.eps_start")?,
            eps_end: c.meta_parse("dqn.eps_end")?,
            eps_decay_fraction: c.meta_parse("dqn.eps_decay_fraction")?,
            learning_starts: c.meta_parse("dqn.learning_starts")?,
            hidden,
            optimizer,
            eval_every: c.meta_parse("dqn.eval_every")?,
            eval_episodes: c.meta_parse("dqn.eval_episodes")?,
            keep_best: c.meta_parse("dqn.keep_best")?,
        };
        let env: EnvKind = c
            .meta("env")
            .ok_or_else(|| Error::Format("agent checkpoint is missing `env`".into()))?
            .parse()?;
        let qnet = QNetwork::new(c.require_network("q")?.clone());
        check_dim(
            "agent network input",
            env.descriptor().observation_len(),
            qnet.input_dim(),
        )?;
        Ok(Self {
            env,
            seed: c.meta_parse("seed")?,
            config,
            qnet,
            curve: Vec::new(),
            final_eval_return: c.meta("final_eval_return").map(str::parse).transpose().map_err(
                |_| Error::Format("bad final_eval_return".into()),
            )?,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}
