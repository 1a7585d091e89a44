//! Dueling deep Q-learning against the pump-speed environment.
//!
//! Each training episode draws a fresh demand scenario and its reference
//! solution, then the agent acts ε-greedily. The first `init_steps`
//! transitions only fill the replay memory; after that every environment step
//! is followed by one minibatch update of the online network. The target
//! network is a copy refreshed every `target_sync_every` updates.
//!
//! Every `total_steps / 25` steps the greedy policy is rolled out over the
//! validation scenarios in a separate environment running in inference mode,
//! so validation neither reads reference solutions during the episode nor
//! disturbs the training episode in progress.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use ndarray::Array2;
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::environment::{EnvConfig, EnvError, Environment, Mode};
use crate::neural::{td_step, NeuralError, Optimizer, OptimizerKind, QNetwork, TdBatch};
use crate::rng::{self, Purpose};
use crate::scenario::{ReferenceSolution, Scenario, ScenarioContext, ScenarioError};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("scenario has no reference solution")]
    MissingReference,
    #[error("train log line {line}: {reason}")]
    Log { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub terminal: bool,
}

/// Fixed-capacity FIFO of transitions.
#[derive(Debug, Clone)]
pub struct ReplayMemory {
    capacity: usize,
    items: Vec<Transition>,
    next: usize,
}

impl ReplayMemory {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            items: Vec::with_capacity(capacity.min(1 << 16)),
            next: 0,
        }
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

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    /// Transitions from oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        let split = if self.items.len() < self.capacity { 0 } else { self.next };
        self.items[split..].iter().chain(&self.items[..split])
    }

    /// `n` distinct transitions drawn uniformly.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<&Transition> {
        index::sample(rng, self.items.len(), n.min(self.items.len()))
            .into_iter()
            .map(|i| &self.items[i])
            .collect()
    }
}

pub fn make_batch(samples: &[&Transition]) -> TdBatch {
    let b = samples.len();
    let width = samples.first().map_or(0, |t| t.state.len());
    let mut states = Array2::zeros((b, width));
    let mut next_states = Array2::zeros((b, width));
    for (i, t) in samples.iter().enumerate() {
        states.row_mut(i).assign(&ndarray::ArrayView1::from(&t.state));
        next_states.row_mut(i).assign(&ndarray::ArrayView1::from(&t.next_state));
    }
    TdBatch {
        states,
        actions: samples.iter().map(|t| t.action).collect(),
        rewards: samples.iter().map(|t| t.reward).collect(),
        next_states,
        terminal: samples.iter().map(|t| t.terminal).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub total_steps: usize,
    pub init_steps: usize,
    pub batch_size: usize,
    pub gamma: f64,
    pub learning_rate: f64,
    #[serde(default)]
    pub optimizer: OptimizerKind,
    pub epsilon_start: f64,
    pub hidden: Vec<usize>,
    pub replay_capacity: usize,
    pub target_sync_every: usize,
    /// Validation cadence; `None` means `total_steps / 25`.
    pub validation_every: Option<usize>,
    /// Gradient-norm ceiling; off unless set.
    pub grad_clip: Option<f64>,
}

impl TrainConfig {
    pub fn anytown() -> Self {
        Self {
            total_steps: 50_000,
            init_steps: 1_000,
            batch_size: 8,
            gamma: 0.99,
            learning_rate: 1e-4,
            optimizer: OptimizerKind::Adam,
            epsilon_start: 0.95,
            hidden: vec![48, 32, 12],
            replay_capacity: 25_000,
            target_sync_every: 1_000,
            validation_every: None,
            grad_clip: None,
        }
    }

    pub fn dtown() -> Self {
        Self {
            total_steps: 1_000_000,
            init_steps: 10_000,
            batch_size: 64,
            gamma: 0.9,
            learning_rate: 1e-4,
            optimizer: OptimizerKind::Adam,
            epsilon_start: 0.95,
            hidden: vec![256, 128, 12],
            replay_capacity: 350_000,
            target_sync_every: 1_000,
            validation_every: None,
            grad_clip: None,
        }
    }

    pub fn validation_every(&self) -> usize {
        self.validation_every.unwrap_or(self.total_steps / 25).max(1)
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        let bad = |m: &str| Err(AgentError::InvalidConfig(m.into()));
        if self.init_steps > self.total_steps {
            return bad("init_steps exceeds total_steps");
        }
        if self.batch_size == 0 || self.batch_size > self.replay_capacity {
            return bad("batch_size must lie in 1..=replay_capacity");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if !(self.learning_rate > 0.0) || !(0.0..=1.0).contains(&self.epsilon_start) {
            return bad("learning rate must be positive and epsilon in [0, 1]");
        }
        if self.target_sync_every == 0 {
            return bad("target_sync_every must be positive");
        }
        Ok(())
    }

    /// Linear decay from `epsilon_start` at step 0 to zero at `total_steps`.
    pub fn epsilon(&self, step: usize) -> f64 {
        (self.epsilon_start * (1.0 - step as f64 / self.total_steps as f64)).max(0.0)
    }
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(q: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in q.iter().enumerate() {
        if v > q[best] {
            best = i;
        }
    }
    best
}

/// ε-greedy choice. One uniform number is always drawn for the coin; a second
/// picks the random action when exploring.
pub fn select_action<R: Rng + ?Sized>(
    net: &QNetwork,
    observation: &[f64],
    epsilon: f64,
    rng: &mut R,
) -> Result<usize, NeuralError> {
    if rng.random::<f64>() < epsilon {
        return Ok(rng.random_range(0..net.n_actions()));
    }
    Ok(argmax(&net.forward(observation)?.q))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub value: f64,
    pub reference_value: f64,
    pub value_ratio: f64,
    pub length: usize,
    pub evaluations: usize,
    pub actions: Vec<usize>,
}

/// Greedy rollout in inference mode. The reference is used only for the
/// final ratio.
pub fn run_greedy_episode(
    net: &QNetwork,
    env: &mut Environment<'_>,
    scenario: &Scenario,
) -> Result<EpisodeMetrics, AgentError> {
    let reference = scenario.reference.as_ref().ok_or(AgentError::MissingReference)?;
    let mode = env.config().mode;
    env.set_mode(Mode::Inference);
    let result = (|| {
        let mut obs = env.reset(scenario)?;
        let mut actions = Vec::new();
        loop {
            let a = argmax(&net.forward(&obs)?.q);
            actions.push(a);
            let r = env.step_index(a)?;
            if r.terminal {
                break;
            }
            obs = r.observation;
        }
        let m = env.evaluate_final()?;
        Ok(EpisodeMetrics {
            value: m.value,
            reference_value: reference.value,
            value_ratio: m.value / reference.value,
            length: m.episode_length,
            evaluations: m.evaluations,
            actions,
        })
    })();
    env.set_mode(mode);
    result
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySummary {
    pub mean_value: f64,
    pub mean_value_ratio: f64,
    pub mean_length: f64,
    pub mean_evaluations: f64,
    pub episodes: Vec<EpisodeMetrics>,
}

pub fn evaluate_policy(
    net: &QNetwork,
    env: &mut Environment<'_>,
    scenarios: &[Scenario],
) -> Result<PolicySummary, AgentError> {
    let episodes = scenarios
        .iter()
        .map(|s| run_greedy_episode(net, env, s))
        .collect::<Result<Vec<_>, _>>()?;
    let n = episodes.len().max(1) as f64;
    let mean = |f: &dyn Fn(&EpisodeMetrics) -> f64| episodes.iter().map(f).sum::<f64>() / n;
    Ok(PolicySummary {
        mean_value: mean(&|e| e.value),
        mean_value_ratio: mean(&|e| e.value_ratio),
        mean_length: mean(&|e| e.length as f64),
        mean_evaluations: mean(&|e| e.evaluations as f64),
        episodes,
    })
}

/// One row per environment step.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainLogRow {
    pub step: usize,
    pub episode: usize,
    pub reward: f64,
    /// Undiscounted reward of the current episode up to this step.
    pub episode_reward: f64,
    pub loss: Option<f64>,
    pub epsilon: f64,
    pub val_value_ratio: Option<f64>,
    pub val_episode_len: Option<f64>,
}

pub const TRAINLOG_HEADER: &str = "step,episode,reward,episode_reward,loss,epsilon,val_value_ratio,val_episode_len";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_trainlog<W: Write>(mut w: W, rows: &[TrainLogRow]) -> std::io::Result<()> {
    writeln!(w, "{TRAINLOG_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            r.step,
            r.episode,
            r.reward,
            r.episode_reward,
            opt(r.loss),
            r.epsilon,
            opt(r.val_value_ratio),
            opt(r.val_episode_len)
        )?;
    }
    Ok(())
}

pub fn read_trainlog<R: BufRead>(r: R) -> Result<Vec<TrainLogRow>, AgentError> {
    let mut rows = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let n = i + 1;
        if i == 0 {
            if line.trim() != TRAINLOG_HEADER {
                return Err(AgentError::Log {
                    line: n,
                    reason: "unexpected header".into(),
                });
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 8 {
            return Err(AgentError::Log {
                line: n,
                reason: format!("expected 8 columns, found {}", cols.len()),
            });
        }
        let bad = |c: &str| AgentError::Log {
            line: n,
            reason: format!("bad number `{c}`"),
        };
        let num = |c: &str| c.parse::<f64>().map_err(|_| bad(c));
        let int = |c: &str| c.parse::<usize>().map_err(|_| bad(c));
        let maybe = |c: &str| if c.is_empty() { Ok(None) } else { num(c).map(Some) };
        rows.push(TrainLogRow {
            step: int(cols[0])?,
            episode: int(cols[1])?,
            reward: num(cols[2])?,
            episode_reward: num(cols[3])?,
            loss: maybe(cols[4])?,
            epsilon: num(cols[5])?,
            val_value_ratio: maybe(cols[6])?,
            val_episode_len: maybe(cols[7])?,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationPoint {
    pub step: usize,
    pub mean_value_ratio: f64,
    pub mean_length: f64,
}

pub struct TrainOutcome {
    pub network: QNetwork,
    pub log: Vec<TrainLogRow>,
    pub validations: Vec<ValidationPoint>,
    pub updates: usize,
    pub episodes: usize,
}

/// Called after each validation with the current parameters.
pub type ValidationHook<'h> = &'h mut dyn FnMut(&ValidationPoint, &QNetwork) -> Result<(), AgentError>;

/// Reference solutions keyed by scenario stream id.
#[derive(Debug, Default)]
pub struct ReferenceCache {
    map: HashMap<u64, ReferenceSolution>,
}

impl ReferenceCache {
    pub fn get_or_compute(&mut self, ctx: &ScenarioContext<'_>, master_seed: u64, scenario: &mut Scenario) {
        if scenario.reference.is_some() {
            return;
        }
        let r = self
            .map
            .entry(scenario.seed)
            .or_insert_with(|| ctx.reference_for(scenario, master_seed))
            .clone();
        scenario.reference = Some(r);
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// Trains a fresh network from `seed`.
pub fn train(
    ctx: &ScenarioContext<'_>,
    env_cfg: &EnvConfig,
    validation: &[Scenario],
    cfg: &TrainConfig,
    seed: u64,
    hook: Option<ValidationHook<'_>>,
) -> Result<TrainOutcome, AgentError> {
    let mut init_rng = rng::stream(seed, Purpose::Initialization, 0);
    let net = ctx.solver.network();
    let probe = Environment::new(net, *env_cfg)?;
    let online = QNetwork::init(probe.observation_len(), &cfg.hidden, probe.n_actions(), &mut init_rng);
    drop(probe);
    train_from(ctx, env_cfg, validation, cfg, seed, online, hook)
}

/// Trains starting from the given parameters.
pub fn train_from(
    ctx: &ScenarioContext<'_>,
    env_cfg: &EnvConfig,
    validation: &[Scenario],
    cfg: &TrainConfig,
    seed: u64,
    mut online: QNetwork,
    mut hook: Option<ValidationHook<'_>>,
) -> Result<TrainOutcome, AgentError> {
    cfg.validate()?;
    if validation.is_empty() || validation.iter().any(|s| s.reference.is_none()) {
        return Err(AgentError::InvalidConfig(
            "validation needs at least one scenario, all with references".into(),
        ));
    }
    let net = ctx.solver.network();
    let mut train_cfg = *env_cfg;
    train_cfg.mode = Mode::Training;
    let mut env = Environment::new(net, train_cfg)?;
    let mut eval_env = Environment::new(net, *env_cfg)?;
    let mut target = online.clone();
    let mut optimizer = Optimizer::new(cfg.optimizer, cfg.learning_rate, cfg.grad_clip);
    let mut replay = ReplayMemory::new(cfg.replay_capacity);
    let mut explore = rng::stream(seed, Purpose::Exploration, 0);
    let mut sampler = rng::stream(seed, Purpose::Replay, 0);
    let val_every = cfg.validation_every();

    let mut log = Vec::with_capacity(cfg.total_steps);
    let mut validations = Vec::new();
    let mut updates = 0usize;
    let mut episode = 0usize;
    let mut episode_reward = 0.0;
    let mut obs: Option<Vec<f64>> = None;
    let mut cache = ReferenceCache::default();

    for step in 1..=cfg.total_steps {
        let state = match obs.take() {
            Some(o) => o,
            None => {
                let mut sc = ctx.draw(seed, Purpose::Training, episode, false)?;
                cache.get_or_compute(ctx, seed, &mut sc);
                episode_reward = 0.0;
                env.reset(&sc)?
            }
        };
        let epsilon = cfg.epsilon(step - 1);
        let action = select_action(&online, &state, epsilon, &mut explore)?;
        let out = env.step_index(action)?;
        episode_reward += out.reward;
        replay.push(Transition {
            state,
            action,
            reward: out.reward,
            next_state: out.observation.clone(),
            terminal: out.terminal,
        });

        let mut loss = None;
        if step > cfg.init_steps && replay.len() >= cfg.batch_size {
            let batch = make_batch(&replay.sample(cfg.batch_size, &mut sampler));
            let l = td_step(&mut online, &target, &batch, cfg.gamma, &mut optimizer)?;
            updates += 1;
            if updates.is_multiple_of(cfg.target_sync_every) {
                target = online.clone();
            }
            loss = Some(l);
        }

        let mut row = TrainLogRow {
            step,
            episode,
            reward: out.reward,
            episode_reward,
            loss,
            epsilon,
            val_value_ratio: None,
            val_episode_len: None,
        };
        if out.terminal {
            episode += 1;
        } else {
            obs = Some(out.observation);
        }
        if step % val_every == 0 {
            let summary = evaluate_policy(&online, &mut eval_env, validation)?;
            let point = ValidationPoint {
                step,
                mean_value_ratio: summary.mean_value_ratio,
                mean_length: summary.mean_length,
            };
            row.val_value_ratio = Some(point.mean_value_ratio);
            row.val_episode_len = Some(point.mean_length);
            log::info!(
                "step {step}: validation ratio {:.4}, length {:.2}",
                point.mean_value_ratio,
                point.mean_length
            );
            if let Some(h) = hook.as_mut() {
                h(&point, &online)?;
            }
            validations.push(point);
        }
        log.push(row);
    }
    Ok(TrainOutcome {
        network: online,
        log,
        validations,
        updates,
        episodes: episode,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn t(i: usize) -> Transition {
        Transition {
            state: vec![i as f64],
            action: 0,
            reward: i as f64,
            next_state: vec![i as f64 + 1.0],
            terminal: false,
        }
    }

    #[test]
    fn replay_is_fifo() {
        let mut m = ReplayMemory::new(5);
        for i in 0..8 {
            m.push(t(i));
        }
        assert_eq!(m.len(), 5);
        let rewards: Vec<f64> = m.iter().map(|t| t.reward).collect();
        assert_eq!(rewards, vec![3.0, 4.0, 5.0, 6.0, 7.0]);
    }

    #[test]
    fn sample_without_replacement() {
        let mut m = ReplayMemory::new(10);
        for i in 0..10 {
            m.push(t(i));
        }
        let mut r = stream(1, Purpose::Replay, 0);
        for _ in 0..100 {
            let mut s: Vec<i64> = m.sample(10, &mut r).iter().map(|t| t.reward as i64).collect();
            s.sort();
            assert_eq!(s, (0..10).collect::<Vec<_>>());
        }
    }

    #[test]
    fn argmax_and_ties() {
        assert_eq!(argmax(&[0.1, 0.9, 0.3]), 1);
        assert_eq!(argmax(&[0.5, 0.5, 0.5]), 0);
    }

    #[test]
    fn epsilon_schedule() {
        let c = TrainConfig::anytown();
        assert_eq!(c.epsilon(0), 0.95);
        assert!((c.epsilon(25_000) - 0.475).abs() < 1e-15);
        assert_eq!(c.epsilon(50_000), 0.0);
        assert_eq!(c.validation_every(), 2_000);
    }

    #[test]
    fn trainlog_round_trip() {
        let rows = vec![
            TrainLogRow {
                step: 1,
                episode: 0,
                reward: -1.0,
                episode_reward: -1.0,
                loss: None,
                epsilon: 0.95,
                val_value_ratio: None,
                val_episode_len: None,
            },
            TrainLogRow {
                step: 2,
                episode: 0,
                reward: 0.1 + 0.2,
                episode_reward: -0.7,
                loss: Some(1.0 / 3.0),
                epsilon: 0.949981,
                val_value_ratio: Some(0.987654321),
                val_episode_len: Some(6.5),
            },
        ];
        let mut buf = Vec::new();
        write_trainlog(&mut buf, &rows).unwrap();
        assert_eq!(read_trainlog(buf.as_slice()).unwrap(), rows);
    }
}
