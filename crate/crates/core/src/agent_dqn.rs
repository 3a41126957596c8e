//! Double DQN over the continuous state `(y, h)` with a small discrete set of
//! trades.

use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::agent_q::{action_grid, argmax, EpsilonSchedule, StepLog};
use crate::benchmark::ActionRange;
use crate::env::{self, EnvConfig, State, Trader};
use crate::error::{Error, Result};
use crate::nn::{huber_loss, Adam, AdamConfig, Mlp, Mode, Tensor2};
use crate::rng::{self, Rng};
use crate::sim::MarketPath;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub s: State,
    pub a: usize,
    pub r: f64,
    pub s_next: State,
}

/// Fixed-capacity FIFO experience store with uniform sampling.
#[derive(Debug, Clone, Default)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidParam("replay buffer capacity must be positive".into()));
        }
        Ok(ReplayBuffer { capacity, items: Vec::with_capacity(capacity.min(1 << 20)), next: 0 })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Appends, overwriting the oldest entry once full.
    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
            self.next = (self.next + 1) % self.capacity;
        }
    }

    pub fn get(&self, i: usize) -> &Transition {
        &self.items[i]
    }

    /// Stored transitions from oldest to newest.
    pub fn chronological(&self) -> impl Iterator<Item = &Transition> {
        self.items[self.next..].iter().chain(&self.items[..self.next])
    }

    /// `n` storage indices drawn uniformly with replacement.
    pub fn sample_indices(&self, n: usize, rng: &mut Rng) -> Vec<usize> {
        (0..n).map(|_| rng.random_range(0..self.items.len())).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DqnConfig {
    pub hidden: Vec<usize>,
    pub batch_norm: bool,
    pub batch_size: usize,
    /// Weight kept by the target network at each soft update.
    pub tau: f64,
    pub huber_delta: f64,
    pub optimizer: AdamConfig,
    pub action_half_width: usize,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub epsilon_decay_fraction: f64,
    /// `None` keeps every transition of the run.
    pub buffer_capacity: Option<usize>,
    /// Gradient updates happen every this many environment steps.
    pub train_every: usize,
    /// Multiplies rewards before they enter the buffer. `None` lets the
    /// experiment runner pick one from the warm-up benchmark.
    pub reward_scale: Option<f64>,
    /// Use the online argmax for the bootstrap action. `false` gives the
    /// single-estimator DQN target.
    pub double: bool,
}

impl Default for DqnConfig {
    fn default() -> Self {
        DqnConfig {
            hidden: vec![256, 128],
            batch_norm: true,
            batch_size: 256,
            tau: 0.999,
            huber_delta: 1.0,
            optimizer: AdamConfig::tuned(),
            action_half_width: 2,
            epsilon_start: 1.0,
            epsilon_end: 0.01,
            epsilon_decay_fraction: 0.6,
            buffer_capacity: None,
            train_every: 1,
            reward_scale: None,
            double: true,
        }
    }
}

impl DqnConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::InvalidParam(format!("tau must lie in [0, 1], got {}", self.tau)));
        }
        if self.batch_size == 0 || self.train_every == 0 || self.action_half_width == 0 {
            return Err(Error::InvalidParam("batch size, train_every and action half-width must be positive".into()));
        }
        if !(self.huber_delta > 0.0) {
            return Err(Error::InvalidParam("huber delta must be positive".into()));
        }
        if matches!(self.reward_scale, Some(s) if !(s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidParam("reward scale must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DqnAgent {
    pub config: DqnConfig,
    pub actions: Vec<f64>,
    pub rho: f64,
    pub reward_scale: f64,
    pub online: Mlp,
    pub target: Mlp,
    pub optimizer: Adam,
    pub schedule: EpsilonSchedule,
    pub steps: u64,
    pub updates: u64,
    #[serde(skip)]
    pub buffer: ReplayBuffer,
    #[serde(skip, default = "default_rng")]
    rng: Rng,
}

fn default_rng() -> Rng {
    rng::seeded(0)
}

fn state_tensor<'a>(states: impl ExactSizeIterator<Item = &'a State>) -> Tensor2 {
    let n = states.len();
    let mut data = Vec::with_capacity(2 * n);
    for s in states {
        data.push(s.y);
        data.push(s.h_prev);
    }
    Tensor2 { rows: n, cols: 2, data }
}

impl DqnAgent {
    /// A fresh agent whose ε decays over `total_steps` and whose replay buffer
    /// holds `total_steps` transitions unless configured otherwise.
    pub fn new(
        config: DqnConfig,
        range: ActionRange,
        rho: f64,
        total_steps: u64,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        let actions = action_grid(range, config.action_half_width);
        let mut sizes = vec![2];
        sizes.extend(&config.hidden);
        sizes.push(actions.len());
        let mut init_rng = rng::seeded(rng::derive_seed(seed, &[rng::stream::NET_INIT]));
        let online = Mlp::new(&sizes, config.batch_norm, &mut init_rng)?;
        let target = online.clone();
        let optimizer = Adam::new(config.optimizer, online.num_params())?;
        let schedule = EpsilonSchedule::over(
            config.epsilon_start,
            config.epsilon_end,
            total_steps,
            config.epsilon_decay_fraction,
        );
        let capacity = config.buffer_capacity.unwrap_or(total_steps.max(1) as usize);
        Ok(DqnAgent {
            reward_scale: config.reward_scale.unwrap_or(1.0),
            config,
            actions,
            rho,
            online,
            target,
            optimizer,
            schedule,
            steps: 0,
            updates: 0,
            buffer: ReplayBuffer::new(capacity)?,
            rng: rng::seeded(rng::derive_seed(seed, &[rng::stream::EXPLORE])),
        })
    }

    pub fn greedy_q(&self, s: State) -> Result<Vec<f64>> {
        let out = self.online.predict(&state_tensor([s].iter()))?;
        out.ensure_finite("Q-values")?;
        Ok(out.data)
    }

    /// ε-greedy action index over the online network.
    pub fn act(&mut self, s: State, epsilon: f64) -> Result<usize> {
        if epsilon > 0.0 && self.rng.random::<f64>() < epsilon {
            return Ok(self.rng.random_range(0..self.actions.len()));
        }
        Ok(argmax(&self.greedy_q(s)?))
    }

    /// `r + ρ·Q_target(s', argmax_a Q_online(s', a))` for each transition,
    /// both networks in eval mode.
    pub fn ddqn_target(&self, batch: &[Transition]) -> Result<Vec<f64>> {
        let next = state_tensor(batch.iter().map(|t| &t.s_next));
        let q_target = self.target.predict(&next)?;
        let q_online = if self.config.double { Some(self.online.predict(&next)?) } else { None };
        let targets = batch
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let row = q_target.row(i);
                let a = match &q_online {
                    Some(q) => argmax(q.row(i)),
                    None => argmax(row),
                };
                t.r + self.rho * row[a]
            })
            .collect::<Vec<_>>();
        if targets.iter().any(|v| !v.is_finite()) {
            return Err(Error::non_finite("DDQN target"));
        }
        Ok(targets)
    }

    /// One gradient step on a uniform sample of the buffer followed by the
    /// soft target update. Returns `None` while the buffer is smaller than a
    /// batch.
    pub fn train_step(&mut self) -> Result<Option<f64>> {
        let n = self.config.batch_size;
        if self.buffer.len() < n {
            return Ok(None);
        }
        let idx = self.buffer.sample_indices(n, &mut self.rng);
        let batch: Vec<Transition> = idx.iter().map(|&i| *self.buffer.get(i)).collect();
        let loss = self.fit_batch(&batch)?;
        Ok(Some(loss))
    }

    /// Huber regression of `Q_online(s, a)` on the frozen targets of `batch`.
    pub fn fit_batch(&mut self, batch: &[Transition]) -> Result<f64> {
        let targets = self.ddqn_target(batch)?;
        let x = state_tensor(batch.iter().map(|t| &t.s));
        let mode = if batch.len() >= 2 { Mode::Train } else { Mode::Eval };
        let (out, cache) = self.online.forward(&x, mode)?;
        let na = self.actions.len();
        let pred: Vec<f64> = batch.iter().enumerate().map(|(i, t)| out.data[i * na + t.a]).collect();
        let (loss, g) = huber_loss(&pred, &targets, self.config.huber_delta)?;
        let mut upstream = Tensor2::zeros(batch.len(), na);
        for (i, t) in batch.iter().enumerate() {
            upstream.data[i * na + t.a] = g[i];
        }
        let (grads, _) = self.online.backward(&cache, &upstream)?;
        self.optimizer.step(&mut self.online.params, &grads)?;
        self.target.soft_update_from(&self.online, self.config.tau)?;
        self.updates += 1;
        Ok(loss)
    }

    /// Interacts with `steps` consecutive transitions of `path` from time
    /// `start`, storing experience and training as configured.
    pub fn train_on_path(
        &mut self,
        cfg: &EnvConfig,
        path: &MarketPath,
        start: usize,
        steps: usize,
        h: &mut f64,
    ) -> Result<Vec<StepLog>> {
        if start + steps + 1 > path.len() {
            return Err(Error::InvalidParam("training path too short".into()));
        }
        let mut log = Vec::new();
        for t in start..start + steps {
            let s = cfg.observe(path, t, *h);
            let eps = self.schedule.value(self.steps);
            let a = self.act(s, eps)?;
            let out = env::step(cfg, s, self.actions[a], path.returns[t + 1])?;
            *h = out.next_state.h_prev;
            let s_next = cfg.observe(path, t + 1, *h);
            self.buffer.push(Transition { s, a, r: out.reward * self.reward_scale, s_next });
            self.steps += 1;
            if self.steps % self.config.train_every as u64 == 0 {
                if let Some(loss) = self.train_step()? {
                    log.push(StepLog { step: self.steps, loss, epsilon: eps, lr: self.optimizer.current_lr() });
                }
            }
        }
        Ok(log)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut agent: DqnAgent = serde_json::from_str(text)?;
        agent.online = Mlp::from_json(&agent.online.to_json()?)?;
        if agent.online.layer_sizes != agent.target.layer_sizes || agent.online.output_size() != agent.actions.len() {
            return Err(Error::Shape("checkpoint networks do not match the action set".into()));
        }
        agent.buffer = ReplayBuffer::new(agent.config.buffer_capacity.unwrap_or(1).max(1))?;
        Ok(agent)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

impl Trader for DqnAgent {
    fn greedy_action(&self, s: State) -> Result<f64> {
        Ok(self.actions[argmax(&self.greedy_q(s)?)])
    }
}
