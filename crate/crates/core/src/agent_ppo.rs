//! PPO actor-critic with a tanh-squashed Gaussian policy.
//!
//! The actor outputs the mean of the raw Gaussian; a single global `log_std`
//! sets its spread. Trades are `action_max · tanh(raw)`. Log-probabilities are
//! those of the raw Gaussian.

use std::f64::consts::PI;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::benchmark::ActionRange;
use crate::env::{self, EnvConfig, State, Trader};
use crate::error::{Error, Result};
use crate::nn::{mse_loss, Adam, AdamConfig, Mlp, Mode, Tensor2};
use crate::rng::{self, Rng};
use crate::sim::{MarketParams, MarketPath};
use crate::stats;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpoConfig {
    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub batch_norm: bool,
    /// Weight kept by the running batch-norm statistics per episode.
    pub bn_momentum: f64,
    pub clip_eps: f64,
    /// Weight of the value loss.
    pub c1: f64,
    /// Weight of the entropy bonus.
    pub c2: f64,
    /// Weight of a penalty on the squared pre-squash policy mean.
    pub mean_penalty: f64,
    pub gae_lambda: f64,
    /// `None` uses the environment's ρ.
    pub gae_gamma: Option<f64>,
    pub epochs: usize,
    pub minibatch: usize,
    pub optimizer: AdamConfig,
    pub init_log_std: f64,
    /// Scales the initial weights of the actor's output layer so the
    /// starting policy mean sits near zero, away from tanh saturation.
    pub actor_output_gain: f64,
    pub episode_len: usize,
    /// Multiplies rewards before they reach the learner. `None` lets the
    /// experiment runner pick one from the warm-up benchmark.
    pub reward_scale: Option<f64>,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            actor_hidden: vec![256, 128],
            critic_hidden: vec![256, 128],
            batch_norm: true,
            bn_momentum: 0.99,
            clip_eps: 0.2,
            c1: 0.5,
            c2: 0.01,
            mean_penalty: 0.0,
            gae_lambda: 0.95,
            gae_gamma: None,
            epochs: 3,
            minibatch: 256,
            optimizer: AdamConfig::standard(3e-4),
            init_log_std: 0.0,
            actor_output_gain: 0.01,
            episode_len: 2000,
            reward_scale: None,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip_eps > 0.0) {
            return Err(Error::InvalidParam("clip_eps must be positive".into()));
        }
        if !(self.mean_penalty >= 0.0) {
            return Err(Error::InvalidParam("mean_penalty must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.bn_momentum) {
            return Err(Error::InvalidParam("bn_momentum must lie in [0, 1)".into()));
        }
        if self.epochs == 0 || self.minibatch == 0 || self.episode_len < 2 {
            return Err(Error::InvalidParam("epochs and minibatch must be positive, episodes at least 2 steps".into()));
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) || matches!(self.gae_gamma, Some(g) if !(0.0..=1.0).contains(&g)) {
            return Err(Error::InvalidParam("GAE discount and lambda must lie in [0, 1]".into()));
        }
        if matches!(self.reward_scale, Some(s) if !(s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidParam("reward scale must be positive".into()));
        }
        Ok(())
    }
}

pub fn gaussian_log_prob(x: f64, mean: f64, log_std: f64) -> f64 {
    let z = (x - mean) * (-log_std).exp();
    -0.5 * z * z - log_std - 0.5 * (2.0 * PI).ln()
}

/// Differential entropy `½ log(2πe σ²)` of a Gaussian.
pub fn gaussian_entropy(log_std: f64) -> f64 {
    0.5 * (2.0 * PI * std::f64::consts::E).ln() + log_std
}

/// Truncated generalized advantage estimates and the matching value targets.
/// `values` carries one bootstrap entry past the last reward.
pub fn compute_gae(rewards: &[f64], values: &[f64], gamma: f64, lambda: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = rewards.len();
    if values.len() != n + 1 {
        return Err(Error::Shape(format!("{n} rewards need {} values, got {}", n + 1, values.len())));
    }
    let mut adv = vec![0.0; n];
    let mut acc = 0.0;
    for t in (0..n).rev() {
        let delta = rewards[t] + gamma * values[t + 1] - values[t];
        acc = delta + gamma * lambda * acc;
        adv[t] = acc;
    }
    let targets = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, targets))
}

/// `min(r·A, clip(r, 1-ε, 1+ε)·A)` with `r = exp(new - old)`.
pub fn clipped_surrogate(log_prob_new: f64, log_prob_old: f64, advantage: f64, clip_eps: f64) -> f64 {
    let r = (log_prob_new - log_prob_old).exp();
    (r * advantage).min(r.clamp(1.0 - clip_eps, 1.0 + clip_eps) * advantage)
}

/// Derivative of [`clipped_surrogate`] with respect to `log_prob_new`.
fn clipped_surrogate_grad(log_prob_new: f64, log_prob_old: f64, advantage: f64, clip_eps: f64) -> f64 {
    let r = (log_prob_new - log_prob_old).exp();
    let unclipped = r * advantage;
    if unclipped <= r.clamp(1.0 - clip_eps, 1.0 + clip_eps) * advantage {
        unclipped
    } else {
        0.0
    }
}

/// One collected episode.
#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    /// `T + 1` states; the last one only bootstraps the value.
    pub states: Vec<State>,
    pub raw_actions: Vec<f64>,
    pub log_probs: Vec<f64>,
    /// Scaled rewards as seen by the learner.
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    pub advantages: Vec<f64>,
    pub value_targets: Vec<f64>,
    /// Mean unscaled reward.
    pub mean_reward: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PpoLosses {
    /// `-J_clip`.
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    /// `-J_clip + c1·L_V - c2·H + mean_penalty·mean(μ²)`, the quantity minimized.
    pub total: f64,
}

/// Gradients of [`PpoLosses::total`].
#[derive(Debug, Clone)]
pub struct PpoGrads {
    pub actor: Vec<f64>,
    pub log_std: f64,
    pub critic: Vec<f64>,
}

/// Inputs of one objective evaluation.
#[derive(Debug, Clone)]
pub struct Minibatch {
    pub states: Tensor2,
    pub raw_actions: Vec<f64>,
    pub log_probs_old: Vec<f64>,
    pub advantages: Vec<f64>,
    pub value_targets: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sampled {
    pub action: f64,
    pub raw: f64,
    pub log_prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpoLogRow {
    pub episode: u64,
    pub mean_reward: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub log_std: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PpoAgent {
    pub config: PpoConfig,
    pub actor: Mlp,
    pub critic: Mlp,
    pub log_std: f64,
    pub action_max: f64,
    pub gae_gamma: f64,
    pub reward_scale: f64,
    pub actor_opt: Adam,
    pub log_std_opt: Adam,
    pub critic_opt: Adam,
    pub episodes: u64,
    #[serde(skip, default = "default_rng")]
    rng: Rng,
}

fn default_rng() -> Rng {
    rng::seeded(0)
}

fn state_tensor(states: &[State]) -> Tensor2 {
    let data = states.iter().flat_map(|s| [s.y, s.h_prev]).collect();
    Tensor2 { rows: states.len(), cols: 2, data }
}

impl PpoAgent {
    /// `range` is narrowed to be symmetric so squashed trades always lie in it.
    pub fn new(config: PpoConfig, range: ActionRange, env_rho: f64, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut init = rng::seeded(rng::derive_seed(seed, &[rng::stream::NET_INIT]));
        let sizes = |hidden: &[usize]| {
            let mut s = vec![2];
            s.extend(hidden);
            s.push(1);
            s
        };
        let mut actor = Mlp::new(&sizes(&config.actor_hidden), config.batch_norm, &mut init)?;
        let (w, b) = actor.layer_offsets(config.actor_hidden.len());
        actor.params[w..b].iter_mut().for_each(|p| *p *= config.actor_output_gain);
        let mut critic = Mlp::new(&sizes(&config.critic_hidden), config.batch_norm, &mut init)?;
        for bn in [&mut actor.batch_norm, &mut critic.batch_norm].into_iter().flatten() {
            bn.momentum = config.bn_momentum;
        }
        Ok(PpoAgent {
            actor_opt: Adam::new(config.optimizer, actor.num_params())?,
            log_std_opt: Adam::new(config.optimizer, 1)?,
            critic_opt: Adam::new(config.optimizer, critic.num_params())?,
            log_std: config.init_log_std,
            action_max: (-range.lo).min(range.hi),
            gae_gamma: config.gae_gamma.unwrap_or(env_rho),
            reward_scale: config.reward_scale.unwrap_or(1.0),
            actor,
            critic,
            config,
            episodes: 0,
            rng: rng::seeded(rng::derive_seed(seed, &[rng::stream::EXPLORE])),
        })
    }

    pub fn policy_mean(&self, s: State) -> Result<f64> {
        let out = self.actor.predict(&state_tensor(&[s]))?;
        out.ensure_finite("policy mean")?;
        Ok(out.data[0])
    }

    pub fn value(&self, s: State) -> Result<f64> {
        Ok(self.critic.predict(&state_tensor(&[s]))?.data[0])
    }

    pub fn sample_action(&mut self, s: State, deterministic: bool) -> Result<Sampled> {
        let mean = self.policy_mean(s)?;
        let raw = if deterministic {
            mean
        } else {
            let z: f64 = StandardNormal.sample(&mut self.rng);
            mean + self.log_std.exp() * z
        };
        Ok(Sampled { action: self.action_max * raw.tanh(), raw, log_prob: gaussian_log_prob(raw, mean, self.log_std) })
    }

    /// Plays one episode of `path` with the stochastic policy. Values,
    /// advantages and targets are left for [`PpoAgent::ppo_update`].
    pub fn collect(&mut self, cfg: &EnvConfig, path: &MarketPath) -> Result<Trajectory> {
        let n = self.config.episode_len;
        if path.len() < n + 1 {
            return Err(Error::InvalidParam(format!("path of length {} too short for episode of {n}", path.len())));
        }
        let mut traj = Trajectory::default();
        let mut h = 0.0;
        let mut total = 0.0;
        for t in 0..n {
            let s = cfg.observe(path, t, h);
            let a = self.sample_action(s, false)?;
            let out = env::step(cfg, s, a.action, path.returns[t + 1])?;
            if !out.reward.is_finite() {
                return Err(Error::AgentFault(format!("non-finite reward at t={t} of episode {}", self.episodes)));
            }
            traj.states.push(s);
            traj.raw_actions.push(a.raw);
            traj.log_probs.push(a.log_prob);
            traj.rewards.push(out.reward * self.reward_scale);
            total += out.reward;
            h = out.next_state.h_prev;
        }
        traj.states.push(cfg.observe(path, n, h));
        traj.mean_reward = total / n as f64;
        Ok(traj)
    }

    /// Critic values on every state and the GAE estimates built from them.
    pub fn estimate_advantages(&self, traj: &mut Trajectory) -> Result<()> {
        let values = self.critic.predict(&state_tensor(&traj.states))?;
        values.ensure_finite("critic values")?;
        let (adv, targets) = compute_gae(&traj.rewards, &values.data, self.gae_gamma, self.config.gae_lambda)?;
        traj.values = values.data;
        traj.advantages = adv;
        traj.value_targets = targets;
        Ok(())
    }

    /// Combined objective on a minibatch and its gradients, without touching
    /// any running statistics.
    pub fn objective(&self, mb: &Minibatch, mode: Mode) -> Result<(PpoLosses, PpoGrads)> {
        let n = mb.raw_actions.len();
        let (mu, actor_cache) = self.actor.forward_pure(&mb.states, mode)?;
        let (v, critic_cache) = self.critic.forward_pure(&mb.states, mode)?;
        let inv_var = (-2.0 * self.log_std).exp();
        let eps = self.config.clip_eps;
        let mut surrogate = 0.0;
        let mut d_mu = Tensor2::zeros(n, 1);
        let mut d_log_std = 0.0;
        let c = &self.config;
        let mut mean_sq = 0.0;
        for i in 0..n {
            let diff = mb.raw_actions[i] - mu.data[i];
            let lp = gaussian_log_prob(mb.raw_actions[i], mu.data[i], self.log_std);
            surrogate += clipped_surrogate(lp, mb.log_probs_old[i], mb.advantages[i], eps);
            let g = clipped_surrogate_grad(lp, mb.log_probs_old[i], mb.advantages[i], eps) / n as f64;
            d_mu.data[i] = -g * diff * inv_var + 2.0 * c.mean_penalty * mu.data[i] / n as f64;
            mean_sq += mu.data[i] * mu.data[i] / n as f64;
            d_log_std -= g * (diff * diff * inv_var - 1.0);
        }
        let (value_loss, dv) = mse_loss(&v.data, &mb.value_targets)?;
        let entropy = gaussian_entropy(self.log_std);
        d_log_std -= c.c2;
        let policy_loss = -surrogate / n as f64;
        let dv = Tensor2 { rows: n, cols: 1, data: dv.into_iter().map(|g| c.c1 * g).collect() };
        let (actor, _) = self.actor.backward(&actor_cache, &d_mu)?;
        let (critic, _) = self.critic.backward(&critic_cache, &dv)?;
        let losses = PpoLosses { policy_loss, value_loss, entropy, total: policy_loss + c.c1 * value_loss - c.c2 * entropy + c.mean_penalty * mean_sq };
        Ok((losses, PpoGrads { actor, log_std: d_log_std, critic }))
    }

    /// Up to `epochs` sweeps of shuffled minibatch steps over `traj`. Batch
    /// normalization statistics are refreshed once from the episode, old
    /// log-probabilities recomputed under them, and advantages re-estimated
    /// before every sweep.
    pub fn ppo_update(&mut self, traj: &mut Trajectory) -> Result<PpoLosses> {
        let n = traj.len();
        let all_states = state_tensor(&traj.states[..n]);
        if self.actor.batch_norm.is_some() && n >= 2 {
            self.actor.forward(&all_states, Mode::Train)?;
            self.critic.forward(&state_tensor(&traj.states), Mode::Train)?;
        }
        let mu_old = self.actor.predict(&all_states)?;
        traj.log_probs = (0..n).map(|i| gaussian_log_prob(traj.raw_actions[i], mu_old.data[i], self.log_std)).collect();

        let mut order: Vec<usize> = (0..n).collect();
        let mut sum = PpoLosses::default();
        let mut count = 0usize;
        for _ in 0..self.config.epochs {
            self.estimate_advantages(traj)?;
            let adv = normalized(&traj.advantages);
            order.shuffle(&mut self.rng);
            for chunk in order.chunks(self.config.minibatch) {
                let mb = Minibatch {
                    states: state_tensor(&chunk.iter().map(|&i| traj.states[i]).collect::<Vec<_>>()),
                    raw_actions: chunk.iter().map(|&i| traj.raw_actions[i]).collect(),
                    log_probs_old: chunk.iter().map(|&i| traj.log_probs[i]).collect(),
                    advantages: chunk.iter().map(|&i| adv[i]).collect(),
                    value_targets: chunk.iter().map(|&i| traj.value_targets[i]).collect(),
                };
                let (losses, grads) = self.objective(&mb, Mode::Eval)?;
                self.actor_opt.step(&mut self.actor.params, &grads.actor)?;
                self.critic_opt.step(&mut self.critic.params, &grads.critic)?;
                let mut ls = [self.log_std];
                self.log_std_opt.step(&mut ls, &[grads.log_std])?;
                self.log_std = ls[0];
                sum.policy_loss += losses.policy_loss;
                sum.value_loss += losses.value_loss;
                sum.entropy += losses.entropy;
                sum.total += losses.total;
                count += 1;
            }
        }
        let k = count.max(1) as f64;
        Ok(PpoLosses {
            policy_loss: sum.policy_loss / k,
            value_loss: sum.value_loss / k,
            entropy: sum.entropy / k,
            total: sum.total / k,
        })
    }

    /// One on-policy iteration: collect an episode of `path`, update, discard.
    pub fn train_episode(&mut self, cfg: &EnvConfig, path: &MarketPath) -> Result<PpoLogRow> {
        let mut traj = self.collect(cfg, path)?;
        let losses = self.ppo_update(&mut traj)?;
        self.episodes += 1;
        Ok(PpoLogRow {
            episode: self.episodes,
            mean_reward: traj.mean_reward,
            policy_loss: losses.policy_loss,
            value_loss: losses.value_loss,
            entropy: losses.entropy,
            log_std: self.log_std,
        })
    }

    /// Trains on `episodes` freshly simulated paths seeded from `seed`.
    pub fn collect_and_train(
        &mut self,
        cfg: &EnvConfig,
        market: &MarketParams,
        episodes: usize,
        seed: u64,
    ) -> Result<Vec<PpoLogRow>> {
        let mut log = Vec::with_capacity(episodes);
        for _ in 0..episodes {
            let path_seed = rng::derive_seed(seed, &[rng::stream::EPISODE, self.episodes]);
            let path = market.simulate(self.config.episode_len + 1, path_seed)?;
            log.push(self.train_episode(cfg, &path)?);
        }
        Ok(log)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let agent: PpoAgent = serde_json::from_str(text)?;
        Mlp::from_json(&agent.actor.to_json()?)?;
        Mlp::from_json(&agent.critic.to_json()?)?;
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

/// Zero mean, unit std; left centred but unscaled when all values agree.
fn normalized(xs: &[f64]) -> Vec<f64> {
    let m = stats::mean(xs);
    let sd = stats::std_dev(xs);
    if sd > 1e-12 {
        xs.iter().map(|x| (x - m) / sd).collect()
    } else {
        xs.iter().map(|x| x - m).collect()
    }
}

impl Trader for PpoAgent {
    fn greedy_action(&self, s: State) -> Result<f64> {
        Ok(self.action_max * self.policy_mean(s)?.tanh())
    }
}
