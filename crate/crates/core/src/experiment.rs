//! Experiment orchestration: configuration, seeded multi-agent training with
//! periodic out-of-sample evaluation, and persistence of every artifact.
//!
//! A run directory looks like
//!
//! ```text
//! config.json            fully materialized configuration
//! manifest.json          config hash, seeds, action range, agent status
//! benchmark/model.json   fitted benchmark model
//! benchmark/final_test_<j>.csv
//! evaluations.csv        one row per (agent, checkpoint, test)
//! checkpoints.csv        one row per (agent, checkpoint), averaged over tests
//! agent_<i>/train_log.csv
//! agent_<i>/policy_slice.csv
//! agent_<i>/final_test_<j>.csv
//! agent_<i>/ckpt_<step>/...
//! ```

use std::fmt::Write as _;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agent_dqn::{DqnAgent, DqnConfig};
use crate::agent_ppo::{PpoAgent, PpoConfig, PpoLogRow};
use crate::agent_q::{QAgent, QConfig, StepLog};
use crate::benchmark::{self, ActionRange, EstimatedModel, GpPolicy};
use crate::env::{self, EnvConfig, Greedy, Observe, State, Trader};
use crate::error::{Error, Result};
use crate::eval::{self, PerfSeries};
use crate::rng::{self, stream};
use crate::sim::{FactorModelParams, MarketParams, MarketPath};
use crate::stats;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvSpec {
    pub gamma: f64,
    pub lambda: f64,
    /// Bootstrap discount of the learning agents.
    pub rho: f64,
    pub r_f: f64,
    pub observe: Observe,
}

impl Default for EnvSpec {
    fn default() -> Self {
        EnvSpec { gamma: 0.01, lambda: 1e-3, rho: 0.9, r_f: 0.0, observe: Observe::Returns }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AgentSpec {
    Q(QConfig),
    Dqn(DqnConfig),
    Ppo(PpoConfig),
}

impl AgentSpec {
    pub fn name(&self) -> &'static str {
        match self {
            AgentSpec::Q(_) => "q",
            AgentSpec::Dqn(_) => "dqn",
            AgentSpec::Ppo(_) => "ppo",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchmarkKind {
    /// Fully informed when the market has factors, partially informed otherwise.
    #[default]
    Auto,
    FullyInformed,
    PartiallyInformed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkSpec {
    pub kind: BenchmarkKind,
    /// Steps of the warm-up path used to fit the model and size the actions.
    pub fit_window: usize,
    pub candidate_lags: Vec<usize>,
    pub action_quantiles: (f64, f64),
}

impl Default for BenchmarkSpec {
    fn default() -> Self {
        BenchmarkSpec {
            kind: BenchmarkKind::Auto,
            fit_window: 10_000,
            candidate_lags: (1..=10).collect(),
            action_quantiles: (0.001, 0.999),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeepCheckpoints {
    #[default]
    All,
    Final,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Schedule {
    /// Training steps for the tabular and DQN agents.
    pub t_in: usize,
    /// Length of each out-of-sample test path.
    pub t_out: usize,
    /// Steps between evaluations (tabular and DQN).
    pub eval_every: usize,
    /// Training episodes for PPO.
    pub episodes: usize,
    /// Episodes between evaluations (PPO).
    pub eval_every_episodes: usize,
    pub num_agents: usize,
    pub num_oos_tests: usize,
    /// Training-log rows average over this many updates.
    pub log_every: usize,
    pub keep_checkpoints: KeepCheckpoints,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule {
            t_in: 300_000,
            t_out: 5_000,
            eval_every: 10_000,
            episodes: 300,
            eval_every_episodes: 10,
            num_agents: 20,
            num_oos_tests: 10,
            log_every: 100,
            keep_checkpoints: KeepCheckpoints::All,
        }
    }
}

/// Deliberately breaks one agent; used to exercise fault isolation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultInjection {
    pub agent: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: u64,
    pub market: MarketParams,
    pub env: EnvSpec,
    pub agent: AgentSpec,
    pub benchmark: BenchmarkSpec,
    pub schedule: Schedule,
    pub output_dir: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fault_injection: Option<FaultInjection>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: "experiment".into(),
            seed: 1,
            market: MarketParams::Factor(FactorModelParams::single(0.00535, 350.0, 0.2, 0.01)),
            env: EnvSpec::default(),
            agent: AgentSpec::Dqn(DqnConfig::default()),
            benchmark: BenchmarkSpec::default(),
            schedule: Schedule::default(),
            output_dir: None,
            fault_injection: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Pretty JSON with every default written out.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// SHA-256 of the canonical serialization: formatting and omitted
    /// defaults in the source file do not matter, any field change does.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |e: Error| Error::Config(e.to_string());
        self.market.validate().map_err(cfg_err)?;
        let s = &self.schedule;
        if s.num_agents == 0 || s.num_oos_tests == 0 || s.t_out < 2 {
            return Err(Error::Config("need at least one agent, one test and t_out >= 2".into()));
        }
        if s.eval_every == 0 || s.eval_every_episodes == 0 || s.log_every == 0 {
            return Err(Error::Config("evaluation and logging intervals must be positive".into()));
        }
        let (q_lo, q_hi) = self.benchmark.action_quantiles;
        if !(0.0 <= q_lo && q_lo < q_hi && q_hi <= 1.0) {
            return Err(Error::Config("action quantiles must satisfy 0 <= lo < hi <= 1".into()));
        }
        if self.benchmark.fit_window < 1000 {
            return Err(Error::Config("benchmark fit window must be at least 1000 steps".into()));
        }
        let has_factors = matches!(self.market, MarketParams::Factor(_));
        if self.benchmark.kind == BenchmarkKind::FullyInformed && !has_factors {
            return Err(Error::Config("a fully informed benchmark needs a factor market".into()));
        }
        if self.env.observe == Observe::Factor {
            match &self.market {
                MarketParams::Factor(p) if p.num_factors() == 1 => {}
                _ => return Err(Error::Config("observing the factor needs a one-factor market".into())),
            }
        }
        let env = EnvConfig {
            gamma: self.env.gamma,
            lambda: self.env.lambda,
            sigma_sq: self.market.noise_variance(),
            rho: self.env.rho,
            r_f: self.env.r_f,
            episode_len: s.t_out,
            action_range: None,
            observe: self.env.observe,
        };
        env.validate().map_err(cfg_err)?;
        match &self.agent {
            AgentSpec::Q(_) => Ok(()),
            AgentSpec::Dqn(c) => c.validate().map_err(cfg_err),
            AgentSpec::Ppo(c) => c.validate().map_err(cfg_err),
        }
    }

    fn env_config(&self, action_range: Option<ActionRange>) -> EnvConfig {
        EnvConfig {
            gamma: self.env.gamma,
            lambda: self.env.lambda,
            sigma_sq: self.market.noise_variance(),
            rho: self.env.rho,
            r_f: self.env.r_f,
            episode_len: self.schedule.t_out,
            action_range,
            observe: self.env.observe,
        }
    }

    /// Training progress (steps or episodes) at which agents are evaluated,
    /// starting with the untrained agent.
    pub fn checkpoints(&self) -> Vec<usize> {
        let (total, every) = match self.agent {
            AgentSpec::Ppo(_) => (self.schedule.episodes, self.schedule.eval_every_episodes),
            _ => (self.schedule.t_in, self.schedule.eval_every),
        };
        let mut out: Vec<usize> = (0..=total).step_by(every).collect();
        if *out.last().unwrap() != total {
            out.push(total);
        }
        out
    }
}

/// Seed of agent `i`.
pub fn agent_seed(base: u64, i: usize) -> u64 {
    rng::derive_seed(base, &[stream::AGENT, i as u64])
}

/// Seed of out-of-sample test `j` at checkpoint index `k`; the same for
/// every agent and the benchmark.
pub fn oos_seed(base: u64, k: usize, j: usize) -> u64 {
    rng::derive_seed(base, &[stream::OOS_PATH, k as u64, j as u64])
}

/// The fitted benchmark and what the warm-up run taught about the market.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WarmUp {
    pub model: EstimatedModel,
    pub action_range: ActionRange,
    /// `1 / std` of the benchmark's per-step rewards on the warm-up path.
    pub reward_scale: f64,
}

pub fn warm_up(cfg: &ExperimentConfig) -> Result<WarmUp> {
    let n = cfg.benchmark.fit_window;
    let path = cfg.market.simulate(n + 1, rng::derive_seed(cfg.seed, &[stream::WARMUP_PATH]))?;
    let partially = match cfg.benchmark.kind {
        BenchmarkKind::Auto => path.factors.is_none(),
        BenchmarkKind::FullyInformed => false,
        BenchmarkKind::PartiallyInformed => true,
    };
    let model = if partially {
        benchmark::fit_partially_informed(&path.returns[..n], &cfg.benchmark.candidate_lags)?
    } else {
        let factors = path.factors.as_ref().ok_or_else(|| Error::Config("market has no factors".into()))?;
        let f: Vec<Vec<f64>> = factors.iter().map(|f| f[..n].to_vec()).collect();
        benchmark::fit_fully_informed(&f, &path.returns[..n])?
    };
    let env = EnvConfig { episode_len: n, ..cfg.env_config(None) };
    let mut gp = GpPolicy::new(cfg.env.gamma, cfg.env.lambda, cfg.env.r_f, model.clone())?;
    let perf = env::run_policy(&env, &path, &mut gp, 0.0)?;
    let (q_lo, q_hi) = cfg.benchmark.action_quantiles;
    let action_range = benchmark::calibrate_action_range(&perf.action, q_lo, q_hi)?;
    let sd = stats::std_dev(&perf.reward);
    let reward_scale = if sd > 0.0 { 1.0 / sd } else { 1.0 };
    Ok(WarmUp { model, action_range, reward_scale })
}

/// A trained agent of any kind.
#[derive(Debug, Clone)]
pub enum AnyAgent {
    Q(Box<QAgent>),
    Dqn(Box<DqnAgent>),
    Ppo(Box<PpoAgent>),
}

impl AnyAgent {
    pub fn trader(&self) -> &dyn Trader {
        match self {
            AnyAgent::Q(a) => a.as_ref(),
            AnyAgent::Dqn(a) => a.as_ref(),
            AnyAgent::Ppo(a) => a.as_ref(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            AnyAgent::Q(_) => "q",
            AnyAgent::Dqn(_) => "dqn",
            AnyAgent::Ppo(_) => "ppo",
        }
    }

    /// Q-values at `s`, for the agents that have them.
    pub fn q_values(&self, s: State) -> Result<Option<Vec<f64>>> {
        match self {
            AnyAgent::Q(a) => Ok(Some(a.table.row(a.grids.state_index(s)).to_vec())),
            AnyAgent::Dqn(a) => a.greedy_q(s).map(Some),
            AnyAgent::Ppo(_) => Ok(None),
        }
    }

    pub fn actions(&self) -> Option<&[f64]> {
        match self {
            AnyAgent::Q(a) => Some(&a.grids.actions),
            AnyAgent::Dqn(a) => Some(&a.actions),
            AnyAgent::Ppo(_) => None,
        }
    }

    fn poison(&mut self) {
        match self {
            AnyAgent::Q(a) => a.table.values.iter_mut().for_each(|v| *v = f64::NAN),
            AnyAgent::Dqn(a) => a.online.params.iter_mut().for_each(|v| *v = f64::NAN),
            AnyAgent::Ppo(a) => a.actor.params.iter_mut().for_each(|v| *v = f64::NAN),
        }
    }
}

/// What sits next to the agent state in a checkpoint directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub kind: String,
    pub step: usize,
    pub config_hash: String,
    pub seed: u64,
    pub env: EnvConfig,
    pub market: MarketParams,
}

pub fn save_checkpoint(dir: &Path, meta: &CheckpointMeta, agent: &AnyAgent) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("checkpoint.json"), serde_json::to_string_pretty(meta)?)?;
    match agent {
        AnyAgent::Q(a) => a.save(dir),
        AnyAgent::Dqn(a) => a.save(&dir.join("agent.json")),
        AnyAgent::Ppo(a) => a.save(&dir.join("agent.json")),
    }
}

pub fn load_checkpoint(dir: &Path) -> Result<(CheckpointMeta, AnyAgent)> {
    let meta: CheckpointMeta = serde_json::from_str(&std::fs::read_to_string(dir.join("checkpoint.json"))?)?;
    let agent = match meta.kind.as_str() {
        "q" => AnyAgent::Q(Box::new(QAgent::load(dir)?)),
        "dqn" => AnyAgent::Dqn(Box::new(DqnAgent::load(&dir.join("agent.json"))?)),
        "ppo" => AnyAgent::Ppo(Box::new(PpoAgent::load(&dir.join("agent.json"))?)),
        other => return Err(Error::Config(format!("unknown checkpoint kind {other:?}"))),
    };
    Ok((meta, agent))
}

/// Scores of one out-of-sample test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestScore {
    pub test: usize,
    pub seed: u64,
    pub cum_net_pnl: f64,
    pub sharpe: Option<f64>,
    pub mean_reward: f64,
}

impl TestScore {
    fn of(test: usize, perf: &PerfSeries) -> Self {
        TestScore {
            test,
            seed: perf.seed,
            cum_net_pnl: perf.cum_net_pnl(),
            sharpe: eval::sharpe(&perf.net_pnl).ok(),
            mean_reward: perf.mean_reward(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointEval {
    pub index: usize,
    pub step: usize,
    pub tests: Vec<TestScore>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AgentOutcome {
    pub id: usize,
    pub seed: u64,
    /// Set when the agent faulted; its other fields hold what was done before.
    pub error: Option<String>,
    pub evals: Vec<CheckpointEval>,
    /// Mean unscaled training reward per PPO episode.
    pub episode_rewards: Vec<f64>,
    #[serde(skip)]
    pub agent: Option<AnyAgent>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunArtifacts {
    pub dir: PathBuf,
    pub config_hash: String,
    pub warm_up: WarmUp,
    pub benchmark: Vec<CheckpointEval>,
    pub agents: Vec<AgentOutcome>,
}

/// Mean over the tests and agents at checkpoint index `k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheckpointSummary {
    pub step: usize,
    pub agent_pnl: f64,
    pub agent_sharpe: f64,
    pub agent_sharpe_std: f64,
    pub bench_pnl: f64,
    pub bench_sharpe: f64,
    pub bench_sharpe_std: f64,
}

fn sharpe_or_zero(s: &TestScore) -> f64 {
    s.sharpe.unwrap_or(0.0)
}

impl RunArtifacts {
    pub fn healthy_agents(&self) -> impl Iterator<Item = &AgentOutcome> {
        self.agents.iter().filter(|a| a.error.is_none())
    }

    /// Averages at checkpoint index `k` over healthy agents. Sharpe ratios
    /// are first averaged over tests per agent; the std is across agents.
    /// An undefined Sharpe ratio (a flat PnL) counts as zero.
    pub fn summary(&self, k: usize) -> Result<CheckpointSummary> {
        let bench = &self.benchmark[k];
        let per_agent: Vec<(f64, f64)> = self
            .healthy_agents()
            .map(|a| {
                let t = &a.evals[k].tests;
                let pnl: Vec<f64> = t.iter().map(|s| s.cum_net_pnl).collect();
                let sr: Vec<f64> = t.iter().map(sharpe_or_zero).collect();
                (stats::mean(&pnl), stats::mean(&sr))
            })
            .collect();
        if per_agent.is_empty() {
            return Err(Error::Empty("no healthy agents".into()));
        }
        let pnl: Vec<f64> = per_agent.iter().map(|p| p.0).collect();
        let sr: Vec<f64> = per_agent.iter().map(|p| p.1).collect();
        let b_sr: Vec<f64> = bench.tests.iter().map(sharpe_or_zero).collect();
        let b_pnl: Vec<f64> = bench.tests.iter().map(|s| s.cum_net_pnl).collect();
        Ok(CheckpointSummary {
            step: bench.step,
            agent_pnl: stats::mean(&pnl),
            agent_sharpe: stats::mean(&sr),
            agent_sharpe_std: stats::std_dev(&sr),
            bench_pnl: stats::mean(&b_pnl),
            bench_sharpe: stats::mean(&b_sr),
            bench_sharpe_std: stats::std_dev(&b_sr),
        })
    }

    pub fn final_summary(&self) -> Result<CheckpointSummary> {
        self.summary(self.benchmark.len() - 1)
    }
}

/// Out-of-sample paths for checkpoint index `k`.
fn oos_paths(cfg: &ExperimentConfig, k: usize) -> Result<Vec<MarketPath>> {
    (0..cfg.schedule.num_oos_tests)
        .map(|j| cfg.market.simulate(cfg.schedule.t_out + 1, oos_seed(cfg.seed, k, j)))
        .collect()
}

fn new_agent(cfg: &ExperimentConfig, warm: &WarmUp, seed: u64) -> Result<AnyAgent> {
    let range = warm.action_range;
    let rho = cfg.env.rho;
    Ok(match &cfg.agent {
        AgentSpec::Q(c) => AnyAgent::Q(Box::new(QAgent::new(c, range, rho, cfg.schedule.t_in as u64, seed)?)),
        AgentSpec::Dqn(c) => {
            let c = DqnConfig { reward_scale: Some(c.reward_scale.unwrap_or(warm.reward_scale)), ..c.clone() };
            AnyAgent::Dqn(Box::new(DqnAgent::new(c, range, rho, cfg.schedule.t_in as u64, seed)?))
        }
        AgentSpec::Ppo(c) => {
            let c = PpoConfig { reward_scale: Some(c.reward_scale.unwrap_or(warm.reward_scale)), ..c.clone() };
            AnyAgent::Ppo(Box::new(PpoAgent::new(c, range, rho, seed)?))
        }
    })
}

/// Collapses per-update logs into rows averaging `every` updates.
fn thin_log(log: &[StepLog], every: usize, out: &mut String) {
    for chunk in log.chunks(every) {
        let last = chunk.last().unwrap();
        let loss = chunk.iter().map(|l| l.loss).sum::<f64>() / chunk.len() as f64;
        let _ = writeln!(out, "{},{},{},{}", last.step, loss, last.epsilon, last.lr);
    }
}

fn ppo_log_rows(rows: &[PpoLogRow], out: &mut String) {
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.episode, r.mean_reward, r.policy_loss, r.value_loss, r.entropy, r.log_std
        );
    }
}

/// Greedy action (and Q-values when available) at `h = 0` over a grid of
/// returns; the payload of the policy and value-slice plots.
pub fn policy_slice(agent: &AnyAgent, y_max: f64, points: usize) -> Result<String> {
    let n_q = agent.actions().map_or(0, |a| a.len());
    let mut s = String::from("y,action");
    for i in 0..n_q {
        let _ = write!(s, ",q{i}");
    }
    s.push('\n');
    for i in 0..points {
        let y = -y_max + 2.0 * y_max * i as f64 / (points - 1) as f64;
        let state = State { y, h_prev: 0.0 };
        let _ = write!(s, "{y},{}", agent.trader().greedy_action(state)?);
        if let Some(q) = agent.q_values(state)? {
            for v in q {
                let _ = write!(s, ",{v}");
            }
        }
        s.push('\n');
    }
    Ok(s)
}

struct AgentRun<'a> {
    cfg: &'a ExperimentConfig,
    warm: &'a WarmUp,
    dir: PathBuf,
    hash: &'a str,
    steps: &'a [usize],
}

impl AgentRun<'_> {
    fn evaluate(&self, agent: &AnyAgent, k: usize, keep_series: bool) -> Result<CheckpointEval> {
        let env = self.cfg.env_config(Some(self.warm.action_range));
        let mut tests = Vec::with_capacity(self.cfg.schedule.num_oos_tests);
        for (j, path) in oos_paths(self.cfg, k)?.iter().enumerate() {
            let mut perf = env::run_policy(&env, path, &mut Greedy(agent.trader()), 0.0)?;
            perf.agent = agent.kind().into();
            perf.checkpoint = self.steps[k] as u64;
            tests.push(TestScore::of(j, &perf));
            if keep_series {
                std::fs::write(self.dir.join(format!("final_test_{j}.csv")), perf.to_csv())?;
            }
        }
        Ok(CheckpointEval { index: k, step: self.steps[k], tests })
    }

    fn checkpoint(&self, agent: &AnyAgent, k: usize) -> Result<()> {
        let last = k + 1 == self.steps.len();
        if self.cfg.schedule.keep_checkpoints == KeepCheckpoints::Final && !last {
            return Ok(());
        }
        let meta = CheckpointMeta {
            kind: agent.kind().into(),
            step: self.steps[k],
            config_hash: self.hash.into(),
            seed: self.cfg.seed,
            env: self.cfg.env_config(Some(self.warm.action_range)),
            market: self.cfg.market.clone(),
        };
        save_checkpoint(&self.dir.join(format!("ckpt_{}", self.steps[k])), &meta, agent)
    }

    fn run(&self, id: usize, outcome: &mut AgentOutcome) -> Result<()> {
        std::fs::create_dir_all(&self.dir)?;
        let seed = outcome.seed;
        let mut agent = new_agent(self.cfg, self.warm, seed)?;
        let env = self.cfg.env_config(Some(self.warm.action_range));
        let sched = &self.cfg.schedule;
        let train_path = match agent {
            AnyAgent::Ppo(_) => None,
            _ => Some(self.cfg.market.simulate((sched.t_in + 1).max(2), rng::derive_seed(seed, &[stream::TRAIN_PATH]))?),
        };
        let mut log = match agent {
            AnyAgent::Ppo(_) => String::from("episode,mean_reward,policy_loss,value_loss,entropy,log_std\n"),
            _ => String::from("step,loss,epsilon,lr\n"),
        };
        let mut h = 0.0;
        let last = self.steps.len() - 1;
        for k in 0..self.steps.len() {
            if k > 0 {
                let (from, to) = (self.steps[k - 1], self.steps[k]);
                match &mut agent {
                    AnyAgent::Q(a) => {
                        let l = a.train_on_path(&env, train_path.as_ref().unwrap(), from, to - from, &mut h)?;
                        thin_log(&l, sched.log_every, &mut log);
                    }
                    AnyAgent::Dqn(a) => {
                        let l = a.train_on_path(&env, train_path.as_ref().unwrap(), from, to - from, &mut h)?;
                        thin_log(&l, sched.log_every, &mut log);
                    }
                    AnyAgent::Ppo(a) => {
                        let rows = a.collect_and_train(&env, &self.cfg.market, to - from, seed)?;
                        outcome.episode_rewards.extend(rows.iter().map(|r| r.mean_reward));
                        ppo_log_rows(&rows, &mut log);
                    }
                }
                if matches!(&self.cfg.fault_injection, Some(f) if f.agent == id) {
                    agent.poison();
                }
            }
            self.checkpoint(&agent, k)?;
            outcome.evals.push(self.evaluate(&agent, k, k == last)?);
        }
        std::fs::write(self.dir.join("train_log.csv"), log)?;
        std::fs::write(self.dir.join("policy_slice.csv"), policy_slice(&agent, 0.05, 101)?)?;
        outcome.agent = Some(agent);
        Ok(())
    }
}

fn scores_csv(agent: &str, evals: &[CheckpointEval], out: &mut String) {
    for e in evals {
        for t in &e.tests {
            let sr = t.sharpe.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{agent},{},{},{},{},{sr},{}", e.step, t.test, t.seed, t.cum_net_pnl, t.mean_reward);
        }
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    name: &'a str,
    config_hash: &'a str,
    seed: u64,
    agent_kind: &'a str,
    checkpoints: &'a [usize],
    warm_up: &'a WarmUp,
    agents: Vec<ManifestAgent>,
}

#[derive(Serialize)]
struct ManifestAgent {
    id: usize,
    seed: u64,
    status: String,
}

/// Runs the full protocol and writes every artifact under `dir`. Agents train
/// on a pool of `workers` threads; a faulting agent is reported in its
/// outcome and the manifest while the rest complete.
pub fn run_experiment(cfg: &ExperimentConfig, dir: &Path, workers: usize) -> Result<RunArtifacts> {
    cfg.validate()?;
    std::fs::create_dir_all(dir)?;
    let hash = cfg.hash();
    std::fs::write(dir.join("config.json"), cfg.to_json()?)?;

    let warm = warm_up(cfg)?;
    let steps = cfg.checkpoints();
    let bench_dir = dir.join("benchmark");
    std::fs::create_dir_all(&bench_dir)?;
    std::fs::write(bench_dir.join("model.json"), serde_json::to_string_pretty(&warm.model)?)?;

    let bench_env = cfg.env_config(None);
    let mut benchmark = Vec::with_capacity(steps.len());
    for (k, &step) in steps.iter().enumerate() {
        let mut tests = Vec::new();
        for (j, path) in oos_paths(cfg, k)?.iter().enumerate() {
            let mut gp = GpPolicy::new(cfg.env.gamma, cfg.env.lambda, cfg.env.r_f, warm.model.clone())?;
            let mut perf = env::run_policy(&bench_env, path, &mut gp, 0.0)?;
            perf.agent = "benchmark".into();
            tests.push(TestScore::of(j, &perf));
            if k + 1 == steps.len() {
                std::fs::write(bench_dir.join(format!("final_test_{j}.csv")), perf.to_csv())?;
            }
        }
        benchmark.push(CheckpointEval { index: k, step, tests });
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let agents: Vec<AgentOutcome> = pool.install(|| {
        (0..cfg.schedule.num_agents)
            .into_par_iter()
            .map(|id| {
                let run = AgentRun { cfg, warm: &warm, dir: dir.join(format!("agent_{id}")), hash: &hash, steps: &steps };
                let mut outcome = AgentOutcome {
                    id,
                    seed: agent_seed(cfg.seed, id),
                    error: None,
                    evals: Vec::new(),
                    episode_rewards: Vec::new(),
                    agent: None,
                };
                let result = catch_unwind(AssertUnwindSafe(|| run.run(id, &mut outcome)));
                outcome.error = match result {
                    Ok(Ok(())) => None,
                    Ok(Err(e)) => Some(e.to_string()),
                    Err(panic) => Some(
                        panic
                            .downcast_ref::<String>()
                            .cloned()
                            .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                            .unwrap_or_else(|| "agent panicked".into()),
                    ),
                };
                outcome
            })
            .collect()
    });

    let mut evals = String::from("agent,checkpoint,test,seed,cum_net_pnl,sharpe,mean_reward\n");
    scores_csv("benchmark", &benchmark, &mut evals);
    for a in agents.iter().filter(|a| a.error.is_none()) {
        scores_csv(&format!("agent_{}", a.id), &a.evals, &mut evals);
    }
    std::fs::write(dir.join("evaluations.csv"), evals)?;

    let artifacts = RunArtifacts { dir: dir.to_path_buf(), config_hash: hash.clone(), warm_up: warm, benchmark, agents };
    let mut table = String::from("checkpoint,agent_cum_net_pnl,agent_sharpe,agent_sharpe_std,bench_cum_net_pnl,bench_sharpe,bench_sharpe_std\n");
    if artifacts.healthy_agents().next().is_some() {
        for k in 0..steps.len() {
            let s = artifacts.summary(k)?;
            let _ = writeln!(
                table,
                "{},{},{},{},{},{},{}",
                s.step, s.agent_pnl, s.agent_sharpe, s.agent_sharpe_std, s.bench_pnl, s.bench_sharpe, s.bench_sharpe_std
            );
        }
    }
    std::fs::write(dir.join("checkpoints.csv"), table)?;

    let manifest = Manifest {
        name: &cfg.name,
        config_hash: &hash,
        seed: cfg.seed,
        agent_kind: cfg.agent.name(),
        checkpoints: &steps,
        warm_up: &artifacts.warm_up,
        agents: artifacts
            .agents
            .iter()
            .map(|a| ManifestAgent {
                id: a.id,
                seed: a.seed,
                status: a.error.clone().map_or_else(|| "ok".into(), |e| format!("failed: {e}")),
            })
            .collect(),
    };
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(artifacts)
}

/// Replaces the value at a dotted path (`schedule.t_in`,
/// `market.factor.half_lives.0`) of a JSON document. A scalar written over
/// a one-element array replaces its element.
pub fn set_path(doc: &mut serde_json::Value, path: &str, value: serde_json::Value) -> Result<()> {
    let mut node = doc;
    for key in path.split('.') {
        node = match node {
            serde_json::Value::Object(map) => map.get_mut(key),
            serde_json::Value::Array(items) => key.parse::<usize>().ok().and_then(|i| items.get_mut(i)),
            _ => None,
        }
        .ok_or_else(|| Error::Config(format!("unknown config path {path:?}")))?;
    }
    match node {
        serde_json::Value::Array(items) if items.len() == 1 && !value.is_array() => items[0] = value,
        _ => *node = value,
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: serde_json::Value,
    pub agent_sharpe: f64,
    pub agent_sharpe_std: f64,
    pub bench_sharpe: f64,
    pub bench_sharpe_std: f64,
    /// Agent over benchmark Sharpe ratio, or their difference when the
    /// benchmark's is not positive.
    pub relative_sharpe: f64,
    pub relative_mode: String,
}

/// One experiment per value of `axis`; each run lands in `dir/<i>`, and the
/// table of final-checkpoint Sharpe ratios in `dir/sweep.csv`.
pub fn run_sweep(
    base: &ExperimentConfig,
    axis: &str,
    values: &[serde_json::Value],
    dir: &Path,
    workers: usize,
) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::Config("a sweep needs at least one value".into()));
    }
    let doc = serde_json::to_value(base)?;
    let configs = values
        .iter()
        .map(|v| {
            let mut d = doc.clone();
            set_path(&mut d, axis, v.clone())?;
            let cfg: ExperimentConfig = serde_json::from_value(d).map_err(|e| Error::Config(format!("{axis}={v}: {e}")))?;
            cfg.validate()?;
            Ok(cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    std::fs::create_dir_all(dir)?;
    let mut rows = Vec::new();
    let mut csv = String::from("value,agent_sharpe,agent_sharpe_std,bench_sharpe,bench_sharpe_std,relative_sharpe,relative_mode\n");
    for (i, (cfg, v)) in configs.iter().zip(values).enumerate() {
        let art = run_experiment(cfg, &dir.join(i.to_string()), workers)?;
        let s = art.final_summary()?;
        let (relative_sharpe, mode) = if s.bench_sharpe > 0.0 {
            (s.agent_sharpe / s.bench_sharpe, "ratio")
        } else {
            (s.agent_sharpe - s.bench_sharpe, "difference")
        };
        let label = match v {
            serde_json::Value::String(s) => s.clone(),
            other => other.to_string(),
        };
        let _ = writeln!(
            csv,
            "\"{}\",{},{},{},{},{},{}",
            label.replace('"', "\"\""),
            s.agent_sharpe,
            s.agent_sharpe_std,
            s.bench_sharpe,
            s.bench_sharpe_std,
            relative_sharpe,
            mode
        );
        rows.push(SweepRow {
            value: v.clone(),
            agent_sharpe: s.agent_sharpe,
            agent_sharpe_std: s.agent_sharpe_std,
            bench_sharpe: s.bench_sharpe,
            bench_sharpe_std: s.bench_sharpe_std,
            relative_sharpe,
            relative_mode: mode.into(),
        });
    }
    std::fs::write(dir.join("sweep.csv"), csv)?;
    Ok(rows)
}
