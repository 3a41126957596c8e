//! Tabular Q-learning on a discretized (return, holding) grid with a small
//! symmetric action set and linearly decaying ε-greedy exploration.

use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::benchmark::ActionRange;
use crate::env::{self, EnvConfig, State, Trader};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::sim::MarketPath;

/// `2k + 1` trades: `k` evenly spaced sells down to `range.lo`, zero, and `k`
/// evenly spaced buys up to `range.hi`.
pub fn action_grid(range: ActionRange, k: usize) -> Vec<f64> {
    let k_f = k as f64;
    let mut grid: Vec<f64> = (1..=k).rev().map(|i| range.lo * i as f64 / k_f).collect();
    grid.push(0.0);
    grid.extend((1..=k).map(|i| range.hi * i as f64 / k_f));
    grid
}

fn symmetric_grid(bound: f64, half_points: usize) -> Result<Vec<f64>> {
    if !(bound > 0.0) || half_points == 0 {
        return Err(Error::InvalidParam("grid bound and point count must be positive".into()));
    }
    let m = half_points as i64;
    Ok((-m..=m).map(|i| bound * i as f64 / m as f64).collect())
}

/// Index of the grid point nearest to `x`; ties go to the lower point and
/// values beyond the ends clamp to the edge bins.
pub fn nearest_bin(grid: &[f64], x: f64) -> usize {
    let upper = grid.partition_point(|&g| g < x);
    if upper == 0 {
        return 0;
    }
    if upper == grid.len() {
        return grid.len() - 1;
    }
    let lower = upper - 1;
    if x - grid[lower] <= grid[upper] - x {
        lower
    } else {
        upper
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteGrids {
    pub actions: Vec<f64>,
    pub holdings: Vec<f64>,
    pub returns: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    /// Half-width `K` of the action set, `|A| = 2K + 1`.
    pub action_half_width: usize,
    pub holding_bound: f64,
    /// `M`, giving `2M + 1` holding levels.
    pub holding_half_points: usize,
    pub return_bound: f64,
    /// Giving `2T + 1` return levels.
    pub return_half_points: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            action_half_width: 2,
            holding_bound: 100_000.0,
            holding_half_points: 98,
            return_bound: 0.05,
            return_half_points: 50,
        }
    }
}

impl DiscreteGrids {
    pub fn new(range: ActionRange, spec: &GridSpec) -> Result<Self> {
        Ok(DiscreteGrids {
            actions: action_grid(range, spec.action_half_width),
            holdings: symmetric_grid(spec.holding_bound, spec.holding_half_points)?,
            returns: symmetric_grid(spec.return_bound, spec.return_half_points)?,
        })
    }

    pub fn discretize(&self, s: State) -> (usize, usize) {
        (nearest_bin(&self.returns, s.y), nearest_bin(&self.holdings, s.h_prev))
    }

    pub fn state_index(&self, s: State) -> usize {
        let (r, h) = self.discretize(s);
        r * self.holdings.len() + h
    }

    pub fn num_states(&self) -> usize {
        self.returns.len() * self.holdings.len()
    }

    /// Table dimension `|R|·|H|·|A|`.
    pub fn table_size(&self) -> usize {
        self.num_states() * self.actions.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearningRate {
    Constant(f64),
    /// `1 / n` where `n` counts visits to the updated entry.
    InverseVisits,
}

/// Linear decay from `start` to `end` over `decay_steps`, flat afterwards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub decay_steps: u64,
}

impl EpsilonSchedule {
    /// Decays over `fraction` of `total` steps.
    pub fn over(start: f64, end: f64, total: u64, fraction: f64) -> Self {
        EpsilonSchedule { start, end, decay_steps: ((total as f64) * fraction).round() as u64 }
    }

    pub fn value(&self, step: u64) -> f64 {
        if step >= self.decay_steps {
            return self.end;
        }
        self.start + (self.end - self.start) * step as f64 / self.decay_steps as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QTable {
    pub num_states: usize,
    pub num_actions: usize,
    pub values: Vec<f64>,
    pub visits: Vec<u32>,
    pub learning_rate: LearningRate,
    pub rho: f64,
}

impl QTable {
    pub fn new(num_states: usize, num_actions: usize, learning_rate: LearningRate, rho: f64) -> Self {
        QTable {
            num_states,
            num_actions,
            values: vec![0.0; num_states * num_actions],
            visits: vec![0; num_states * num_actions],
            learning_rate,
            rho,
        }
    }

    pub fn q(&self, s: usize, a: usize) -> f64 {
        self.values[s * self.num_actions + a]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.values[s * self.num_actions..(s + 1) * self.num_actions]
    }

    /// Greedy action, ties to the smallest index.
    pub fn argmax(&self, s: usize) -> usize {
        argmax(self.row(s))
    }

    /// Moves `Q(s, a)` toward `r + ρ max_a' Q(s', a')`.
    pub fn q_update(&mut self, s: usize, a: usize, r: f64, s_next: usize) {
        let target = r + self.rho * self.row(s_next).iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let i = s * self.num_actions + a;
        self.visits[i] = self.visits[i].saturating_add(1);
        let alpha = match self.learning_rate {
            LearningRate::Constant(a) => a,
            LearningRate::InverseVisits => 1.0 / self.visits[i] as f64,
        };
        self.values[i] += alpha * (target - self.values[i]);
    }

    /// ε-greedy choice: uniform with probability ε, greedy otherwise.
    pub fn epsilon_greedy(&self, s: usize, epsilon: f64, rng: &mut Rng) -> usize {
        if epsilon > 0.0 && rng.random::<f64>() < epsilon {
            rng.random_range(0..self.num_actions)
        } else {
            self.argmax(s)
        }
    }

    /// Fraction of entries never updated.
    pub fn unvisited_fraction(&self) -> f64 {
        self.visits.iter().filter(|&&v| v == 0).count() as f64 / self.visits.len() as f64
    }
}

pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate().skip(1) {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QConfig {
    pub grids: GridSpec,
    pub learning_rate: LearningRate,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Share of the training run over which ε decays.
    pub epsilon_decay_fraction: f64,
}

impl Default for QConfig {
    fn default() -> Self {
        QConfig {
            grids: GridSpec::default(),
            learning_rate: LearningRate::Constant(0.1),
            epsilon_start: 1.0,
            epsilon_end: 0.01,
            epsilon_decay_fraction: 0.6,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QAgent {
    pub grids: DiscreteGrids,
    pub table: QTable,
    pub schedule: EpsilonSchedule,
    pub steps: u64,
    #[serde(skip, default = "default_rng")]
    rng: Rng,
}

fn default_rng() -> Rng {
    rng::seeded(0)
}

/// One line of a training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLog {
    pub step: u64,
    pub loss: f64,
    pub epsilon: f64,
    pub lr: f64,
}

impl QAgent {
    pub fn new(cfg: &QConfig, range: ActionRange, rho: f64, total_steps: u64, seed: u64) -> Result<Self> {
        let grids = DiscreteGrids::new(range, &cfg.grids)?;
        let table = QTable::new(grids.num_states(), grids.actions.len(), cfg.learning_rate, rho);
        Ok(QAgent {
            grids,
            table,
            schedule: EpsilonSchedule::over(cfg.epsilon_start, cfg.epsilon_end, total_steps, cfg.epsilon_decay_fraction),
            steps: 0,
            rng: rng::seeded(seed),
        })
    }

    /// Learns online from `steps` consecutive transitions of `path` starting
    /// at time `start`, carrying the holding in `h`.
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
        let mut log = Vec::with_capacity(steps);
        for t in start..start + steps {
            let state = cfg.observe(path, t, *h);
            let s = self.grids.state_index(state);
            let eps = self.schedule.value(self.steps);
            let a = self.table.epsilon_greedy(s, eps, &mut self.rng);
            let out = env::step(cfg, state, self.grids.actions[a], path.returns[t + 1])?;
            *h = out.next_state.h_prev;
            let s_next = self.grids.state_index(cfg.observe(path, t + 1, *h));
            let before = self.table.q(s, a);
            self.table.q_update(s, a, out.reward, s_next);
            let err = self.table.q(s, a) - before;
            self.steps += 1;
            log.push(StepLog { step: self.steps, loss: err * err, epsilon: eps, lr: 0.0 });
        }
        Ok(log)
    }

    /// Writes `q_table.bin` (little-endian header `[states, actions]` as u64,
    /// then the values as f64) and `grids.json`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut bytes = Vec::with_capacity(16 + 8 * self.table.values.len());
        bytes.extend_from_slice(&(self.table.num_states as u64).to_le_bytes());
        bytes.extend_from_slice(&(self.table.num_actions as u64).to_le_bytes());
        for v in &self.table.values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        std::fs::write(dir.join("q_table.bin"), bytes)?;
        let meta = serde_json::json!({
            "grids": self.grids,
            "learning_rate": self.table.learning_rate,
            "rho": self.table.rho,
            "schedule": self.schedule,
            "steps": self.steps,
        });
        std::fs::write(dir.join("grids.json"), serde_json::to_string_pretty(&meta)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.join("grids.json"))?)?;
        let grids: DiscreteGrids = serde_json::from_value(meta["grids"].clone())?;
        let learning_rate: LearningRate = serde_json::from_value(meta["learning_rate"].clone())?;
        let schedule: EpsilonSchedule = serde_json::from_value(meta["schedule"].clone())?;
        let rho = meta["rho"].as_f64().ok_or_else(|| Error::Config("grids.json lacks rho".into()))?;
        let steps = meta["steps"].as_u64().unwrap_or(0);
        let bytes = std::fs::read(dir.join("q_table.bin"))?;
        if bytes.len() < 16 {
            return Err(Error::Shape("truncated q_table.bin".into()));
        }
        let word = |i: usize| u64::from_le_bytes(bytes[8 * i..8 * i + 8].try_into().unwrap());
        let (ns, na) = (word(0) as usize, word(1) as usize);
        if bytes.len() != 16 + 8 * ns * na || ns != grids.num_states() || na != grids.actions.len() {
            return Err(Error::Shape("q_table.bin does not match grids.json".into()));
        }
        let mut table = QTable::new(ns, na, learning_rate, rho);
        for (i, v) in table.values.iter_mut().enumerate() {
            *v = f64::from_bits(word(2 + i));
        }
        Ok(QAgent { grids, table, schedule, steps, rng: default_rng() })
    }
}

impl Trader for QAgent {
    fn greedy_action(&self, s: State) -> Result<f64> {
        Ok(self.grids.actions[self.table.argmax(self.grids.state_index(s))])
    }
}
