//! Out-of-sample performance series and the metrics computed on them.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::env::StepOutcome;
use crate::error::{Error, Result};
use crate::stats;

/// Trading days per year used to annualize the Sharpe ratio.
pub const ANNUALIZATION: f64 = 252.0;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PerfSeries {
    /// Return realized over each step.
    pub y: Vec<f64>,
    /// Holding after the trade.
    pub holding: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: Vec<f64>,
    pub net_pnl: Vec<f64>,
    pub cost: Vec<f64>,
    pub agent: String,
    pub seed: u64,
    pub checkpoint: u64,
}

impl PerfSeries {
    pub fn with_capacity(n: usize) -> Self {
        PerfSeries {
            y: Vec::with_capacity(n),
            holding: Vec::with_capacity(n),
            action: Vec::with_capacity(n),
            reward: Vec::with_capacity(n),
            net_pnl: Vec::with_capacity(n),
            cost: Vec::with_capacity(n),
            ..Default::default()
        }
    }

    pub fn push(&mut self, y: f64, holding: f64, action: f64, out: &StepOutcome) {
        self.y.push(y);
        self.holding.push(holding);
        self.action.push(action);
        self.reward.push(out.reward);
        self.net_pnl.push(out.net_pnl);
        self.cost.push(out.cost);
    }

    pub fn len(&self) -> usize {
        self.net_pnl.len()
    }

    pub fn is_empty(&self) -> bool {
        self.net_pnl.is_empty()
    }

    pub fn cum_net_pnl(&self) -> f64 {
        self.net_pnl.iter().sum()
    }

    pub fn mean_reward(&self) -> f64 {
        stats::mean(&self.reward)
    }

    /// CSV with header `t,y,h,dh,reward,net_pnl,cost`.
    pub fn to_csv(&self) -> String {
        let mut s = String::with_capacity(64 * self.len() + 32);
        s.push_str("t,y,h,dh,reward,net_pnl,cost\n");
        for t in 0..self.len() {
            let _ = writeln!(
                s,
                "{t},{},{},{},{},{},{}",
                self.y[t], self.holding[t], self.action[t], self.reward[t], self.net_pnl[t], self.cost[t]
            );
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompareMode {
    Ratio,
    Difference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub cum_net_pnl: f64,
    /// `None` when the net PnL has zero variance.
    pub sharpe: Option<f64>,
    pub relative_to_benchmark: f64,
}

/// Annualized Sharpe ratio `mean / std · √252` with the population std.
pub fn sharpe(net_pnl: &[f64]) -> Result<f64> {
    if net_pnl.len() < 2 {
        return Err(Error::InvalidParam("sharpe ratio needs at least two observations".into()));
    }
    let m = stats::mean(net_pnl);
    let sd = stats::std_dev(net_pnl);
    if !(sd > 0.0) || sd <= 1e-15 * m.abs() {
        return Err(Error::ZeroVariance);
    }
    Ok(m / sd * ANNUALIZATION.sqrt())
}

pub fn compare(agent: &PerfSeries, bench: &PerfSeries, mode: CompareMode) -> Result<Summary> {
    if agent.len() != bench.len() {
        return Err(Error::Shape(format!("agent series has {} steps, benchmark {}", agent.len(), bench.len())));
    }
    let a = agent.cum_net_pnl();
    let b = bench.cum_net_pnl();
    let relative = match mode {
        CompareMode::Ratio if b <= 0.0 => return Err(Error::NonPositiveBenchmark(b)),
        CompareMode::Ratio => a / b,
        CompareMode::Difference => a - b,
    };
    Ok(Summary { cum_net_pnl: a, sharpe: sharpe(&agent.net_pnl).ok(), relative_to_benchmark: relative })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(xs: &[f64]) -> Result<MeanStd> {
        if xs.is_empty() {
            return Err(Error::Empty("aggregate input".into()));
        }
        Ok(MeanStd { mean: stats::mean(xs), std: stats::std_dev(xs) })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub cum_net_pnl: MeanStd,
    /// Over the runs with a defined Sharpe ratio; `None` if there are none.
    pub sharpe: Option<MeanStd>,
    pub relative_to_benchmark: MeanStd,
    /// The individual runs, kept for scatter plots.
    pub points: Vec<Summary>,
}

pub fn aggregate(runs: &[Summary]) -> Result<Aggregate> {
    if runs.is_empty() {
        return Err(Error::Empty("no runs to aggregate".into()));
    }
    let pnl: Vec<f64> = runs.iter().map(|r| r.cum_net_pnl).collect();
    let rel: Vec<f64> = runs.iter().map(|r| r.relative_to_benchmark).collect();
    let sr: Vec<f64> = runs.iter().filter_map(|r| r.sharpe).collect();
    Ok(Aggregate {
        cum_net_pnl: MeanStd::of(&pnl)?,
        sharpe: MeanStd::of(&sr).ok(),
        relative_to_benchmark: MeanStd::of(&rel)?,
        points: runs.to_vec(),
    })
}
