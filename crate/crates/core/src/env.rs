//! The single-asset trading MDP shared by every agent and the benchmark.
//!
//! The state is the last observed return and the current holding; the action
//! is the number of shares traded. Each step pays
//! `h·y' - (γ/2)h²Σ - ½λΣ·Δh²`, where `h = h_prev + Δh`.

use serde::{Deserialize, Serialize};

use crate::benchmark::ActionRange;
use crate::error::{Error, Result};
use crate::eval::PerfSeries;
use crate::sim::MarketPath;

/// Actions may overshoot the range by this much (relative to its width) from
/// rounding and are clipped; anything larger is an error.
pub const CLIP_TOLERANCE: f64 = 1e-9;

/// What the agent sees as the first state coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Observe {
    #[default]
    Returns,
    /// The (single) simulated factor instead of the return.
    Factor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub gamma: f64,
    pub lambda: f64,
    pub sigma_sq: f64,
    /// Discount used inside agent bootstrap targets. Rewards themselves are
    /// never discounted by the environment.
    pub rho: f64,
    pub r_f: f64,
    pub episode_len: usize,
    pub action_range: Option<ActionRange>,
    #[serde(default)]
    pub observe: Observe,
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.lambda > 0.0 && self.sigma_sq > 0.0) {
            return Err(Error::InvalidParam("gamma, lambda and sigma_sq must be positive".into()));
        }
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err(Error::InvalidParam(format!("rho must lie in (0, 1], got {}", self.rho)));
        }
        if !(self.r_f >= 0.0 && self.r_f < 1.0) {
            return Err(Error::InvalidParam(format!("r_f must lie in [0, 1), got {}", self.r_f)));
        }
        Ok(())
    }

    /// Transaction cost `½ Δh Λ Δh` with `Λ = λΣ`.
    pub fn cost(&self, dh: f64) -> f64 {
        0.5 * dh * dh * self.lambda * self.sigma_sq
    }

    /// Builds the state the agent observes at time `t`.
    pub fn observe(&self, path: &MarketPath, t: usize, h_prev: f64) -> State {
        let y = match (self.observe, &path.factors) {
            (Observe::Factor, Some(fs)) => fs[0][t],
            _ => path.returns[t],
        };
        State { y, h_prev }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct State {
    pub y: f64,
    pub h_prev: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    pub net_pnl: f64,
    pub cost: f64,
    pub next_state: State,
}

pub fn step(cfg: &EnvConfig, state: State, dh: f64, y_next: f64) -> Result<StepOutcome> {
    if !dh.is_finite() || !y_next.is_finite() || !state.y.is_finite() || !state.h_prev.is_finite() {
        return Err(Error::non_finite("environment step input"));
    }
    let dh = clip_action(cfg.action_range, dh)?;
    let h = state.h_prev + dh;
    let cost = cfg.cost(dh);
    let gross = h * y_next;
    let net_pnl = gross - cost;
    let reward = net_pnl - 0.5 * cfg.gamma * h * h * cfg.sigma_sq;
    Ok(StepOutcome { reward, net_pnl, cost, next_state: State { y: y_next, h_prev: h } })
}

fn clip_action(range: Option<ActionRange>, dh: f64) -> Result<f64> {
    let Some(r) = range else { return Ok(dh) };
    if r.contains(dh) {
        return Ok(dh);
    }
    let tol = CLIP_TOLERANCE * (r.hi - r.lo).max(1.0);
    if dh < r.lo && r.lo - dh < tol {
        Ok(r.lo)
    } else if dh > r.hi && dh - r.hi < tol {
        Ok(r.hi)
    } else {
        Err(Error::ActionOutOfRange { action: dh, lo: r.lo, hi: r.hi })
    }
}

/// Everything a policy may look at when choosing the trade at time `t`.
#[derive(Debug, Clone, Copy)]
pub struct Observation<'a> {
    pub t: usize,
    pub state: State,
    /// True factor values at `t` (empty for factor-free markets).
    pub factors: &'a [f64],
    /// Returns `y[0..=t]`.
    pub returns: &'a [f64],
}

pub trait Policy {
    fn act(&mut self, obs: &Observation<'_>) -> Result<f64>;
}

impl<F> Policy for F
where
    F: FnMut(&Observation<'_>) -> Result<f64>,
{
    fn act(&mut self, obs: &Observation<'_>) -> Result<f64> {
        self(obs)
    }
}

/// A learned agent acting greedily on the two-dimensional state.
pub trait Trader {
    fn greedy_action(&self, s: State) -> Result<f64>;
}

/// Adapts a [`Trader`] to the [`Policy`] interface.
pub struct Greedy<'a, T: ?Sized>(pub &'a T);

impl<T: Trader + ?Sized> Policy for Greedy<'_, T> {
    fn act(&mut self, obs: &Observation<'_>) -> Result<f64> {
        self.0.greedy_action(obs.state)
    }
}

/// Trades `policy` over the first `cfg.episode_len` steps of `path`.
pub fn run_policy(cfg: &EnvConfig, path: &MarketPath, policy: &mut dyn Policy, start_h: f64) -> Result<PerfSeries> {
    let n = cfg.episode_len;
    if path.len() < n + 1 {
        return Err(Error::InvalidParam(format!(
            "path of length {} is too short for an episode of {n} steps",
            path.len()
        )));
    }
    let mut perf = PerfSeries::with_capacity(n);
    let mut h = start_h;
    let mut factors = Vec::new();
    for t in 0..n {
        path.factors_at(t, &mut factors);
        let state = cfg.observe(path, t, h);
        let obs = Observation { t, state, factors: &factors, returns: &path.returns[..=t] };
        let dh = policy.act(&obs)?;
        if !dh.is_finite() {
            return Err(Error::AgentFault(format!("policy returned {dh} at t={t}")));
        }
        let out = step(cfg, state, dh, path.returns[t + 1])?;
        h = out.next_state.h_prev;
        perf.push(path.returns[t + 1], h, h - state.h_prev, &out);
    }
    perf.seed = path.seed;
    Ok(perf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{simulate_factor_path, FactorModelParams};

    fn cfg() -> EnvConfig {
        EnvConfig {
            gamma: 0.01,
            lambda: 1e-3,
            sigma_sq: 1e-4,
            rho: 1.0,
            r_f: 0.0,
            episode_len: 100,
            action_range: None,
            observe: Observe::Returns,
        }
    }

    #[test]
    fn idle_step_is_zero() {
        let out = step(&cfg(), State { y: 0.01, h_prev: 0.0 }, 0.0, 0.02).unwrap();
        assert_eq!((out.reward, out.net_pnl, out.cost), (0.0, 0.0, 0.0));
    }

    #[test]
    fn hand_evaluated_step() {
        let out = step(&cfg(), State { y: 0.0, h_prev: 0.0 }, 100.0, 0.01).unwrap();
        assert!((out.reward - 0.9945).abs() < 1e-12);
        assert!((out.net_pnl - 0.9995).abs() < 1e-12);
        assert!((out.cost - 0.0005).abs() < 1e-15);
        assert_eq!(out.next_state, State { y: 0.01, h_prev: 100.0 });
    }

    #[test]
    fn cost_is_symmetric() {
        let c = cfg();
        let s = State { y: 0.0, h_prev: 37.0 };
        let a = step(&c, s, 55.5, 0.003).unwrap();
        let b = step(&c, s, -55.5, 0.003).unwrap();
        assert_eq!(a.cost, b.cost);
    }

    #[test]
    fn clipping_contract() {
        let mut c = cfg();
        c.action_range = Some(ActionRange::new(-10.0, 10.0).unwrap());
        let s = State::default();
        let out = step(&c, s, 10.0 + 1e-12, 0.0).unwrap();
        assert_eq!(out.next_state.h_prev, 10.0);
        assert!(matches!(step(&c, s, 10.5, 0.0), Err(Error::ActionOutOfRange { .. })));
        assert!(step(&c, s, f64::NAN, 0.0).is_err());
    }

    #[test]
    fn zero_policy_and_telescoping() {
        let p = FactorModelParams::single(0.00535, 350.0, 0.2, 0.01);
        let path = simulate_factor_path(&p, 101, 1).unwrap();
        let c = cfg();
        let mut zero = |_: &Observation<'_>| Ok(0.0);
        let perf = run_policy(&c, &path, &mut zero, 0.0).unwrap();
        assert!(perf.net_pnl.iter().chain(&perf.reward).chain(&perf.holding).all(|&v| v == 0.0));

        let mut wiggle = |o: &Observation<'_>| Ok(if o.t % 3 == 0 { 7.25 } else { -3.5 });
        let perf = run_policy(&c, &path, &mut wiggle, 12.0).unwrap();
        let total: f64 = perf.action.iter().sum();
        assert_eq!(*perf.holding.last().unwrap(), 12.0 + total);
        for i in 0..perf.len() {
            let h = perf.holding[i];
            let lhs = perf.reward[i] + 0.5 * c.gamma * h * h * c.sigma_sq;
            assert!((lhs - perf.net_pnl[i]).abs() <= 1e-12 * perf.net_pnl[i].abs().max(1.0));
        }
        assert!(run_policy(&EnvConfig { episode_len: 200, ..c }, &path, &mut wiggle, 0.0).is_err());
    }

    #[test]
    fn non_finite_policy_aborts() {
        let p = FactorModelParams::single(0.00535, 350.0, 0.2, 0.01);
        let path = simulate_factor_path(&p, 101, 1).unwrap();
        let mut bad = |o: &Observation<'_>| Ok(if o.t == 5 { f64::INFINITY } else { 0.0 });
        assert!(matches!(run_policy(&cfg(), &path, &mut bad, 0.0), Err(Error::AgentFault(_))));
    }
}
