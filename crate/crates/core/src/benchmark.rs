//! The closed-form optimal strategy for a mean-variance trader facing
//! quadratic costs `½ Δh' Λ Δh` with `Λ = λΣ`, plus the estimators that feed
//! it and the heuristic that sizes the agents' action space from it.
//!
//! The optimal holding is a partial move toward an aim portfolio,
//! `h[t] = (1 - a/λ) h[t-1] + (a/λ) aim[t]`, where the aim is the Markowitz
//! portfolio with each factor shrunk by `1 / (1 + φ_k a/γ)`.

use serde::{Deserialize, Serialize};

use crate::env::{Observation, Policy};
use crate::error::{Error, Result};
use crate::stats;

pub const PHI_MIN: f64 = 1e-6;
pub const PHI_MAX: f64 = 1.0 - 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpSolution {
    /// Positive root of `(1-r)a² + (γ(1-r) + λr)a - γλ(1-r) = 0`.
    pub a: f64,
    /// Fraction of the gap to the aim closed each step, `a/λ`.
    pub trading_rate: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub r_f: f64,
    /// `1 / (1 + φ_k a/γ)` per factor; empty until [`GpSolution::bind`].
    pub aim_scalings: Vec<f64>,
}

impl GpSolution {
    /// Fills `aim_scalings` for the given mean-reversion speeds.
    pub fn bind(&mut self, phis: &[f64]) {
        self.aim_scalings = phis.iter().map(|p| 1.0 / (1.0 + p * self.a / self.gamma)).collect();
    }

    /// Value of the defining quadratic at `a`, relative to its constant term.
    pub fn root_residual(&self) -> f64 {
        let one_r = 1.0 - self.r_f;
        let lin = self.gamma * one_r + self.lambda * self.r_f;
        let c = self.gamma * self.lambda * one_r;
        (one_r * self.a * self.a + lin * self.a - c) / c
    }
}

pub fn solve_trading_rate(gamma: f64, lambda: f64, r_f: f64) -> Result<GpSolution> {
    if !(gamma > 0.0) || !(lambda > 0.0) || !gamma.is_finite() || !lambda.is_finite() {
        return Err(Error::InvalidParam(format!(
            "gamma and lambda must be positive (gamma={gamma}, lambda={lambda})"
        )));
    }
    if !(0.0..1.0).contains(&r_f) {
        return Err(Error::InvalidParam(format!("r_f must lie in [0, 1), got {r_f}")));
    }
    let one_r = 1.0 - r_f;
    let lin = gamma * one_r + lambda * r_f;
    let disc = lin * lin + 4.0 * gamma * lambda * one_r * one_r;
    // Rationalised form of (-lin + sqrt(disc)) / (2(1-r)); no cancellation.
    let a = 2.0 * gamma * lambda * one_r / (lin + disc.sqrt());
    Ok(GpSolution {
        a,
        trading_rate: a / lambda,
        gamma,
        lambda,
        r_f,
        aim_scalings: Vec::new(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatedModel {
    pub b_hat: Vec<f64>,
    pub phi_hat: Vec<f64>,
    pub sigma_hat: f64,
    /// Lag chosen by the partially informed fit; empty when factors are observed.
    pub chosen_lags: Vec<usize>,
    pub fit_window: usize,
}

impl EstimatedModel {
    /// The generator's own parameters, for tests and diagnostics.
    pub fn exact(b: Vec<f64>, phi: Vec<f64>, sigma: f64) -> Self {
        EstimatedModel { b_hat: b, phi_hat: phi, sigma_hat: sigma, chosen_lags: Vec::new(), fit_window: 0 }
    }

    pub fn is_partially_informed(&self) -> bool {
        !self.chosen_lags.is_empty()
    }
}

/// Markowitz holding `(γσ²)⁻¹ B·f`.
pub fn markowitz(gamma: f64, sigma_sq: f64, b: &[f64], f: &[f64]) -> f64 {
    b.iter().zip(f).map(|(b, f)| b * f).sum::<f64>() / (gamma * sigma_sq)
}

/// Aim portfolio for diagonal mean-reversion, `(γσ²)⁻¹ Σ_k B_k f_k / (1 + φ_k a/γ)`.
pub fn aim_portfolio(sol: &GpSolution, model: &EstimatedModel, f: &[f64]) -> Result<f64> {
    let s2 = model.sigma_hat * model.sigma_hat;
    if !(s2 > 0.0) {
        return Err(Error::Domain("aim portfolio needs a positive residual variance".into()));
    }
    if f.len() != model.b_hat.len() || model.phi_hat.len() != f.len() {
        return Err(Error::Shape(format!("{} factors given, model has {}", f.len(), model.b_hat.len())));
    }
    let mut acc = 0.0;
    for k in 0..f.len() {
        acc += model.b_hat[k] * f[k] / (1.0 + model.phi_hat[k] * sol.a / sol.gamma);
    }
    Ok(acc / (sol.gamma * s2))
}

/// Aim portfolio in its general matrix form `(γΣ)⁻¹ B (I + (a/γ)Φ)⁻¹ f` for
/// an arbitrary (not necessarily diagonal) K×K `Φ`.
pub fn aim_portfolio_general(
    sol: &GpSolution,
    b: &[f64],
    phi: &[Vec<f64>],
    sigma_sq: f64,
    f: &[f64],
) -> Result<f64> {
    let k = f.len();
    if !(sigma_sq > 0.0) {
        return Err(Error::Domain("singular gamma*Sigma".into()));
    }
    let ratio = sol.a / sol.gamma;
    let mut m: Vec<Vec<f64>> = (0..k)
        .map(|i| (0..k).map(|j| f64::from(u8::from(i == j)) + ratio * phi[i][j]).collect())
        .collect();
    let x = solve_linear(&mut m, f.to_vec())
        .ok_or_else(|| Error::Domain("I + (a/gamma) Phi is singular".into()))?;
    Ok(b.iter().zip(&x).map(|(b, x)| b * x).sum::<f64>() / (sol.gamma * sigma_sq))
}

/// Trade that moves `h_prev` a fraction `a/λ` of the way to the aim.
pub fn gp_action(sol: &GpSolution, model: &EstimatedModel, f: &[f64], h_prev: f64) -> Result<f64> {
    let aim = aim_portfolio(sol, model, f)?;
    Ok(sol.trading_rate * (aim - h_prev))
}

/// Gaussian elimination with partial pivoting; `None` on a (near-)singular system.
fn solve_linear(m: &mut [Vec<f64>], mut rhs: Vec<f64>) -> Option<Vec<f64>> {
    let n = rhs.len();
    let scale = m.iter().flatten().fold(0.0f64, |acc, v| acc.max(v.abs()));
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))?;
        if m[piv][col].abs() <= 1e-12 * scale {
            return None;
        }
        m.swap(col, piv);
        rhs.swap(col, piv);
        for row in col + 1..n {
            let factor = m[row][col] / m[col][col];
            for c in col..n {
                m[row][c] -= factor * m[col][c];
            }
            rhs[row] -= factor * rhs[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let tail: f64 = (row + 1..n).map(|c| m[row][c] * x[c]).sum();
        x[row] = (rhs[row] - tail) / m[row][row];
    }
    Some(x)
}

/// No-intercept least squares of `y` on the columns `xs`. Returns the
/// coefficients and residuals.
fn least_squares(xs: &[&[f64]], y: &[f64]) -> Option<(Vec<f64>, Vec<f64>)> {
    let k = xs.len();
    let mut xtx = vec![vec![0.0; k]; k];
    let mut xty = vec![0.0; k];
    for i in 0..k {
        for j in 0..k {
            xtx[i][j] = xs[i].iter().zip(xs[j]).map(|(a, b)| a * b).sum();
        }
        xty[i] = xs[i].iter().zip(y).map(|(a, b)| a * b).sum();
    }
    let coef = solve_linear(&mut xtx, xty)?;
    let resid = (0..y.len())
        .map(|t| y[t] - (0..k).map(|j| coef[j] * xs[j][t]).sum::<f64>())
        .collect();
    Some((coef, resid))
}

fn clamp_phi(phi: f64) -> f64 {
    if phi.is_nan() {
        PHI_MAX
    } else {
        phi.clamp(PHI_MIN, PHI_MAX)
    }
}

fn rms(xs: &[f64]) -> f64 {
    (xs.iter().map(|e| e * e).sum::<f64>() / xs.len() as f64).sqrt()
}

/// Least-squares estimates of loadings and mean-reversion speeds from
/// observed factors. `factors[k][t]` and `returns[t]` must cover the same
/// window, which is taken as the fit window.
pub fn fit_fully_informed(factors: &[Vec<f64>], returns: &[f64]) -> Result<EstimatedModel> {
    let t = returns.len();
    if t < 50 {
        return Err(Error::Estimation(format!("fit window of {t} steps is shorter than 50")));
    }
    if factors.is_empty() || factors.iter().any(|f| f.len() != t) {
        return Err(Error::Shape("factor columns must match the return window".into()));
    }
    let mut phi_hat = Vec::with_capacity(factors.len());
    for (k, f) in factors.iter().enumerate() {
        // Δf[t+1] = -φ f[t] + ε
        let lagged: Vec<f64> = f[..t - 1].iter().map(|v| -v).collect();
        let diff: Vec<f64> = f.windows(2).map(|w| w[1] - w[0]).collect();
        let (coef, _) = least_squares(&[&lagged], &diff)
            .ok_or_else(|| Error::Estimation(format!("factor {} has no variation", k + 1)))?;
        phi_hat.push(clamp_phi(coef[0]));
    }
    let cols: Vec<&[f64]> = factors.iter().map(|f| &f[..t - 1]).collect();
    let (b_hat, resid) = least_squares(&cols, &returns[1..])
        .ok_or_else(|| Error::Estimation("factor regressors are degenerate".into()))?;
    Ok(EstimatedModel { b_hat, phi_hat, sigma_hat: rms(&resid), chosen_lags: Vec::new(), fit_window: t })
}

/// Selects the lagged return that best predicts the next return and treats
/// it as the single factor.
///
/// Every lag is scored on the same sample so mean squared residuals are
/// comparable. A longer lag only displaces a shorter one when it improves the
/// MSE by more than `12/n` in relative terms; smaller differences are noise
/// (under white noise `n·ΔR²` is roughly χ²₁) and count as ties.
pub fn fit_partially_informed(returns: &[f64], candidate_lags: &[usize]) -> Result<EstimatedModel> {
    if candidate_lags.is_empty() {
        return Err(Error::Empty("candidate lag set".into()));
    }
    let mut lags = candidate_lags.to_vec();
    lags.sort_unstable();
    lags.dedup();
    if lags[0] == 0 {
        return Err(Error::InvalidParam("lags start at 1".into()));
    }
    let t_len = returns.len();
    let max_lag = *lags.last().unwrap();
    if max_lag * 10 >= t_len {
        return Err(Error::Estimation(format!("max lag {max_lag} needs at least {} returns", max_lag * 10 + 1)));
    }
    // Regress y[t+1] on y[t-L+1] for t = max_lag-1 .. T-2.
    let start = max_lag - 1;
    let target = &returns[start + 1..];
    let n = target.len() as f64;
    let tie = 12.0 / n;

    let mut best: Option<(usize, f64, f64, f64)> = None;
    for &lag in &lags {
        let x = &returns[start + 1 - lag..t_len - lag];
        let Some((coef, resid)) = least_squares(&[x], target) else { continue };
        let mse = resid.iter().map(|e| e * e).sum::<f64>() / n;
        match best {
            Some((_, best_mse, _, _)) if mse >= best_mse * (1.0 - tie) => {}
            _ => best = Some((lag, mse, coef[0], mse.sqrt())),
        }
    }
    let (lag, _, b, sigma) = best.ok_or_else(|| Error::Estimation("returns have no variation".into()))?;

    // The factor is a lagged return, so its persistence is the lag-1
    // autoregression coefficient of the return series itself.
    let (ar, _) = least_squares(&[&returns[..t_len - 1]], &returns[1..])
        .ok_or_else(|| Error::Estimation("returns have no variation".into()))?;
    Ok(EstimatedModel {
        b_hat: vec![b],
        phi_hat: vec![clamp_phi(1.0 - ar[0])],
        sigma_hat: sigma,
        chosen_lags: vec![lag],
        fit_window: t_len,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionRange {
    pub lo: f64,
    pub hi: f64,
}

impl ActionRange {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo < 0.0 && hi > 0.0) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidParam(format!("action range needs lo < 0 < hi, got [{lo}, {hi}]")));
        }
        Ok(ActionRange { lo, hi })
    }

    pub fn max_abs(&self) -> f64 {
        self.lo.abs().max(self.hi)
    }

    pub fn contains(&self, x: f64) -> bool {
        (self.lo..=self.hi).contains(&x)
    }
}

/// Empirical `[q_lo, q_hi]` quantiles of a benchmark's trades.
pub fn calibrate_action_range(actions: &[f64], q_lo: f64, q_hi: f64) -> Result<ActionRange> {
    if actions.is_empty() {
        return Err(Error::Empty("benchmark action sample".into()));
    }
    if actions.len() < 1000 {
        return Err(Error::InvalidParam(format!(
            "need at least 1000 benchmark actions to calibrate, got {}",
            actions.len()
        )));
    }
    if !(0.0 <= q_lo && q_lo < q_hi && q_hi <= 1.0) {
        return Err(Error::InvalidParam(format!("bad quantile levels {q_lo}, {q_hi}")));
    }
    if actions.iter().any(|a| !a.is_finite()) {
        return Err(Error::non_finite("benchmark actions"));
    }
    let mut sorted = actions.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut lo = stats::quantile_sorted(&sorted, q_lo);
    let mut hi = stats::quantile_sorted(&sorted, q_hi);
    if lo >= 0.0 || hi <= 0.0 {
        let m = lo.abs().max(hi.abs());
        lo = -m;
        hi = m;
    }
    if !(hi > 0.0) {
        return Err(Error::Domain("benchmark never traded; action range is degenerate".into()));
    }
    ActionRange::new(lo, hi)
}

/// Where the benchmark reads its factor values from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FactorSource {
    /// The simulated factors themselves.
    Observed,
    /// The return lagged by `L - 1` steps, `y[t-L+1]`.
    LaggedReturn(usize),
}

/// The closed-form strategy as a [`Policy`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GpPolicy {
    pub solution: GpSolution,
    pub model: EstimatedModel,
    pub source: FactorSource,
}

impl GpPolicy {
    pub fn new(gamma: f64, lambda: f64, r_f: f64, model: EstimatedModel) -> Result<Self> {
        let mut solution = solve_trading_rate(gamma, lambda, r_f)?;
        solution.bind(&model.phi_hat);
        let source = match model.chosen_lags.first() {
            Some(&lag) => FactorSource::LaggedReturn(lag),
            None => FactorSource::Observed,
        };
        Ok(GpPolicy { solution, model, source })
    }

    pub fn aim(&self, obs: &Observation<'_>) -> Result<f64> {
        match self.source {
            FactorSource::Observed => aim_portfolio(&self.solution, &self.model, obs.factors),
            FactorSource::LaggedReturn(lag) => {
                let t = obs.t;
                let f = if t + 1 >= lag { obs.returns[t + 1 - lag] } else { 0.0 };
                aim_portfolio(&self.solution, &self.model, &[f])
            }
        }
    }
}

impl Policy for GpPolicy {
    fn act(&mut self, obs: &Observation<'_>) -> Result<f64> {
        Ok(self.solution.trading_rate * (self.aim(obs)? - obs.state.h_prev))
    }
}

/// Markowitz without cost awareness: jumps straight to `(γσ²)⁻¹ B·f` every step.
#[derive(Debug, Clone)]
pub struct MarkowitzPolicy {
    pub gamma: f64,
    pub model: EstimatedModel,
}

impl Policy for MarkowitzPolicy {
    fn act(&mut self, obs: &Observation<'_>) -> Result<f64> {
        let s2 = self.model.sigma_hat * self.model.sigma_hat;
        Ok(markowitz(self.gamma, s2, &self.model.b_hat, obs.factors) - obs.state.h_prev)
    }
}
