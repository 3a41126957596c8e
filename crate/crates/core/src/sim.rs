//! Synthetic market generators.
//!
//! Two families are supported:
//!
//! * factor models, where K ≤ 2 mean-reverting factors `f` load linearly on
//!   the next return, `y[t+1] = B·f[t] + u[t+1]` and
//!   `f[t+1] = (1 - φ) f[t] + ε[t+1]`;
//! * AR(1) returns with GARCH(1,1) innovations,
//!   `y[t+1] = c·y[t] + σ[t+1] z[t+1]`,
//!   `σ²[t+1] = ω + α u[t]² + β σ²[t]`.
//!
//! Noise is either Gaussian or Student-T. Student-T draws are standardized to
//! unit variance before scaling, so the declared volatilities mean the same
//! thing for both kinds.

use std::fmt::Write as _;

use rand_distr::{Distribution, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    Gaussian,
    StudentT { nu: u32 },
}

impl Default for NoiseKind {
    fn default() -> Self {
        NoiseKind::Gaussian
    }
}

impl NoiseKind {
    fn validate(&self) -> Result<()> {
        match *self {
            NoiseKind::StudentT { nu } if nu <= 2 => Err(Error::InvalidParam(format!(
                "Student-T degrees of freedom must exceed 2 (got {nu})"
            ))),
            _ => Ok(()),
        }
    }

    fn sampler(&self) -> Noise {
        match *self {
            NoiseKind::Gaussian => Noise::Gaussian,
            NoiseKind::StudentT { nu } => {
                let nu = nu as f64;
                Noise::StudentT {
                    dist: StudentT::new(nu).expect("nu > 2 validated"),
                    scale: ((nu - 2.0) / nu).sqrt(),
                }
            }
        }
    }
}

/// Unit-variance noise source.
enum Noise {
    Gaussian,
    StudentT { dist: StudentT<f64>, scale: f64 },
}

impl Noise {
    fn draw(&self, rng: &mut Rng) -> f64 {
        match self {
            Noise::Gaussian => StandardNormal.sample(rng),
            Noise::StudentT { dist, scale } => dist.sample(rng) * scale,
        }
    }
}

/// How a half-life is turned into a per-step mean-reversion speed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HalfLifeFormula {
    /// `φ = 1 - 2^(-1/h)`: the signal halves after exactly `h` steps.
    #[default]
    Semantic,
    /// `φ = ln 2 / ln h`, kept for replication attempts only.
    Printed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorModelParams {
    pub loadings: Vec<f64>,
    pub half_lives: Vec<f64>,
    pub factor_vols: Vec<f64>,
    pub asset_vol: f64,
    #[serde(default)]
    pub noise: NoiseKind,
    #[serde(default)]
    pub half_life_formula: HalfLifeFormula,
}

impl FactorModelParams {
    /// One Gaussian factor with the given loading, half-life and vols.
    pub fn single(loading: f64, half_life: f64, factor_vol: f64, asset_vol: f64) -> Self {
        FactorModelParams {
            loadings: vec![loading],
            half_lives: vec![half_life],
            factor_vols: vec![factor_vol],
            asset_vol,
            noise: NoiseKind::Gaussian,
            half_life_formula: HalfLifeFormula::Semantic,
        }
    }

    pub fn num_factors(&self) -> usize {
        self.loadings.len()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.loadings.len();
        if !(1..=2).contains(&k) {
            return Err(Error::InvalidParam(format!("need 1 or 2 factors, got {k}")));
        }
        if self.half_lives.len() != k || self.factor_vols.len() != k {
            return Err(Error::InvalidParam(
                "loadings, half_lives and factor_vols must have equal length".into(),
            ));
        }
        if self.half_lives.iter().any(|h| !(*h > 0.0)) {
            return Err(Error::InvalidParam("half-lives must be positive".into()));
        }
        // Zero vols are allowed so the noiseless fixed point can be generated.
        if self.factor_vols.iter().any(|v| !(*v >= 0.0)) || !(self.asset_vol >= 0.0) {
            return Err(Error::InvalidParam("volatilities must be non-negative".into()));
        }
        if self.loadings.iter().any(|b| !b.is_finite()) {
            return Err(Error::InvalidParam("loadings must be finite".into()));
        }
        self.noise.validate()?;
        self.phis().map(|_| ())
    }

    /// Per-factor mean-reversion speeds.
    pub fn phis(&self) -> Result<Vec<f64>> {
        self.half_lives
            .iter()
            .map(|&h| match self.half_life_formula {
                HalfLifeFormula::Semantic => half_life_to_phi(h),
                HalfLifeFormula::Printed => half_life_to_phi_printed(h),
            })
            .collect()
    }

    /// Stationary variance of each factor, `vol² / (1 - (1-φ)²)`.
    pub fn stationary_factor_variances(&self) -> Result<Vec<f64>> {
        Ok(self
            .phis()?
            .iter()
            .zip(&self.factor_vols)
            .map(|(phi, vol)| vol * vol / (1.0 - (1.0 - phi).powi(2)))
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GarchParams {
    pub omega: f64,
    pub alpha: f64,
    pub beta: f64,
    pub ar_coeff: f64,
    #[serde(default)]
    pub noise: NoiseKind,
}

impl GarchParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.omega > 0.0) {
            return Err(Error::InvalidParam("omega must be positive".into()));
        }
        if !(self.alpha >= 0.0) || !(self.beta >= 0.0) {
            return Err(Error::InvalidParam("alpha and beta must be non-negative".into()));
        }
        if !(self.ar_coeff.abs() < 1.0) {
            return Err(Error::InvalidParam("|ar_coeff| must be below 1".into()));
        }
        if self.alpha + self.beta >= 1.0 {
            return Err(Error::NonStationary(self.alpha + self.beta));
        }
        self.noise.validate()
    }

    pub fn unconditional_variance(&self) -> f64 {
        self.omega / (1.0 - self.alpha - self.beta)
    }

    /// One step of the conditional-variance recursion.
    pub fn next_variance(&self, u_prev: f64, sigma2_prev: f64) -> f64 {
        self.omega + self.alpha * u_prev * u_prev + self.beta * sigma2_prev
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarketParams {
    Factor(FactorModelParams),
    Garch(GarchParams),
}

impl MarketParams {
    pub fn validate(&self) -> Result<()> {
        match self {
            MarketParams::Factor(p) => p.validate(),
            MarketParams::Garch(p) => p.validate(),
        }
    }

    pub fn simulate(&self, horizon: usize, seed: u64) -> Result<MarketPath> {
        match self {
            MarketParams::Factor(p) => simulate_factor_path(p, horizon, seed),
            MarketParams::Garch(p) => simulate_garch_path(p, horizon, seed),
        }
    }

    /// Variance of the unpredictable return component, used as Σ in rewards.
    pub fn noise_variance(&self) -> f64 {
        match self {
            MarketParams::Factor(p) => p.asset_vol * p.asset_vol,
            MarketParams::Garch(p) => p.unconditional_variance(),
        }
    }
}

/// A simulated time series. `factors[k][t]` is factor `k` at time `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketPath {
    pub factors: Option<Vec<Vec<f64>>>,
    pub returns: Vec<f64>,
    pub sigmas: Option<Vec<f64>>,
    pub seed: u64,
    pub params: MarketParams,
}

impl MarketPath {
    pub fn len(&self) -> usize {
        self.returns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.returns.is_empty()
    }

    pub fn num_factors(&self) -> usize {
        self.factors.as_ref().map_or(0, Vec::len)
    }

    /// Factor values at time `t` written into `out`.
    pub fn factors_at(&self, t: usize, out: &mut Vec<f64>) {
        out.clear();
        if let Some(fs) = &self.factors {
            out.extend(fs.iter().map(|f| f[t]));
        }
    }

    /// Writes `t,f1[,f2],y[,sigma]`.
    pub fn to_csv(&self) -> String {
        let k = self.num_factors();
        let mut s = String::from("t");
        for i in 0..k {
            let _ = write!(s, ",f{}", i + 1);
        }
        s.push_str(",y");
        if self.sigmas.is_some() {
            s.push_str(",sigma");
        }
        s.push('\n');
        for t in 0..self.len() {
            let _ = write!(s, "{t}");
            if let Some(fs) = &self.factors {
                for f in fs {
                    let _ = write!(s, ",{}", f[t]);
                }
            }
            let _ = write!(s, ",{}", self.returns[t]);
            if let Some(sig) = &self.sigmas {
                let _ = write!(s, ",{}", sig[t]);
            }
            s.push('\n');
        }
        s
    }

    /// Reads the CSV layout produced by [`MarketPath::to_csv`]. The generator
    /// parameters are not stored in the file and must be supplied.
    pub fn from_csv(text: &str, params: MarketParams, seed: u64) -> Result<MarketPath> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Vec<&str> = lines
            .next()
            .ok_or_else(|| Error::Empty("path CSV".into()))?
            .split(',')
            .map(str::trim)
            .collect();
        let col = |name: &str| header.iter().position(|h| *h == name);
        let y_col = col("y").ok_or_else(|| Error::Config("path CSV lacks a `y` column".into()))?;
        let f_cols: Vec<usize> = (1..).map_while(|i| col(&format!("f{i}"))).collect();
        let s_col = col("sigma");
        let mut returns = Vec::new();
        let mut factors = vec![Vec::new(); f_cols.len()];
        let mut sigmas = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let cells: Vec<&str> = line.split(',').map(str::trim).collect();
            let num = |c: usize| -> Result<f64> {
                cells
                    .get(c)
                    .and_then(|v| v.parse::<f64>().ok())
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::Config(format!("bad number on data line {}", lineno + 1)))
            };
            returns.push(num(y_col)?);
            for (k, &c) in f_cols.iter().enumerate() {
                factors[k].push(num(c)?);
            }
            if let Some(c) = s_col {
                sigmas.push(num(c)?);
            }
        }
        Ok(MarketPath {
            factors: (!f_cols.is_empty()).then_some(factors),
            returns,
            sigmas: s_col.map(|_| sigmas),
            seed,
            params,
        })
    }
}

/// Mean-reversion speed for which `(1 - φ)^h = 1/2`.
pub fn half_life_to_phi(h: f64) -> Result<f64> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::Domain(format!("half-life must be positive and finite, got {h}")));
    }
    Ok(1.0 - (-std::f64::consts::LN_2 / h).exp())
}

/// The alternative `ln 2 / ln h` mapping. Only defined for `h > 2`, where it
/// lands in (0, 1).
pub fn half_life_to_phi_printed(h: f64) -> Result<f64> {
    if !(h > 2.0) || !h.is_finite() {
        return Err(Error::Domain(format!("ln2/ln(h) needs h > 2, got {h}")));
    }
    Ok(std::f64::consts::LN_2 / h.ln())
}

pub fn simulate_factor_path(params: &FactorModelParams, horizon: usize, seed: u64) -> Result<MarketPath> {
    params.validate()?;
    if horizon < 2 {
        return Err(Error::InvalidParam(format!("horizon must be at least 2, got {horizon}")));
    }
    let phis = params.phis()?;
    let k = params.num_factors();
    let noise = params.noise.sampler();
    let mut rng = rng::seeded(seed);

    let mut factors = vec![vec![0.0; horizon]; k];
    let mut returns = vec![0.0; horizon];
    returns[0] = params.asset_vol * noise.draw(&mut rng);
    for t in 0..horizon - 1 {
        let mut signal = 0.0;
        for j in 0..k {
            signal += params.loadings[j] * factors[j][t];
        }
        returns[t + 1] = signal + params.asset_vol * noise.draw(&mut rng);
        for j in 0..k {
            factors[j][t + 1] = (1.0 - phis[j]) * factors[j][t] + params.factor_vols[j] * noise.draw(&mut rng);
        }
        if !returns[t + 1].is_finite() {
            return Err(Error::non_finite(format!("simulated return at t={}", t + 1)));
        }
    }
    Ok(MarketPath {
        factors: Some(factors),
        returns,
        sigmas: None,
        seed,
        params: MarketParams::Factor(params.clone()),
    })
}

pub fn simulate_garch_path(params: &GarchParams, horizon: usize, seed: u64) -> Result<MarketPath> {
    params.validate()?;
    if horizon < 2 {
        return Err(Error::InvalidParam(format!("horizon must be at least 2, got {horizon}")));
    }
    let noise = params.noise.sampler();
    let mut rng = rng::seeded(seed);

    let mut returns = vec![0.0; horizon];
    let mut sigmas = vec![0.0; horizon];
    let mut sigma2 = params.unconditional_variance();
    let mut u = sigma2.sqrt() * noise.draw(&mut rng);
    sigmas[0] = sigma2.sqrt();
    returns[0] = u;
    for t in 1..horizon {
        sigma2 = params.next_variance(u, sigma2);
        u = sigma2.sqrt() * noise.draw(&mut rng);
        sigmas[t] = sigma2.sqrt();
        returns[t] = params.ar_coeff * returns[t - 1] + u;
        if !returns[t].is_finite() {
            return Err(Error::non_finite(format!("simulated return at t={t}")));
        }
    }
    Ok(MarketPath {
        factors: None,
        returns,
        sigmas: Some(sigmas),
        seed,
        params: MarketParams::Garch(params.clone()),
    })
}

/// Fourth standardized moment of GARCH(1,1) innovations with Gaussian `z`.
pub fn garch_kurtosis(params: &GarchParams) -> Result<f64> {
    let s = params.alpha + params.beta;
    let cond = 1.0 - 2.0 * params.alpha * params.alpha - s * s;
    if !(cond > 0.0) {
        return Err(Error::InfiniteKurtosis(cond));
    }
    Ok(3.0 * (1.0 - s * s) / cond)
}

/// Draws `n` unit-variance samples of the given noise kind, for moment checks.
pub fn draw_noise(kind: NoiseKind, n: usize, seed: u64) -> Result<Vec<f64>> {
    kind.validate()?;
    let noise = kind.sampler();
    let mut rng = rng::seeded(seed);
    Ok((0..n).map(|_| noise.draw(&mut rng)).collect())
}

/// Recovers the GARCH innovations `u[t] = y[t] - c·y[t-1]` (with `u[0] = y[0]`).
pub fn garch_innovations(path: &MarketPath, ar_coeff: f64) -> Vec<f64> {
    let y = &path.returns;
    let mut u = Vec::with_capacity(y.len());
    u.push(y[0]);
    u.extend(y.windows(2).map(|w| w[1] - ar_coeff * w[0]));
    u
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats;

    fn bisect_phi(h: f64) -> f64 {
        // (1-φ)^h - 0.5 is decreasing in φ on (0,1).
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if (1.0 - mid).powf(h) > 0.5 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn half_life_examples() {
        assert!((half_life_to_phi(1.0).unwrap() - 0.5).abs() < 1e-15);
        let oracle = bisect_phi(350.0);
        assert!((oracle - 0.0019784).abs() < 1e-7);
        assert!((half_life_to_phi(350.0).unwrap() - oracle).abs() < 1e-13);
        assert!(half_life_to_phi(1e12).unwrap() < 1e-11);
        assert!(half_life_to_phi(0.0).is_err());
        assert!(half_life_to_phi(-3.0).is_err());
    }

    #[test]
    fn printed_formula_is_much_faster() {
        let phi = half_life_to_phi_printed(350.0).unwrap();
        assert!((phi - 0.118).abs() < 1e-3);
        assert!(half_life_to_phi_printed(2.0).is_err());
    }

    #[test]
    fn zero_noise_is_fixed_point() {
        let p = FactorModelParams::single(0.00535, 350.0, 0.0, 0.0);
        let path = simulate_factor_path(&p, 100, 3).unwrap();
        assert!(path.returns.iter().all(|&y| y == 0.0));
        assert!(path.factors.unwrap()[0].iter().all(|&f| f == 0.0));
    }

    #[test]
    fn same_seed_same_path() {
        let mut p = FactorModelParams::single(0.00535, 350.0, 0.2, 0.01);
        p.noise = NoiseKind::StudentT { nu: 6 };
        let a = simulate_factor_path(&p, 1000, 11).unwrap();
        let b = simulate_factor_path(&p, 1000, 11).unwrap();
        assert_eq!(a, b);
        let c = simulate_factor_path(&p, 1000, 12).unwrap();
        assert_ne!(a.returns, c.returns);
    }

    #[test]
    fn rejects_bad_params() {
        let mut p = FactorModelParams::single(0.1, 10.0, 0.1, 0.1);
        p.noise = NoiseKind::StudentT { nu: 2 };
        assert!(p.validate().is_err());
        let p = FactorModelParams::single(0.1, -1.0, 0.1, 0.1);
        assert!(p.validate().is_err());
        let g = GarchParams { omega: 0.01, alpha: 0.1, beta: 0.9, ar_coeff: 0.9, noise: NoiseKind::Gaussian };
        assert!(matches!(simulate_garch_path(&g, 10, 0), Err(Error::NonStationary(_))));
        assert!(simulate_factor_path(&FactorModelParams::single(0.1, 10.0, 0.1, 0.1), 1, 0).is_err());
    }

    #[test]
    fn garch_variance_recursion() {
        let g = GarchParams { omega: 0.01, alpha: 0.05, beta: 0.94, ar_coeff: 0.9, noise: NoiseKind::Gaussian };
        assert!((g.next_variance(0.0, 1.0) - 0.95).abs() < 1e-15);
        let flat = GarchParams { alpha: 0.0, beta: 0.0, ..g.clone() };
        let path = simulate_garch_path(&flat, 500, 4).unwrap();
        for s in &path.sigmas.unwrap()[1..] {
            assert!((s * s - 0.01).abs() < 1e-15);
        }
    }

    #[test]
    fn kurtosis_formula() {
        let mk = |alpha, beta| GarchParams { omega: 0.01, alpha, beta, ar_coeff: 0.0, noise: NoiseKind::Gaussian };
        assert!((garch_kurtosis(&mk(0.0, 0.5)).unwrap() - 3.0).abs() < 1e-12);
        // 3(1 - 0.99²) / (1 - 0.99² - 2·0.05²) = 0.0597 / 0.0149
        let k = garch_kurtosis(&mk(0.05, 0.94)).unwrap();
        assert!((k - 0.0597 / 0.0149).abs() < 1e-9);
        assert!((k - 4.0067).abs() < 1e-4);
        assert!(garch_kurtosis(&mk(0.3, 0.6)).is_ok());
        assert!(matches!(garch_kurtosis(&mk(0.32, 0.6)), Err(Error::InfiniteKurtosis(_))));
    }

    #[test]
    fn garch_kurtosis_above_three_empirically() {
        let g = GarchParams { omega: 0.05, alpha: 0.15, beta: 0.7, ar_coeff: 0.0, noise: NoiseKind::Gaussian };
        let path = simulate_garch_path(&g, 200_000, 9).unwrap();
        let u = garch_innovations(&path, 0.0);
        assert!(stats::kurtosis(&u) > 3.2);
    }

    #[test]
    fn csv_round_trip() {
        let p = FactorModelParams {
            loadings: vec![0.005, 0.006],
            half_lives: vec![170.0, 350.0],
            factor_vols: vec![0.2, 0.1],
            asset_vol: 0.01,
            noise: NoiseKind::Gaussian,
            half_life_formula: HalfLifeFormula::Semantic,
        };
        let path = simulate_factor_path(&p, 50, 5).unwrap();
        let text = path.to_csv();
        assert!(text.starts_with("t,f1,f2,y\n"));
        let back = MarketPath::from_csv(&text, path.params.clone(), 5).unwrap();
        assert_eq!(back, path);

        let g = GarchParams { omega: 0.01, alpha: 0.05, beta: 0.94, ar_coeff: 0.9, noise: NoiseKind::Gaussian };
        let path = simulate_garch_path(&g, 50, 5).unwrap();
        let text = path.to_csv();
        assert!(text.starts_with("t,y,sigma\n"));
        assert_eq!(MarketPath::from_csv(&text, path.params.clone(), 5).unwrap(), path);
    }
}
