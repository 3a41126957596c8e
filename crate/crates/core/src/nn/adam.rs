use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Exponential step decay: the rate is multiplied by `factor` every `every` updates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrDecay {
    pub factor: f64,
    pub every: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub decay: Option<LrDecay>,
}

impl AdamConfig {
    /// The moment decays tuned for the value-based agents.
    pub fn tuned() -> Self {
        AdamConfig {
            lr: 0.005,
            beta1: 0.5,
            beta2: 0.75,
            eps: 0.1,
            decay: Some(LrDecay { factor: 0.999, every: 100 }),
        }
    }

    /// Textbook defaults.
    pub fn standard(lr: f64) -> Self {
        AdamConfig { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, decay: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, num_params: usize) -> Result<Self> {
        if !(0.0..1.0).contains(&config.beta1) || !(0.0..1.0).contains(&config.beta2) {
            return Err(Error::InvalidParam("Adam betas must lie in [0, 1)".into()));
        }
        if !(config.eps > 0.0) || !(config.lr >= 0.0) {
            return Err(Error::InvalidParam("Adam needs eps > 0 and lr >= 0".into()));
        }
        Ok(Adam { config, m: vec![0.0; num_params], v: vec![0.0; num_params], step: 0 })
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn current_lr(&self) -> f64 {
        match self.config.decay {
            Some(d) if d.every > 0 => self.config.lr * d.factor.powf((self.step / d.every) as f64),
            _ => self.config.lr,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "Adam holds {} moments, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::non_finite("gradient"));
        }
        let lr = self.current_lr();
        self.step += 1;
        let AdamConfig { beta1, beta2, eps, .. } = self.config;
        let c1 = 1.0 - beta1.powf(self.step as f64);
        let c2 = 1.0 - beta2.powf(self.step as f64);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}
