use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::tensor::{gemm, Tensor2};
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics normalize the input and update the running estimates.
    Train,
    /// Running estimates normalize the input.
    Eval,
}

pub fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

/// Derivative of ELU given the pre-activation.
pub fn elu_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        x.exp()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNormState {
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub epsilon: f64,
    /// Number of batches folded into the running estimates so far.
    pub updates: u64,
}

impl BatchNormState {
    fn new(features: usize, momentum: f64, epsilon: f64) -> Self {
        BatchNormState {
            running_mean: vec![0.0; features],
            running_var: vec![1.0; features],
            momentum,
            epsilon,
            updates: 0,
        }
    }

    /// Folds one batch in. Until `1/(n+1)` drops below `1 - momentum` this is
    /// a plain cumulative average, so the first batch replaces the
    /// uninformative initial values outright.
    fn update(&mut self, mean: &[f64], unbiased_var: &[f64]) {
        let keep = self.momentum.min(self.updates as f64 / (self.updates as f64 + 1.0));
        for j in 0..mean.len() {
            self.running_mean[j] = keep * self.running_mean[j] + (1.0 - keep) * mean[j];
            self.running_var[j] = keep * self.running_var[j] + (1.0 - keep) * unbiased_var[j];
        }
        self.updates += 1;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct Slot {
    w: usize,
    b: usize,
    fan_in: usize,
    fan_out: usize,
}

/// A fully connected network: optional input batch norm, ELU hidden layers,
/// identity output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layer_sizes: Vec<usize>,
    /// Flat parameter buffer: batch-norm scale and shift (if present), then
    /// per layer the `fan_in × fan_out` row-major weights and the biases.
    pub params: Vec<f64>,
    pub batch_norm: Option<BatchNormState>,
    slots: Vec<Slot>,
}

#[derive(Debug, Clone)]
struct BnCache {
    xhat: Tensor2,
    inv_std: Vec<f64>,
    mode: Mode,
}

/// Intermediate values kept by a forward pass for [`Mlp::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    bn: Option<BnCache>,
    /// Input to each dense layer.
    inputs: Vec<Tensor2>,
    /// Pre-activations of the hidden layers.
    pre: Vec<Tensor2>,
    batch_stats: Option<(Vec<f64>, Vec<f64>)>,
}

impl Mlp {
    /// `layer_sizes = [in, hidden..., out]`, He-uniform weights with bound
    /// `√(6/fan_in)`, zero biases.
    pub fn new(layer_sizes: &[usize], batch_norm: bool, rng: &mut Rng) -> Result<Self> {
        if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
            return Err(Error::InvalidParam(format!("bad layer sizes {layer_sizes:?}")));
        }
        let input = layer_sizes[0];
        let mut params = Vec::new();
        let bn = if batch_norm {
            params.extend(std::iter::repeat_n(1.0, input));
            params.extend(std::iter::repeat_n(0.0, input));
            Some(BatchNormState::new(input, 0.99, 1e-5))
        } else {
            None
        };
        let mut slots = Vec::new();
        for w in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = (6.0 / fan_in as f64).sqrt();
            let w_off = params.len();
            params.extend((0..fan_in * fan_out).map(|_| rng.random_range(-bound..bound)));
            let b_off = params.len();
            params.extend(std::iter::repeat_n(0.0, fan_out));
            slots.push(Slot { w: w_off, b: b_off, fan_in, fan_out });
        }
        Ok(Mlp { layer_sizes: layer_sizes.to_vec(), params, batch_norm: bn, slots })
    }

    pub fn input_size(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_size(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Offsets of the weights and biases of dense layer `i`.
    pub fn layer_offsets(&self, i: usize) -> (usize, usize) {
        (self.slots[i].w, self.slots[i].b)
    }

    /// Forward pass. In train mode the running batch-norm statistics are
    /// updated.
    pub fn forward(&mut self, x: &Tensor2, mode: Mode) -> Result<(Tensor2, ForwardCache)> {
        let (out, cache) = self.forward_pure(x, mode)?;
        if let (Some(bn), Some((mean, var))) = (self.batch_norm.as_mut(), cache.batch_stats.as_ref()) {
            bn.update(mean, var);
        }
        Ok((out, cache))
    }

    /// Eval-mode forward without a cache.
    pub fn predict(&self, x: &Tensor2) -> Result<Tensor2> {
        self.forward_pure(x, Mode::Eval).map(|(out, _)| out)
    }

    /// Forward pass that leaves the running statistics untouched.
    pub fn forward_pure(&self, x: &Tensor2, mode: Mode) -> Result<(Tensor2, ForwardCache)> {
        if x.cols != self.input_size() {
            return Err(Error::Shape(format!("input has {} features, network expects {}", x.cols, self.input_size())));
        }
        let n = x.rows;
        let mut bn_cache = None;
        let mut batch_stats = None;
        let mut h = match &self.batch_norm {
            None => x.clone(),
            Some(bn) => {
                let f = x.cols;
                let (mean, var) = match mode {
                    Mode::Train => {
                        if n < 2 {
                            return Err(Error::Shape("train-mode batch norm needs at least two rows".into()));
                        }
                        let mut mean = vec![0.0; f];
                        let mut var = vec![0.0; f];
                        for r in 0..n {
                            for (j, m) in mean.iter_mut().enumerate() {
                                *m += x.get(r, j);
                            }
                        }
                        mean.iter_mut().for_each(|m| *m /= n as f64);
                        for r in 0..n {
                            for j in 0..f {
                                let d = x.get(r, j) - mean[j];
                                var[j] += d * d;
                            }
                        }
                        let unbiased: Vec<f64> = var.iter().map(|v| v / (n - 1) as f64).collect();
                        var.iter_mut().for_each(|v| *v /= n as f64);
                        batch_stats = Some((mean.clone(), unbiased));
                        (mean, var)
                    }
                    Mode::Eval => (bn.running_mean.clone(), bn.running_var.clone()),
                };
                let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + bn.epsilon).sqrt()).collect();
                let (gamma, beta) = (&self.params[..f], &self.params[f..2 * f]);
                let mut xhat = Tensor2::zeros(n, f);
                let mut y = Tensor2::zeros(n, f);
                for r in 0..n {
                    for j in 0..f {
                        let v = (x.get(r, j) - mean[j]) * inv_std[j];
                        xhat.set(r, j, v);
                        y.set(r, j, gamma[j] * v + beta[j]);
                    }
                }
                bn_cache = Some(BnCache { xhat, inv_std, mode });
                y
            }
        };

        let last = self.slots.len() - 1;
        let mut inputs = Vec::with_capacity(self.slots.len());
        let mut pre = Vec::with_capacity(last);
        for (i, s) in self.slots.iter().enumerate() {
            let mut z = Tensor2::zeros(n, s.fan_out);
            let bias = &self.params[s.b..s.b + s.fan_out];
            for r in 0..n {
                z.data[r * s.fan_out..(r + 1) * s.fan_out].copy_from_slice(bias);
            }
            let w = &self.params[s.w..s.w + s.fan_in * s.fan_out];
            gemm(n, s.fan_in, s.fan_out, 1.0, &h.data, false, w, false, 1.0, &mut z.data);
            inputs.push(h);
            if i < last {
                let mut a = z.clone();
                a.data.iter_mut().for_each(|v| *v = elu(*v));
                pre.push(z);
                h = a;
            } else {
                h = z;
            }
        }
        h.ensure_finite("network output")?;
        Ok((h, ForwardCache { bn: bn_cache, inputs, pre, batch_stats }))
    }

    /// Reverse pass. Returns the gradient of the scalar whose derivative with
    /// respect to the output is `upstream`, for every parameter, and the
    /// gradient with respect to the input.
    pub fn backward(&self, cache: &ForwardCache, upstream: &Tensor2) -> Result<(Vec<f64>, Tensor2)> {
        let n = cache.inputs[0].rows;
        if upstream.rows != n || upstream.cols != self.output_size() {
            return Err(Error::Shape(format!(
                "upstream gradient is {}x{}, output is {}x{}",
                upstream.rows,
                upstream.cols,
                n,
                self.output_size()
            )));
        }
        if cache.inputs.len() != self.slots.len() {
            return Err(Error::Shape("forward cache does not belong to this network".into()));
        }
        let mut grads = vec![0.0; self.params.len()];
        let mut delta = upstream.clone();
        for (i, s) in self.slots.iter().enumerate().rev() {
            if i < self.slots.len() - 1 {
                for (d, z) in delta.data.iter_mut().zip(&cache.pre[i].data) {
                    *d *= elu_grad(*z);
                }
            }
            let input = &cache.inputs[i];
            gemm(
                s.fan_in,
                n,
                s.fan_out,
                1.0,
                &input.data,
                true,
                &delta.data,
                false,
                0.0,
                &mut grads[s.w..s.w + s.fan_in * s.fan_out],
            );
            for r in 0..n {
                for (g, d) in grads[s.b..s.b + s.fan_out].iter_mut().zip(delta.row(r)) {
                    *g += d;
                }
            }
            let mut below = Tensor2::zeros(n, s.fan_in);
            let w = &self.params[s.w..s.w + s.fan_in * s.fan_out];
            gemm(n, s.fan_out, s.fan_in, 1.0, &delta.data, false, w, true, 0.0, &mut below.data);
            delta = below;
        }

        let dx = match (&self.batch_norm, &cache.bn) {
            (Some(_), Some(bc)) => {
                let f = self.input_size();
                let gamma = &self.params[..f];
                let mut dx = Tensor2::zeros(n, f);
                for j in 0..f {
                    let mut dgamma = 0.0;
                    let mut dbeta = 0.0;
                    let mut sum_dxhat = 0.0;
                    let mut sum_dxhat_xhat = 0.0;
                    for r in 0..n {
                        let dy = delta.get(r, j);
                        let xh = bc.xhat.get(r, j);
                        dgamma += dy * xh;
                        dbeta += dy;
                        sum_dxhat += dy * gamma[j];
                        sum_dxhat_xhat += dy * gamma[j] * xh;
                    }
                    grads[j] = dgamma;
                    grads[f + j] = dbeta;
                    let inv = bc.inv_std[j];
                    for r in 0..n {
                        let dxhat = delta.get(r, j) * gamma[j];
                        let v = match bc.mode {
                            Mode::Eval => dxhat * inv,
                            Mode::Train => {
                                let xh = bc.xhat.get(r, j);
                                inv / n as f64 * (n as f64 * dxhat - sum_dxhat - xh * sum_dxhat_xhat)
                            }
                        };
                        dx.set(r, j, v);
                    }
                }
                dx
            }
            (None, None) => delta,
            _ => return Err(Error::Shape("forward cache does not belong to this network".into())),
        };
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::non_finite("parameter gradient"));
        }
        Ok((grads, dx))
    }

    /// `self ← τ·self + (1-τ)·online`, including running statistics.
    pub fn soft_update_from(&mut self, online: &Mlp, tau: f64) -> Result<()> {
        if self.layer_sizes != online.layer_sizes || self.params.len() != online.params.len() {
            return Err(Error::Shape("soft update between differently shaped networks".into()));
        }
        for (t, o) in self.params.iter_mut().zip(&online.params) {
            *t = tau * *t + (1.0 - tau) * o;
        }
        if let (Some(t), Some(o)) = (self.batch_norm.as_mut(), online.batch_norm.as_ref()) {
            for (a, b) in t.running_mean.iter_mut().zip(&o.running_mean) {
                *a = tau * *a + (1.0 - tau) * b;
            }
            for (a, b) in t.running_var.iter_mut().zip(&o.running_var) {
                *a = tau * *a + (1.0 - tau) * b;
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let net: Mlp = serde_json::from_str(text)?;
        let expected: usize = net.batch_norm.as_ref().map_or(0, |_| 2 * net.layer_sizes[0])
            + net.layer_sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum::<usize>();
        if net.params.len() != expected {
            return Err(Error::Shape(format!("checkpoint has {} params, layer sizes need {expected}", net.params.len())));
        }
        Ok(net)
    }
}
