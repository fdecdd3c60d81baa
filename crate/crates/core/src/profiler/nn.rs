//! Dense feed-forward networks with tanh hidden layers, hand-written
//! backpropagation and momentum SGD.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::math::{sqrt, tanh};
use crate::{Error, Result};

/// Parameters of every layer in one flat vector: for each layer the
/// `out x in` weight matrix (row-major) followed by the `out` biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    /// Layer widths, input first.
    pub sizes: Vec<usize>,
    pub params: Vec<f64>,
}

/// Activations of one forward pass, input first.
#[derive(Debug, Clone)]
pub struct Trace {
    acts: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.acts.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
}

impl Mlp {
    /// Glorot-uniform weights, zero biases. With `zero_output` the last
    /// layer starts at zero so every output is exactly 0.
    pub fn new(sizes: &[usize], zero_output: bool, rng: &mut impl Rng) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Config(format!("invalid layer sizes {sizes:?}")));
        }
        let mut params = Vec::with_capacity(param_count(sizes));
        let last = sizes.len() - 2;
        for (l, w) in sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = sqrt(6.0 / (fan_in + fan_out) as f64);
            for _ in 0..fan_in * fan_out {
                let v = if zero_output && l == last { 0.0 } else { rng.random_range(-bound..bound) };
                params.push(v);
            }
            params.extend(core::iter::repeat_n(0.0, fan_out));
        }
        Ok(Mlp { sizes: sizes.to_vec(), params })
    }

    pub fn input_len(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_len(&self) -> usize {
        *self.sizes.last().expect("at least two layers")
    }

    pub fn validate(&self) -> Result<()> {
        if self.sizes.len() < 2 || self.params.len() != param_count(&self.sizes) {
            return Err(Error::Shape { expected: param_count(&self.sizes), got: self.params.len() });
        }
        if self.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Config("non-finite network parameter".into()));
        }
        Ok(())
    }

    fn layer_offsets(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        let mut off = 0;
        self.sizes.windows(2).map(move |w| {
            let start = off;
            off += w[0] * w[1] + w[1];
            (start, w[0], w[1])
        })
    }

    pub fn forward(&self, x: &[f64]) -> Result<Trace> {
        if x.len() != self.input_len() {
            return Err(Error::Shape { expected: self.input_len(), got: x.len() });
        }
        let n_layers = self.sizes.len() - 1;
        let mut acts = Vec::with_capacity(n_layers + 1);
        acts.push(x.to_vec());
        for (l, (off, n_in, n_out)) in self.layer_offsets().enumerate() {
            let input = &acts[l];
            let w = &self.params[off..off + n_in * n_out];
            let b = &self.params[off + n_in * n_out..off + n_in * n_out + n_out];
            let mut z: Vec<f64> = (0..n_out)
                .map(|o| b[o] + w[o * n_in..(o + 1) * n_in].iter().zip(input).map(|(a, c)| a * c).sum::<f64>())
                .collect();
            if l + 1 < n_layers {
                for v in &mut z {
                    *v = tanh(*v);
                }
            }
            acts.push(z);
        }
        Ok(Trace { acts })
    }

    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(x)?.acts.pop().unwrap_or_default())
    }

    /// Accumulate `d loss / d params` into `grads` given `d loss / d output`.
    pub fn backward(&self, trace: &Trace, grad_out: &[f64], grads: &mut [f64]) {
        debug_assert_eq!(grads.len(), self.params.len());
        let layers: Vec<_> = self.layer_offsets().collect();
        let mut delta = grad_out.to_vec();
        for l in (0..layers.len()).rev() {
            let (off, n_in, n_out) = layers[l];
            let input = &trace.acts[l];
            for o in 0..n_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                let row = off + o * n_in;
                for i in 0..n_in {
                    grads[row + i] += d * input[i];
                }
                grads[off + n_in * n_out + o] += d;
            }
            if l == 0 {
                break;
            }
            let w = &self.params[off..off + n_in * n_out];
            let mut prev = vec![0.0; n_in];
            for o in 0..n_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                for i in 0..n_in {
                    prev[i] += w[o * n_in + i] * d;
                }
            }
            // hidden activations are tanh outputs
            for (p, a) in prev.iter_mut().zip(input) {
                *p *= 1.0 - a * a;
            }
            delta = prev;
        }
    }

    /// Weight matrix and bias of layer `l` as slices.
    pub fn layer(&self, l: usize) -> (&[f64], &[f64]) {
        let (off, n_in, n_out) = self.layer_offsets().nth(l).expect("layer index in range");
        (&self.params[off..off + n_in * n_out], &self.params[off + n_in * n_out..off + n_in * n_out + n_out])
    }

    fn layer_mut(&mut self, l: usize) -> (&mut [f64], usize, usize) {
        let (off, n_in, n_out) = self.layer_offsets().nth(l).expect("layer index in range");
        (&mut self.params[off..off + n_in * n_out + n_out], n_in, n_out)
    }

    /// Overwrite the output-layer biases.
    pub fn set_output_bias(&mut self, bias: &[f64]) -> Result<()> {
        let last = self.sizes.len() - 2;
        let (dst, n_in, n_out) = self.layer_mut(last);
        if bias.len() != n_out {
            return Err(Error::Shape { expected: n_out, got: bias.len() });
        }
        dst[n_in * n_out..].copy_from_slice(bias);
        Ok(())
    }

    /// Copy the hidden layers of `src` into `self`. Inputs that `src` lacks
    /// get zero weights; the output layer is left alone.
    pub fn copy_trunk_from(&mut self, src: &Mlp) -> Result<()> {
        let hidden = self.sizes.len() - 2;
        if src.sizes.len() != self.sizes.len() || src.sizes[1..=hidden] != self.sizes[1..=hidden] || src.sizes[0] > self.sizes[0] {
            return Err(Error::Config(format!("trunk {:?} does not fit {:?}", src.sizes, self.sizes)));
        }
        for l in 0..hidden {
            let (sw, sb) = src.layer(l);
            let s_in = src.sizes[l];
            let (dst, n_in, n_out) = self.layer_mut(l);
            for o in 0..n_out {
                for i in 0..n_in {
                    dst[o * n_in + i] = if i < s_in { sw[o * s_in + i] } else { 0.0 };
                }
                dst[n_in * n_out + o] = sb[o];
            }
        }
        Ok(())
    }
}

/// Gradient descent with classical momentum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    velocity: Vec<f64>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64, n_params: usize) -> Self {
        Sgd { lr, momentum, velocity: vec![0.0; n_params] }
    }

    /// `params -= lr * grads`, smoothed by momentum.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        if self.velocity.len() != params.len() {
            self.velocity = vec![0.0; params.len()];
        }
        for ((p, v), g) in params.iter_mut().zip(&mut self.velocity).zip(grads) {
            *v = self.momentum * *v - self.lr * g;
            *p += *v;
        }
    }
}
