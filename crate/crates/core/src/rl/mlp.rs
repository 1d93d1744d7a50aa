//! Dense feed-forward network with tanh hidden layers and a linear output layer.
//!
//! All weights and biases live in one flat vector so optimizers, gradient checks
//! and checkpoints can treat them uniformly. Layer `l` occupies
//! `[W_l (fan_out x fan_in, row-major), b_l (fan_out)]`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::RlError;

/// Uniform Glorot initialization: entries in `[-L, L]`, `L = sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_init<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Vec<f64> {
    assert!(fan_in >= 1 && fan_out >= 1, "layer fans must be at least 1");
    let limit = glorot_limit(fan_in, fan_out);
    (0..fan_in * fan_out).map(|_| rng.random_range(-limit..=limit)).collect()
}

pub fn glorot_limit(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    /// Layer widths including input and output, e.g. `[8, 64, 64, 13]`.
    sizes: Vec<usize>,
    pub params: Vec<f64>,
}

/// Activations recorded by [`Mlp::forward`]; `layers[0]` is the input and
/// `layers[l]` the output of layer `l` (after tanh for hidden layers).
#[derive(Debug, Clone, Default)]
pub struct ForwardCache {
    layers: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.layers.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

impl Mlp {
    pub fn zeros(sizes: &[usize]) -> Self {
        assert!(sizes.len() >= 2 && sizes.iter().all(|&s| s > 0), "invalid layer sizes {sizes:?}");
        let n = sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        Self { sizes: sizes.to_vec(), params: vec![0.0; n] }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn glorot<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Self {
        let mut net = Self::zeros(sizes);
        for l in 0..net.n_layers() {
            let (fan_in, fan_out) = (net.sizes[l], net.sizes[l + 1]);
            let w = glorot_init(fan_in, fan_out, rng);
            let (off, _) = net.layer_offsets(l);
            net.params[off..off + w.len()].copy_from_slice(&w);
        }
        net
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn n_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    /// Offsets of the weight block and the bias block of layer `l`.
    pub fn layer_offsets(&self, l: usize) -> (usize, usize) {
        let start: usize = self.sizes[..=l].windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        (start, start + self.sizes[l] * self.sizes[l + 1])
    }

    pub fn weights_mut(&mut self, l: usize) -> &mut [f64] {
        let (w, b) = self.layer_offsets(l);
        &mut self.params[w..b]
    }

    pub fn bias_mut(&mut self, l: usize) -> &mut [f64] {
        let (_, b) = self.layer_offsets(l);
        let n = self.sizes[l + 1];
        &mut self.params[b..b + n]
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, ForwardCache), RlError> {
        if input.len() != self.input_dim() {
            return Err(RlError::DimensionMismatch { expected: self.input_dim(), got: input.len() });
        }
        let mut layers = Vec::with_capacity(self.sizes.len());
        layers.push(input.to_vec());
        let last = self.n_layers() - 1;
        let mut off = 0;
        for l in 0..self.n_layers() {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[off..off + fan_in * fan_out];
            let b = &self.params[off + fan_in * fan_out..off + fan_in * fan_out + fan_out];
            off += fan_in * fan_out + fan_out;
            let x = &layers[l];
            let mut z: Vec<f64> = w
                .chunks_exact(fan_in)
                .zip(b)
                .map(|(row, &bias)| bias + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>())
                .collect();
            if l != last {
                z.iter_mut().for_each(|v| *v = v.tanh());
            }
            layers.push(z);
        }
        let out = layers.last().unwrap().clone();
        Ok((out, ForwardCache { layers }))
    }

    /// Output only; skips keeping the cache around.
    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>, RlError> {
        self.forward(input).map(|(out, _)| out)
    }

    /// Reverse-mode pass: accumulates `d(upstream · output)/d(params)` into `grads`
    /// and returns the gradient with respect to the input.
    pub fn backward(&self, cache: &ForwardCache, upstream: &[f64], grads: &mut [f64]) -> Vec<f64> {
        assert_eq!(grads.len(), self.params.len(), "gradient buffer has wrong length");
        assert_eq!(upstream.len(), self.output_dim(), "upstream gradient has wrong length");
        let mut delta = upstream.to_vec();
        for l in (0..self.n_layers()).rev() {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let (w_off, b_off) = self.layer_offsets(l);
            if l != self.n_layers() - 1 {
                // through tanh: d/dz tanh(z) = 1 - tanh(z)^2
                for (d, a) in delta.iter_mut().zip(&cache.layers[l + 1]) {
                    *d *= 1.0 - a * a;
                }
            }
            let x = &cache.layers[l];
            for (j, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                grads[b_off + j] += d;
                let row = &mut grads[w_off + j * fan_in..w_off + (j + 1) * fan_in];
                row.iter_mut().zip(x).for_each(|(g, xi)| *g += d * xi);
            }
            let w = &self.params[w_off..b_off];
            let mut prev = vec![0.0; fan_in];
            for (j, &d) in delta.iter().enumerate().take(fan_out) {
                if d == 0.0 {
                    continue;
                }
                let row = &w[j * fan_in..(j + 1) * fan_in];
                prev.iter_mut().zip(row).for_each(|(p, wij)| *p += d * wij);
            }
            delta = prev;
        }
        delta
    }

    /// Convenience wrapper returning a fresh gradient vector.
    pub fn gradient(&self, input: &[f64], upstream: &[f64]) -> Result<Vec<f64>, RlError> {
        let (_, cache) = self.forward(input)?;
        let mut grads = vec![0.0; self.params.len()];
        self.backward(&cache, upstream, &mut grads);
        Ok(grads)
    }
}
