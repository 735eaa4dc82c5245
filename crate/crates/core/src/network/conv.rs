//! 1-D convolution over the full channel depth, followed by a pointwise
//! nonlinearity and non-overlapping max pooling.

use serde::{Deserialize, Serialize};

use super::FeatureMap;
use crate::error::{Error, Result};

/// `(K, L, S)`: filter count, filter length along time, pooling width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvLayerSpec {
    pub num_filters: usize,
    pub filter_length: usize,
    pub pool_size: usize,
}

impl ConvLayerSpec {
    pub const fn new(num_filters: usize, filter_length: usize, pool_size: usize) -> Self {
        ConvLayerSpec {
            num_filters,
            filter_length,
            pool_size,
        }
    }

    /// A `(K, 1, 1)` layer: a per-step fully connected map.
    pub const fn pointwise(num_filters: usize) -> Self {
        ConvLayerSpec::new(num_filters, 1, 1)
    }

    /// Output time length for an input of `len` steps, or `None` if the
    /// input is too short to produce a single output.
    pub fn output_len(&self, len: usize) -> Option<usize> {
        if len < self.filter_length {
            return None;
        }
        let out = (len - self.filter_length + 1) / self.pool_size;
        (out > 0).then_some(out)
    }

    /// Smallest input length with a non-empty output.
    pub fn min_input_len(&self) -> usize {
        self.filter_length + self.pool_size - 1
    }

    pub fn weight_len(&self, in_channels: usize) -> usize {
        self.num_filters * in_channels * self.filter_length
    }

    pub(crate) fn violations(&self, name: &str) -> Vec<String> {
        let mut v = Vec::new();
        for (field, value) in [
            ("num_filters", self.num_filters),
            ("filter_length", self.filter_length),
            ("pool_size", self.pool_size),
        ] {
            if value == 0 {
                v.push(format!("{name}: {field} must be >= 1"));
            }
        }
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Linear,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Linear => x,
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative expressed through the activated value `y`.
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Linear => 1.0,
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Weights laid out `[filter][channel][tap]`, one bias per filter.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl ConvParams {
    pub fn zeros(spec: &ConvLayerSpec, in_channels: usize) -> Self {
        ConvParams {
            weights: vec![0.0; spec.weight_len(in_channels)],
            biases: vec![0.0; spec.num_filters],
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len() + self.biases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.weights.iter().chain(self.biases.iter())
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights.iter_mut().chain(self.biases.iter_mut())
    }

    pub fn add_assign(&mut self, other: &ConvParams) {
        for (a, b) in self.iter_mut().zip(other.iter()) {
            *a += b;
        }
    }
}

/// Forward state needed by [`conv1d_backward`].
#[derive(Debug, Clone)]
pub struct ConvCache {
    input: FeatureMap,
    /// Activated pre-pool values, `K x (out_len * S)`.
    activated: Vec<f64>,
    /// Time index of each pooled maximum, `K x out_len`.
    argmax: Vec<usize>,
    out_len: usize,
    activation: Activation,
}

fn check_params(spec: &ConvLayerSpec, in_channels: usize, params: &ConvParams) -> Result<()> {
    if params.weights.len() != spec.weight_len(in_channels) || params.biases.len() != spec.num_filters {
        return Err(Error::invalid(format!(
            "conv layer ({}, {}, {}) on {in_channels} channels expects {} weights and {} biases, got {} and {}",
            spec.num_filters,
            spec.filter_length,
            spec.pool_size,
            spec.weight_len(in_channels),
            spec.num_filters,
            params.weights.len(),
            params.biases.len()
        )));
    }
    Ok(())
}

pub fn conv1d_forward(
    input: &FeatureMap,
    spec: &ConvLayerSpec,
    params: &ConvParams,
    activation: Activation,
) -> Result<(FeatureMap, ConvCache)> {
    let (channels, n) = (input.channels(), input.len());
    check_params(spec, channels, params)?;
    let out_len = spec.output_len(n).ok_or_else(|| {
        Error::invalid(format!(
            "input of length {n} too short for conv layer ({}, {}, {}); needs at least {}",
            spec.num_filters,
            spec.filter_length,
            spec.pool_size,
            spec.min_input_len()
        ))
    })?;
    let (k_count, taps, pool) = (spec.num_filters, spec.filter_length, spec.pool_size);
    // Only positions that land in a complete pooling window are computed.
    let used = out_len * pool;

    let mut activated = vec![0.0; k_count * used];
    for k in 0..k_count {
        let row = &mut activated[k * used..(k + 1) * used];
        row.fill(params.biases[k]);
        for c in 0..channels {
            let x = input.channel(c);
            let w = &params.weights[(k * channels + c) * taps..(k * channels + c + 1) * taps];
            for (l, &wl) in w.iter().enumerate() {
                for (r, &xv) in row.iter_mut().zip(&x[l..l + used]) {
                    *r += wl * xv;
                }
            }
        }
        for r in row.iter_mut() {
            *r = activation.apply(*r);
        }
    }

    let mut out = FeatureMap::zeros(k_count, out_len);
    let mut argmax = vec![0; k_count * out_len];
    for k in 0..k_count {
        let row = &activated[k * used..(k + 1) * used];
        for j in 0..out_len {
            let mut best = j * pool;
            for t in j * pool + 1..(j + 1) * pool {
                if row[t] > row[best] {
                    best = t;
                }
            }
            argmax[k * out_len + j] = best;
            out.set(k, j, row[best]);
        }
    }

    Ok((
        out,
        ConvCache {
            input: input.clone(),
            activated,
            argmax,
            out_len,
            activation,
        },
    ))
}

/// Returns `(input gradient, parameter gradient)`.
pub fn conv1d_backward(
    cache: &ConvCache,
    spec: &ConvLayerSpec,
    params: &ConvParams,
    upstream: &FeatureMap,
) -> Result<(FeatureMap, ConvParams)> {
    let input = &cache.input;
    let (channels, n) = (input.channels(), input.len());
    check_params(spec, channels, params)?;
    if upstream.channels() != spec.num_filters || upstream.len() != cache.out_len {
        return Err(Error::invalid(format!(
            "upstream gradient is {}x{}, conv output is {}x{}",
            upstream.channels(),
            upstream.len(),
            spec.num_filters,
            cache.out_len
        )));
    }
    let (k_count, taps) = (spec.num_filters, spec.filter_length);
    let used = cache.out_len * spec.pool_size;

    // Gradient w.r.t. pre-activation values, nonzero only at pooled maxima.
    let mut pre = vec![0.0; k_count * used];
    for k in 0..k_count {
        for j in 0..cache.out_len {
            let t = cache.argmax[k * cache.out_len + j];
            let y = cache.activated[k * used + t];
            pre[k * used + t] += upstream.get(k, j) * cache.activation.derivative_from_output(y);
        }
    }

    let mut grad_in = FeatureMap::zeros(channels, n);
    let mut grad = ConvParams::zeros(spec, channels);
    for k in 0..k_count {
        let g = &pre[k * used..(k + 1) * used];
        grad.biases[k] = g.iter().sum();
        for c in 0..channels {
            let x = input.channel(c);
            let base = (k * channels + c) * taps;
            for l in 0..taps {
                let w = params.weights[base + l];
                grad.weights[base + l] = g.iter().zip(&x[l..l + used]).map(|(a, b)| a * b).sum();
                let gi = &mut grad_in.channel_mut(c)[l..l + used];
                for (d, &gv) in gi.iter_mut().zip(g) {
                    *d += w * gv;
                }
            }
        }
    }
    Ok((grad_in, grad))
}
