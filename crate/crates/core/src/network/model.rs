use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    concat_branches, conv1d_backward, conv1d_forward, mean_pool_backward, mean_pool_forward,
    persistence_backward, persistence_forward, split_branches, Activation, ConvCache, ConvParams,
    FeatureMap, NetworkSpec, PersistenceCache,
};
use crate::error::{Error, Result};

/// Parameters of every layer in declaration order: early, middle, late.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    pub layers: Vec<ConvParams>,
}

impl Parameters {
    pub fn zeros(spec: &NetworkSpec) -> Self {
        Parameters {
            layers: spec
                .layer_inputs()
                .iter()
                .map(|(l, c)| ConvParams::zeros(l, *c))
                .collect(),
        }
    }

    /// Uniform in `±sqrt(6 / (fan_in + fan_out))` with zero biases.
    pub fn glorot(spec: &NetworkSpec, rng: &mut impl Rng) -> Self {
        let mut p = Parameters::zeros(spec);
        for (layer, (l, c)) in p.layers.iter_mut().zip(spec.layer_inputs()) {
            let fan_in = c * l.filter_length;
            let fan_out = l.num_filters * l.filter_length;
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for w in &mut layer.weights {
                *w = rng.random_range(-bound..bound);
            }
        }
        p
    }

    pub fn len(&self) -> usize {
        self.layers.iter().map(ConvParams::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.iter())
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers.iter_mut().flat_map(|l| l.iter_mut())
    }

    pub fn add_assign(&mut self, other: &Parameters) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for v in self.iter_mut() {
            *v *= s;
        }
    }
}

/// Inverted dropout applied to the inputs of every late layer except the
/// output layer.
#[derive(Debug, Clone)]
pub struct Dropout {
    pub rate: f64,
    pub rng: ChaCha8Rng,
}

impl Dropout {
    pub fn new(rate: f64, seed: u64) -> Self {
        Dropout {
            rate,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn mask(&mut self, len: usize) -> Vec<f64> {
        let keep = 1.0 - self.rate;
        (0..len)
            .map(|_| {
                if self.rng.random::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            })
            .collect()
    }
}

/// Everything [`Network::backward`] needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    early: Vec<ConvCache>,
    middle: Option<ConvCache>,
    persistence: Option<PersistenceCache>,
    persistence_out: Option<FeatureMap>,
    mid: FeatureMap,
    late: Vec<ConvCache>,
    masks: Vec<Option<Vec<f64>>>,
    step_scores: FeatureMap,
    pub scores: Vec<f64>,
}

impl ForwardTrace {
    /// Persistence-layer output (`P*Q*U` channels x segments), if the network has one.
    pub fn persistence_output(&self) -> Option<&FeatureMap> {
        self.persistence_out.as_ref()
    }

    pub fn mid(&self) -> &FeatureMap {
        &self.mid
    }

    /// Per-segment tag probabilities before the final mean pooling.
    pub fn step_scores(&self) -> &FeatureMap {
        &self.step_scores
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    spec: NetworkSpec,
    params: Parameters,
}

const LOSS_EPS: f64 = 1e-12;

/// Mean binary cross-entropy and its gradient with respect to the scores.
pub fn bce_loss(scores: &[f64], labels: &[f64]) -> (f64, Vec<f64>) {
    let n = scores.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(scores.len());
    for (&s, &y) in scores.iter().zip(labels) {
        let p = s.clamp(LOSS_EPS, 1.0 - LOSS_EPS);
        loss -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
        grad.push((p - y) / (p * (1.0 - p)) / n);
    }
    (loss / n, grad)
}

impl Network {
    pub fn new(spec: NetworkSpec, params: Parameters) -> Result<Self> {
        spec.validate()?;
        let expected = Parameters::zeros(&spec);
        let shapes_match = expected.layers.len() == params.layers.len()
            && expected
                .layers
                .iter()
                .zip(&params.layers)
                .all(|(a, b)| a.weights.len() == b.weights.len() && a.biases.len() == b.biases.len());
        if !shapes_match {
            return Err(Error::invalid("parameter shapes do not match the network spec"));
        }
        Ok(Network { spec, params })
    }

    /// Seeded uniform fan-in/fan-out initialization.
    pub fn initialize(spec: NetworkSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = Parameters::glorot(&spec, &mut rng);
        Ok(Network { spec, params })
    }

    pub fn zeros(spec: NetworkSpec) -> Result<Self> {
        spec.validate()?;
        let params = Parameters::zeros(&spec);
        Ok(Network { spec, params })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn params(&self) -> &Parameters {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Parameters {
        &mut self.params
    }

    pub fn into_parts(self) -> (NetworkSpec, Parameters) {
        (self.spec, self.params)
    }

    fn middle_index(&self) -> usize {
        self.spec.early.len()
    }

    /// Index of the first late layer within [`Parameters::layers`].
    pub fn late_index(&self) -> usize {
        self.spec.early.len() + usize::from(self.spec.middle.is_some())
    }

    pub fn forward(&self, input: &FeatureMap, mut dropout: Option<&mut Dropout>) -> Result<ForwardTrace> {
        let spec = &self.spec;
        if input.channels() != spec.input_channels {
            return Err(Error::invalid(format!(
                "network expects {} input channels, got {}",
                spec.input_channels,
                input.channels()
            )));
        }
        spec.trace_shapes(input.len())?;
        let act = spec.activation;

        let mut x = input.clone();
        let mut early = Vec::with_capacity(spec.early.len());
        for (i, l) in spec.early.iter().enumerate() {
            let (y, cache) = conv1d_forward(&x, l, &self.params.layers[i], act)?;
            early.push(cache);
            x = y;
        }

        let (middle_out, middle) = match &spec.middle {
            Some(m) => {
                let (y, c) = conv1d_forward(&x, m, &self.params.layers[self.middle_index()], act)?;
                (Some(y), Some(c))
            }
            None => (None, None),
        };
        let (persistence_out, persistence) = match &spec.persistence {
            Some(p) => {
                let (y, c) = persistence_forward(&x, p)?;
                (Some(y), Some(c))
            }
            None => (None, None),
        };
        let mid = match (&middle_out, &persistence_out) {
            (Some(a), Some(b)) => concat_branches(a, b)?,
            (Some(a), None) => a.clone(),
            (None, Some(b)) => b.clone(),
            (None, None) => x,
        };

        let late_start = self.late_index();
        let n_late = spec.late.len();
        let mut late = Vec::with_capacity(n_late);
        let mut masks = Vec::with_capacity(n_late);
        let mut h = mid.clone();
        for (i, l) in spec.late.iter().enumerate() {
            let is_output = i + 1 == n_late;
            let mask = match dropout.as_deref_mut() {
                Some(d) if !is_output && d.rate > 0.0 => {
                    let m = d.mask(h.data().len());
                    for (v, s) in h.data_mut().iter_mut().zip(&m) {
                        *v *= s;
                    }
                    Some(m)
                }
                _ => None,
            };
            masks.push(mask);
            let a = if is_output { Activation::Sigmoid } else { act };
            let (y, c) = conv1d_forward(&h, l, &self.params.layers[late_start + i], a)?;
            late.push(c);
            h = y;
        }
        let scores = mean_pool_forward(&h)?;
        Ok(ForwardTrace {
            early,
            middle,
            persistence,
            persistence_out,
            mid,
            late,
            masks,
            step_scores: h,
            scores,
        })
    }

    /// Deterministic inference: tag probabilities for the whole input.
    pub fn predict(&self, input: &FeatureMap) -> Result<Vec<f64>> {
        Ok(self.forward(input, None)?.scores)
    }

    /// Gradients of a scalar objective given its gradient w.r.t. the scores.
    /// Returns `(parameter gradient, input gradient)`.
    pub fn backward(&self, trace: &ForwardTrace, score_grad: &[f64]) -> Result<(Parameters, FeatureMap)> {
        let spec = &self.spec;
        if score_grad.len() != spec.num_tags {
            return Err(Error::invalid(format!(
                "score gradient has {} entries, network has {} tags",
                score_grad.len(),
                spec.num_tags
            )));
        }
        let mut grads = Parameters::zeros(spec);
        let late_start = self.late_index();

        let mut g = mean_pool_backward(score_grad, trace.step_scores.len());
        for i in (0..spec.late.len()).rev() {
            let idx = late_start + i;
            let (gi, gp) = conv1d_backward(&trace.late[i], &spec.late[i], &self.params.layers[idx], &g)?;
            grads.layers[idx] = gp;
            g = gi;
            if let Some(mask) = &trace.masks[i] {
                for (v, s) in g.data_mut().iter_mut().zip(mask) {
                    *v *= s;
                }
            }
        }

        let (g_middle, g_pers) = split_branches(&g, spec.middle_channels())?;
        let mut g_early: Option<FeatureMap> = None;
        if let (Some(m), Some(cache)) = (&spec.middle, &trace.middle) {
            let idx = self.middle_index();
            let (gi, gp) = conv1d_backward(cache, m, &self.params.layers[idx], &g_middle)?;
            grads.layers[idx] = gp;
            g_early = Some(gi);
        }
        if let Some(cache) = &trace.persistence {
            let gi = persistence_backward(cache, &g_pers)?;
            g_early = Some(match g_early {
                Some(mut acc) => {
                    for (a, b) in acc.data_mut().iter_mut().zip(gi.data()) {
                        *a += b;
                    }
                    acc
                }
                None => gi,
            });
        }
        let mut g = g_early.unwrap_or(g);
        for i in (0..spec.early.len()).rev() {
            let (gi, gp) = conv1d_backward(&trace.early[i], &spec.early[i], &self.params.layers[i], &g)?;
            grads.layers[i] = gp;
            g = gi;
        }
        Ok((grads, g))
    }

    /// Loss and parameter gradient for one labelled example.
    pub fn loss_and_gradient(
        &self,
        input: &FeatureMap,
        labels: &[f64],
        dropout: Option<&mut Dropout>,
    ) -> Result<(f64, Parameters)> {
        if labels.len() != self.spec.num_tags {
            return Err(Error::invalid(format!(
                "label vector has {} entries, network has {} tags",
                labels.len(),
                self.spec.num_tags
            )));
        }
        let trace = self.forward(input, dropout)?;
        let (loss, g) = bce_loss(&trace.scores, labels);
        let (grads, _) = self.backward(&trace, &g)?;
        Ok((loss, grads))
    }
}
