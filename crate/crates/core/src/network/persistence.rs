//! The persistence layer: each channel of its input is cut into segments of
//! length `T`, and every (segment, channel) signal is replaced by its sampled
//! persistence landscape.
//!
//! Output channel `u * P * Q + k * Q + q` holds `lambda_{k+1}` of input
//! channel `u` at grid point `q`; output time step `s` is segment `s`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::FeatureMap;
use crate::error::{Error, Result};
use crate::landscape::{accumulate_backward, sample_pairs, LandscapeMatrix, LandscapeSpec};
use crate::topology::{superlevel_pairs, validate};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PersistenceLayerSpec {
    #[serde(flatten)]
    pub landscape: LandscapeSpec,
    pub segment_length: usize,
}

impl Default for PersistenceLayerSpec {
    fn default() -> Self {
        PersistenceLayerSpec {
            landscape: LandscapeSpec::default(),
            segment_length: 32,
        }
    }
}

impl PersistenceLayerSpec {
    pub fn output_channels(&self, input_channels: usize) -> usize {
        self.landscape.block_len() * input_channels
    }

    pub fn output_len(&self, len: usize) -> Option<usize> {
        let n = len / self.segment_length;
        (n > 0).then_some(n)
    }

    pub(crate) fn violations(&self) -> Vec<String> {
        let mut v = self.landscape.violations();
        if self.segment_length < 2 {
            v.push(format!(
                "persistence segment_length must be >= 2, got {}",
                self.segment_length
            ));
        }
        v
    }
}

/// Landscape routes of every (segment, channel) block of one forward call.
#[derive(Debug, Clone)]
pub struct PersistenceCache {
    input_channels: usize,
    input_len: usize,
    segments: usize,
    spec: PersistenceLayerSpec,
    /// Indexed by `segment * U + channel`.
    blocks: Vec<LandscapeMatrix>,
}

impl PersistenceCache {
    pub fn block(&self, segment: usize, channel: usize) -> &LandscapeMatrix {
        &self.blocks[segment * self.input_channels + channel]
    }
}

pub fn persistence_forward(input: &FeatureMap, spec: &PersistenceLayerSpec) -> Result<(FeatureMap, PersistenceCache)> {
    let (u, n, t) = (input.channels(), input.len(), spec.segment_length);
    let segments = spec.output_len(n).ok_or_else(|| {
        Error::invalid(format!(
            "input of length {n} shorter than persistence segment length {t}"
        ))
    })?;
    validate(input.data()).map_err(|_| Error::invalid("persistence layer input contains non-finite values"))?;

    let blocks: Vec<LandscapeMatrix> = (0..segments * u)
        .into_par_iter()
        .map(|i| {
            let (s, c) = (i / u, i % u);
            let signal = &input.channel(c)[s * t..(s + 1) * t];
            sample_pairs(&superlevel_pairs(signal), &spec.landscape)
        })
        .collect();

    let block_len = spec.landscape.block_len();
    let mut out = FeatureMap::zeros(u * block_len, segments);
    for s in 0..segments {
        for c in 0..u {
            for (j, &v) in blocks[s * u + c].values.iter().enumerate() {
                out.set(c * block_len + j, s, v);
            }
        }
    }
    Ok((
        out,
        PersistenceCache {
            input_channels: u,
            input_len: n,
            segments,
            spec: *spec,
            blocks,
        },
    ))
}

pub fn persistence_backward(cache: &PersistenceCache, upstream: &FeatureMap) -> Result<FeatureMap> {
    let (u, t) = (cache.input_channels, cache.spec.segment_length);
    let block_len = cache.spec.landscape.block_len();
    if upstream.channels() != u * block_len || upstream.len() != cache.segments {
        return Err(Error::invalid(format!(
            "upstream gradient is {}x{}, persistence output is {}x{}",
            upstream.channels(),
            upstream.len(),
            u * block_len,
            cache.segments
        )));
    }
    let mut grad = FeatureMap::zeros(u, cache.input_len);
    let mut block_up = vec![0.0; block_len];
    for s in 0..cache.segments {
        for c in 0..u {
            for (j, slot) in block_up.iter_mut().enumerate() {
                *slot = upstream.get(c * block_len + j, s);
            }
            let seg = &mut grad.channel_mut(c)[s * t..(s + 1) * t];
            accumulate_backward(&cache.blocks[s * u + c], &block_up, seg)?;
        }
    }
    Ok(grad)
}
