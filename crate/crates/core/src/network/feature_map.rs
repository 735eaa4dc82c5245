use crate::error::{Error, Result};

/// A `channels x len` array stored channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    channels: usize,
    len: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(channels: usize, len: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * len {
            return Err(Error::invalid(format!(
                "feature map {channels}x{len} needs {} values, got {}",
                channels * len,
                data.len()
            )));
        }
        Ok(FeatureMap { channels, len, data })
    }

    pub fn zeros(channels: usize, len: usize) -> Self {
        FeatureMap {
            channels,
            len,
            data: vec![0.0; channels * len],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let len = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != len) {
            return Err(Error::invalid("feature map rows differ in length"));
        }
        Ok(FeatureMap {
            channels: rows.len(),
            len,
            data: rows.concat(),
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.data[c * self.len..(c + 1) * self.len]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        &mut self.data[c * self.len..(c + 1) * self.len]
    }

    pub fn get(&self, c: usize, t: usize) -> f64 {
        self.data[c * self.len + t]
    }

    pub fn set(&mut self, c: usize, t: usize, v: f64) {
        self.data[c * self.len + t] = v;
    }

    /// Concatenation along the time axis.
    pub fn concat_time(&self, other: &FeatureMap) -> Result<FeatureMap> {
        if self.channels != other.channels {
            return Err(Error::invalid(format!(
                "cannot join {} and {} channels along time",
                self.channels, other.channels
            )));
        }
        let len = self.len + other.len;
        let mut data = Vec::with_capacity(self.channels * len);
        for c in 0..self.channels {
            data.extend_from_slice(self.channel(c));
            data.extend_from_slice(other.channel(c));
        }
        Ok(FeatureMap {
            channels: self.channels,
            len,
            data,
        })
    }
}

/// Stacks two maps along the channel axis.
pub fn concat_branches(conv_out: &FeatureMap, pers_out: &FeatureMap) -> Result<FeatureMap> {
    if conv_out.channels > 0 && pers_out.channels > 0 && conv_out.len != pers_out.len {
        return Err(Error::invalid(format!(
            "branch time lengths differ: {} vs {}",
            conv_out.len, pers_out.len
        )));
    }
    let len = if conv_out.channels > 0 { conv_out.len } else { pers_out.len };
    let mut data = Vec::with_capacity(conv_out.data.len() + pers_out.data.len());
    data.extend_from_slice(&conv_out.data);
    data.extend_from_slice(&pers_out.data);
    Ok(FeatureMap {
        channels: conv_out.channels + pers_out.channels,
        len,
        data,
    })
}

/// Splits a gradient of a concatenated map back into its two channel ranges.
pub fn split_branches(grad: &FeatureMap, first_channels: usize) -> Result<(FeatureMap, FeatureMap)> {
    if first_channels > grad.channels {
        return Err(Error::invalid(format!(
            "cannot split {} channels at {first_channels}",
            grad.channels
        )));
    }
    let cut = first_channels * grad.len;
    Ok((
        FeatureMap {
            channels: first_channels,
            len: grad.len,
            data: grad.data[..cut].to_vec(),
        },
        FeatureMap {
            channels: grad.channels - first_channels,
            len: grad.len,
            data: grad.data[cut..].to_vec(),
        },
    ))
}

/// Per-channel temporal mean.
pub fn mean_pool_forward(input: &FeatureMap) -> Result<Vec<f64>> {
    if input.len == 0 {
        return Err(Error::invalid("mean pooling needs at least one time step"));
    }
    let n = input.len as f64;
    Ok((0..input.channels)
        .map(|c| input.channel(c).iter().sum::<f64>() / n)
        .collect())
}

/// Spreads each channel's gradient uniformly over `len` steps.
pub fn mean_pool_backward(upstream: &[f64], len: usize) -> FeatureMap {
    let scale = 1.0 / len as f64;
    let mut g = FeatureMap::zeros(upstream.len(), len);
    for (c, &u) in upstream.iter().enumerate() {
        g.channel_mut(c).fill(u * scale);
    }
    g
}
