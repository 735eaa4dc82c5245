//! Post-hoc inspection of trained networks: how persistence-landscape
//! magnitudes track signal activity, and how strongly each landscape piece
//! is weighted by the first late layer.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Clip, NormalizationParams};
use crate::error::{Error, Result};
use crate::metrics::pearson;
use crate::network::{FeatureMap, Network};

/// Per-clip activity score correlated against landscape magnitudes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activity {
    /// Number of positive tags; equals the bump count on synthetic data.
    Peaks,
    /// Mean positive first difference of the channel-summed features.
    Onset,
}

impl std::str::FromStr for Activity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "peaks" => Ok(Activity::Peaks),
            "onset" => Ok(Activity::Onset),
            _ => Err(Error::invalid(format!("unknown activity {s:?}; expected peaks or onset"))),
        }
    }
}

pub fn onset_proxy(features: &FeatureMap) -> f64 {
    let n = features.len();
    if n < 2 {
        return 0.0;
    }
    let summed: Vec<f64> = (0..n)
        .map(|t| (0..features.channels()).map(|c| features.get(c, t)).sum())
        .collect();
    summed.windows(2).map(|w| (w[1] - w[0]).max(0.0)).sum::<f64>() / (n - 1) as f64
}

pub fn activity_score(clip: &Clip, activity: Activity) -> f64 {
    match activity {
        Activity::Peaks => clip.positive_count() as f64,
        Activity::Onset => onset_proxy(&clip.features),
    }
}

/// Mean of each landscape piece `lambda_k` over grid points, segments and
/// channels of the network's persistence layer.
pub fn piece_means(net: &Network, input: &FeatureMap) -> Result<Vec<f64>> {
    let spec = net.spec();
    let pers = spec
        .persistence
        .ok_or_else(|| Error::invalid("network has no persistence layer"))?;
    let trace = net.forward(input, None)?;
    let out = trace.persistence_output().expect("persistence branch present");
    let (p, q) = (pers.landscape.num_pieces, pers.landscape.num_samples);
    let block = p * q;
    let mut sums = vec![0.0; p];
    for ch in 0..out.channels() {
        let k = (ch % block) / q;
        sums[k] += out.channel(ch).iter().sum::<f64>();
    }
    let count = (out.channels() / p * out.len()) as f64;
    Ok(sums.into_iter().map(|s| s / count).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationReport {
    pub activity: Activity,
    /// Pearson coefficient for `lambda_1..lambda_P`; `None` where undefined.
    pub coefficients: Vec<Option<f64>>,
    pub clip_ids: Vec<String>,
    pub activity_scores: Vec<f64>,
    /// `[clip][k]` piece means.
    pub piece_means: Vec<Vec<f64>>,
}

impl CorrelationReport {
    pub fn coefficients_csv(&self) -> String {
        let mut s = String::from("k,pearson\n");
        for (i, c) in self.coefficients.iter().enumerate() {
            let _ = writeln!(s, "{},{}", i + 1, c.map(|v| v.to_string()).unwrap_or_default());
        }
        s
    }

    /// Per-tag mean of piece `k` (1-based) over clips carrying the tag,
    /// sorted descending.
    pub fn tag_ranking(&self, clips: &[&Clip], tags: &[String], k: usize) -> Vec<(String, f64, usize)> {
        let mut rows: Vec<(String, f64, usize)> = tags
            .iter()
            .enumerate()
            .filter_map(|(t, name)| {
                let vals: Vec<f64> = clips
                    .iter()
                    .zip(&self.piece_means)
                    .filter(|(c, _)| c.labels.get(t) == Some(&1))
                    .map(|(_, m)| m[k - 1])
                    .collect();
                (!vals.is_empty()).then(|| {
                    (name.clone(), vals.iter().sum::<f64>() / vals.len() as f64, vals.len())
                })
            })
            .collect();
        rows.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        rows
    }
}

/// Pearson coefficient between `activity` and column `k` of `piece_means`
/// for each `k < num_pieces`; `None` where either side has no variance.
pub fn piece_correlations(activity: &[f64], piece_means: &[Vec<f64>], num_pieces: usize) -> Result<Vec<Option<f64>>> {
    (0..num_pieces)
        .map(|k| {
            let col: Vec<f64> = piece_means.iter().map(|m| m[k]).collect();
            match pearson(activity, &col) {
                Ok(r) => Ok(Some(r)),
                Err(Error::UndefinedMetric(_)) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect()
}

/// Correlates each landscape piece's clip-average with the activity score.
pub fn landscape_activity_correlation(
    net: &Network,
    clips: &[&Clip],
    norm: Option<&NormalizationParams>,
    activity: Activity,
) -> Result<CorrelationReport> {
    let pers = net
        .spec()
        .persistence
        .ok_or_else(|| Error::invalid("network has no persistence layer"))?;
    let piece_means: Vec<Vec<f64>> = clips
        .par_iter()
        .map(|c| {
            let input = match norm {
                Some(n) => n.apply(&c.features)?,
                None => c.features.clone(),
            };
            piece_means(net, &input)
        })
        .collect::<Result<_>>()?;
    let activity_scores: Vec<f64> = clips.iter().map(|c| activity_score(c, activity)).collect();
    let coefficients = piece_correlations(&activity_scores, &piece_means, pers.landscape.num_pieces)?;
    Ok(CorrelationReport {
        activity,
        coefficients,
        clip_ids: clips.iter().map(|c| c.id.clone()).collect(),
        activity_scores,
        piece_means,
    })
}

/// Mean absolute weight from each landscape piece's outputs into the first
/// late layer.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightSummary {
    pub per_piece: Vec<f64>,
}

impl WeightSummary {
    pub fn csv(&self) -> String {
        let mut s = String::from("k,mean_abs_weight\n");
        for (i, w) in self.per_piece.iter().enumerate() {
            let _ = writeln!(s, "{},{w}", i + 1);
        }
        s
    }
}

pub fn branch_weight_summary(net: &Network) -> Result<WeightSummary> {
    let spec = net.spec();
    let pers = spec
        .persistence
        .ok_or_else(|| Error::invalid("network has no persistence layer"))?;
    let layer = &net.params().layers[net.late_index()];
    let in_channels = spec.mid_channels();
    let offset = spec.middle_channels();
    let (p, q) = (pers.landscape.num_pieces, pers.landscape.num_samples);
    let block = p * q;
    let units = spec.late[0].num_filters;

    let mut sums = vec![0.0; p];
    for u in 0..units {
        let row = &layer.weights[u * in_channels..(u + 1) * in_channels];
        for (j, w) in row[offset..].iter().enumerate() {
            sums[(j % block) / q] += w.abs();
        }
    }
    let per_piece_count = (units * spec.persistence_channels() / p) as f64;
    Ok(WeightSummary {
        per_piece: sums.into_iter().map(|s| s / per_piece_count).collect(),
    })
}
