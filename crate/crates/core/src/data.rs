//! Datasets of labelled feature maps.
//!
//! On disk a dataset is a CSV manifest plus one feature file per clip. The
//! manifest columns are `clip_id, file_path, num_channels, num_frames, split`
//! followed by one 0/1 column per tag; `file_path` is relative to the
//! manifest's directory. Feature files are raw little-endian `f32`,
//! channel-major (`num_channels` rows of `num_frames` values).

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::train::LabeledExample;
use crate::network::FeatureMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "valid" | "validation" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(Error::format("manifest", format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clip {
    pub id: String,
    pub features: FeatureMap,
    pub labels: Vec<u8>,
    pub split: Split,
}

impl Clip {
    pub fn label_vector(&self) -> Vec<f64> {
        self.labels.iter().map(|&l| f64::from(l)).collect()
    }

    /// Number of positive tags. For synthetic clips this is the peak count.
    pub fn positive_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub tags: Vec<String>,
    pub clips: Vec<Clip>,
}

impl Dataset {
    pub fn num_tags(&self) -> usize {
        self.tags.len()
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &Clip> {
        self.clips.iter().filter(move |c| c.split == split)
    }

    pub fn split_len(&self, split: Split) -> usize {
        self.split(split).count()
    }

    /// Network-ready examples of one split, optionally normalized.
    pub fn examples(&self, split: Split, norm: Option<&NormalizationParams>) -> Result<Vec<LabeledExample>> {
        self.split(split)
            .map(|c| {
                let input = match norm {
                    Some(n) => n.apply(&c.features)?,
                    None => c.features.clone(),
                };
                Ok(LabeledExample {
                    input,
                    labels: c.label_vector(),
                })
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for c in &self.clips {
            if !seen.insert(c.id.as_str()) {
                return Err(Error::invalid(format!("duplicate clip id {:?}", c.id)));
            }
            if c.labels.len() != self.tags.len() {
                return Err(Error::invalid(format!(
                    "clip {:?} has {} labels, dataset has {} tags",
                    c.id,
                    c.labels.len(),
                    self.tags.len()
                )));
            }
            if c.labels.iter().any(|&l| l > 1) {
                return Err(Error::invalid(format!("clip {:?} has a non-binary label", c.id)));
            }
        }
        Ok(())
    }

    /// Writes `manifest.csv` and `features/<clip_id>.f32` under `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<PathBuf> {
        self.validate()?;
        let dir = dir.as_ref();
        let feat_dir = dir.join("features");
        fs::create_dir_all(&feat_dir).map_err(|e| Error::io(&feat_dir, e))?;
        let manifest = dir.join("manifest.csv");
        let mut w = csv::Writer::from_path(&manifest)?;
        let mut header = vec!["clip_id", "file_path", "num_channels", "num_frames", "split"];
        header.extend(self.tags.iter().map(String::as_str));
        w.write_record(&header)?;
        for c in &self.clips {
            let rel = format!("features/{}.f32", c.id);
            write_feature_file(dir.join(&rel), &c.features)?;
            let mut row = vec![
                c.id.clone(),
                rel,
                c.features.channels().to_string(),
                c.features.len().to_string(),
                c.split.to_string(),
            ];
            row.extend(c.labels.iter().map(u8::to_string));
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io(&manifest, e))?;
        Ok(manifest)
    }
}

pub fn write_feature_file(path: impl AsRef<Path>, map: &FeatureMap) -> Result<()> {
    let path = path.as_ref();
    let mut bytes = Vec::with_capacity(4 * map.data().len());
    for &v in map.data() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads a raw `f32` feature file; the frame count is inferred when `None`.
pub fn read_feature_file(path: impl AsRef<Path>, channels: usize, frames: Option<usize>) -> Result<FeatureMap> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if channels == 0 || bytes.len() % (4 * channels) != 0 {
        return Err(Error::format(
            "feature file",
            format!("{}: {} bytes is not a whole number of {channels}-channel f32 frames", path.display(), bytes.len()),
        ));
    }
    let found = bytes.len() / (4 * channels);
    if let Some(n) = frames {
        if n != found {
            return Err(Error::format(
                "feature file",
                format!("{}: expected {n} frames of {channels} channels, found {found}", path.display()),
            ));
        }
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")) as f64)
        .collect();
    FeatureMap::new(channels, found, data)
}

#[derive(Debug, Deserialize)]
struct ManifestRow {
    clip_id: String,
    file_path: String,
    num_channels: usize,
    num_frames: usize,
    split: String,
}

/// Loads a dataset from its manifest.
pub fn load_features(manifest: impl AsRef<Path>) -> Result<Dataset> {
    let manifest = manifest.as_ref();
    let base = manifest.parent().unwrap_or(Path::new("."));
    let mut reader = csv::Reader::from_path(manifest).map_err(|e| match e.kind() {
        csv::ErrorKind::Io(_) => Error::io(manifest, std::io::Error::other(e.to_string())),
        _ => Error::Csv(e),
    })?;
    let headers = reader.headers()?.clone();
    const FIXED: [&str; 5] = ["clip_id", "file_path", "num_channels", "num_frames", "split"];
    if headers.len() < FIXED.len() || headers.iter().zip(FIXED).any(|(h, f)| h.trim() != f) {
        return Err(Error::format(
            "manifest",
            format!("header must start with {}", FIXED.join(",")),
        ));
    }
    let tags: Vec<String> = headers.iter().skip(FIXED.len()).map(|s| s.trim().to_string()).collect();

    let mut rows = Vec::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec?;
        if rec.len() != headers.len() {
            return Err(Error::format(
                "manifest",
                format!("row {} has {} columns, header has {}", line + 2, rec.len(), headers.len()),
            ));
        }
        let fixed = csv::StringRecord::from(rec.iter().take(FIXED.len()).collect::<Vec<_>>());
        let row: ManifestRow = fixed
            .deserialize(Some(&csv::StringRecord::from(FIXED.to_vec())))
            .map_err(|e| Error::format("manifest", format!("row {}: {e}", line + 2)))?;
        let labels = rec
            .iter()
            .skip(FIXED.len())
            .map(|s| match s.trim() {
                "0" => Ok(0u8),
                "1" => Ok(1u8),
                other => Err(Error::format(
                    "manifest",
                    format!("clip {:?}: label {other:?} is not 0 or 1", row.clip_id),
                )),
            })
            .collect::<Result<Vec<u8>>>()?;
        let split: Split = row.split.parse()?;
        rows.push((row, labels, split));
    }

    let clips = rows
        .into_par_iter()
        .map(|(row, labels, split)| {
            let path = base.join(&row.file_path);
            if !path.exists() {
                return Err(Error::invalid(format!(
                    "clip {:?}: feature file {} does not exist",
                    row.clip_id,
                    path.display()
                )));
            }
            let features = read_feature_file(&path, row.num_channels, Some(row.num_frames))
                .map_err(|e| Error::invalid(format!("clip {:?}: {e}", row.clip_id)))?;
            Ok(Clip {
                id: row.clip_id,
                features,
                labels,
                split,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let ds = Dataset { tags, clips };
    ds.validate()?;
    Ok(ds)
}

/// Per-channel z-score parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationParams {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormalizationParams {
    /// Fits mean and population standard deviation of every channel over all
    /// frames of `clips`. Zero-variance channels get `std = 1`.
    pub fn fit<'a>(clips: impl IntoIterator<Item = &'a FeatureMap>) -> Result<Self> {
        let mut sum: Vec<f64> = Vec::new();
        let mut sq: Vec<f64> = Vec::new();
        let mut count = 0usize;
        let mut channels = None;
        let maps: Vec<&FeatureMap> = clips.into_iter().collect();
        for m in &maps {
            let c = *channels.get_or_insert(m.channels());
            if m.channels() != c {
                return Err(Error::invalid("clips disagree on channel count"));
            }
        }
        let channels = channels.ok_or_else(|| Error::invalid("cannot fit normalization on an empty split"))?;
        sum.resize(channels, 0.0);
        for m in &maps {
            for (c, s) in sum.iter_mut().enumerate() {
                *s += m.channel(c).iter().sum::<f64>();
            }
            count += m.len();
        }
        if count == 0 {
            return Err(Error::invalid("cannot fit normalization on zero frames"));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
        sq.resize(channels, 0.0);
        for m in &maps {
            for (c, s) in sq.iter_mut().enumerate() {
                *s += m.channel(c).iter().map(|v| (v - mean[c]).powi(2)).sum::<f64>();
            }
        }
        let std = sq
            .iter()
            .map(|s| {
                let sd = (s / count as f64).sqrt();
                if sd > 0.0 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(NormalizationParams { mean, std })
    }

    pub fn fit_split(dataset: &Dataset, split: Split) -> Result<Self> {
        NormalizationParams::fit(dataset.split(split).map(|c| &c.features))
    }

    pub fn apply(&self, map: &FeatureMap) -> Result<FeatureMap> {
        if map.channels() != self.mean.len() {
            return Err(Error::invalid(format!(
                "normalization fitted on {} channels, input has {}",
                self.mean.len(),
                map.channels()
            )));
        }
        let mut out = map.clone();
        for c in 0..map.channels() {
            let (m, s) = (self.mean[c], self.std[c]);
            for v in out.channel_mut(c) {
                *v = (*v - m) / s;
            }
        }
        Ok(out)
    }
}

/// Settings for the peak-count dataset.
///
/// Each clip holds `m` raised-cosine bumps (`m` uniform in `1..=max_peaks`)
/// on a zero baseline with Gaussian noise. Tag `j` (0-based) is 1 iff
/// `m >= j + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub num_clips: usize,
    pub length: usize,
    pub num_channels: usize,
    pub max_peaks: usize,
    pub noise_std: f64,
    pub seed: u64,
    /// Support width of each bump in samples; bump centers are at least
    /// twice this far apart.
    pub bump_width: usize,
    pub amplitude_min: f64,
    pub amplitude_max: f64,
    pub valid_fraction: f64,
    pub test_fraction: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            num_clips: 100,
            length: 256,
            num_channels: 1,
            max_peaks: 5,
            noise_std: 0.05,
            seed: 0,
            bump_width: 16,
            amplitude_min: 1.0,
            amplitude_max: 2.0,
            valid_fraction: 0.0,
            test_fraction: 0.0,
        }
    }
}

impl SyntheticConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.max_peaks == 0 {
            v.push("max_peaks must be >= 1".into());
        }
        if self.num_channels == 0 {
            v.push("num_channels must be >= 1".into());
        }
        if self.bump_width < 3 {
            v.push("bump_width must be >= 3".into());
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            v.push(format!("noise_std must be >= 0, got {}", self.noise_std));
        }
        if !(self.amplitude_min > 0.0 && self.amplitude_max >= self.amplitude_min) {
            v.push("amplitudes need 0 < amplitude_min <= amplitude_max".into());
        }
        if !(0.0..=1.0).contains(&(self.valid_fraction + self.test_fraction))
            || self.valid_fraction < 0.0
            || self.test_fraction < 0.0
        {
            v.push("valid_fraction and test_fraction must be >= 0 and sum to <= 1".into());
        }
        if self.bump_width >= 3 && self.max_peaks >= 1 && self.free_span(self.max_peaks).is_none() {
            v.push(format!(
                "length {} cannot hold {} bumps of width {} separated by {}",
                self.length,
                self.max_peaks,
                self.bump_width,
                2 * self.bump_width
            ));
        }
        v
    }

    fn margin(&self) -> usize {
        self.bump_width / 2
    }

    /// Slack left for placing `m` bump centers.
    fn free_span(&self, m: usize) -> Option<usize> {
        let lo = self.margin();
        let hi = self.length.checked_sub(1 + self.margin())?;
        (hi.checked_sub(lo)?).checked_sub((m - 1) * 2 * self.bump_width)
    }

    pub fn split_counts(&self) -> (usize, usize, usize) {
        let valid = (self.num_clips as f64 * self.valid_fraction).round() as usize;
        let test = (self.num_clips as f64 * self.test_fraction).round() as usize;
        let test = test.min(self.num_clips - valid.min(self.num_clips));
        let valid = valid.min(self.num_clips);
        (self.num_clips - valid - test, valid, test)
    }
}

fn raised_cosine(offset: f64, width: f64) -> f64 {
    if offset.abs() < 0.5 * width {
        0.5 * (1.0 + (2.0 * std::f64::consts::PI * offset / width).cos())
    } else {
        0.0
    }
}

/// Generates the peak-count dataset. Values are rounded to `f32` so that a
/// saved and reloaded dataset is bit-identical.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<Dataset> {
    let v = cfg.violations();
    if !v.is_empty() {
        return Err(Error::InvalidConfig(v));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = Normal::new(0.0, cfg.noise_std.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::invalid(e.to_string()))?;
    let (n_train, n_valid, _) = cfg.split_counts();
    let width = cfg.bump_width as f64;
    let sep = 2 * cfg.bump_width;
    let id_width = cfg.num_clips.max(1).to_string().len();

    let mut clips = Vec::with_capacity(cfg.num_clips);
    for i in 0..cfg.num_clips {
        let m = rng.random_range(1..=cfg.max_peaks);
        let free = cfg.free_span(m).expect("validated");
        let mut offsets: Vec<usize> = (0..m).map(|_| rng.random_range(0..=free)).collect();
        offsets.sort_unstable();
        let centers: Vec<usize> = offsets
            .iter()
            .enumerate()
            .map(|(j, &o)| cfg.margin() + o + j * sep)
            .collect();

        let mut data = Vec::with_capacity(cfg.num_channels * cfg.length);
        for _ in 0..cfg.num_channels {
            let amps: Vec<f64> = (0..m)
                .map(|_| rng.random_range(cfg.amplitude_min..=cfg.amplitude_max))
                .collect();
            for t in 0..cfg.length {
                let mut v: f64 = centers
                    .iter()
                    .zip(&amps)
                    .map(|(&c, &a)| a * raised_cosine(t as f64 - c as f64, width))
                    .sum();
                if cfg.noise_std > 0.0 {
                    v += noise.sample(&mut rng);
                }
                data.push(v as f32 as f64);
            }
        }
        let split = if i < n_train {
            Split::Train
        } else if i < n_train + n_valid {
            Split::Valid
        } else {
            Split::Test
        };
        clips.push(Clip {
            id: format!("clip{i:0id_width$}"),
            features: FeatureMap::new(cfg.num_channels, cfg.length, data)?,
            labels: (1..=cfg.max_peaks).map(|k| u8::from(m >= k)).collect(),
            split,
        });
    }
    Ok(Dataset {
        tags: (1..=cfg.max_peaks).map(|k| format!("peaks_ge_{k}")).collect(),
        clips,
    })
}
