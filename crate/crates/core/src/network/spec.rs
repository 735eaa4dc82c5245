use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{Activation, ConvLayerSpec, PersistenceLayerSpec};
use crate::error::{Error, Result};

/// Which middle branch feeds the late convolutions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Middle convolution only.
    Cnn,
    /// Persistence layer only.
    Pnn,
    /// Middle convolution and persistence layer, concatenated.
    Pcnn,
}

impl Variant {
    pub fn uses_middle(self) -> bool {
        matches!(self, Variant::Cnn | Variant::Pcnn)
    }

    pub fn uses_persistence(self) -> bool {
        matches!(self, Variant::Pnn | Variant::Pcnn)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Cnn => "cnn",
            Variant::Pnn => "pnn",
            Variant::Pcnn => "pcnn",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cnn" => Ok(Variant::Cnn),
            "pnn" => Ok(Variant::Pnn),
            "pcnn" => Ok(Variant::Pcnn),
            _ => Err(Error::invalid(format!("unknown variant {s:?}; expected cnn, pnn or pcnn"))),
        }
    }
}

/// Full architecture: early convolutions, middle branch(es), late 1x1
/// convolutions ending in one unit per tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_channels: usize,
    pub early: Vec<ConvLayerSpec>,
    pub variant: Variant,
    pub middle: Option<ConvLayerSpec>,
    pub persistence: Option<PersistenceLayerSpec>,
    /// Includes the output layer.
    pub late: Vec<ConvLayerSpec>,
    pub num_tags: usize,
    #[serde(default)]
    pub activation: Activation,
}

/// Channel and time length after each stage for one input length.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShapeTrace {
    pub early: Vec<(usize, usize)>,
    pub middle: Option<(usize, usize)>,
    pub persistence: Option<(usize, usize)>,
    pub mid: (usize, usize),
    pub late: Vec<(usize, usize)>,
}

impl NetworkSpec {
    /// Configuration used in the reference experiments: one (64, 8, 4) early layer,
    /// a (0, 5, 5, 10) persistence layer over 32-step segments, a (3200, 1, 32)
    /// middle convolution, and late layers (512, 1, 1) x 2 + (num_tags, 1, 1).
    pub fn paper_default(variant: Variant, input_channels: usize, num_tags: usize) -> Self {
        NetworkSpec {
            input_channels,
            early: vec![ConvLayerSpec::new(64, 8, 4)],
            variant,
            middle: variant.uses_middle().then_some(ConvLayerSpec::new(3200, 1, 32)),
            persistence: variant.uses_persistence().then(PersistenceLayerSpec::default),
            late: vec![
                ConvLayerSpec::pointwise(512),
                ConvLayerSpec::pointwise(512),
                ConvLayerSpec::pointwise(num_tags),
            ],
            num_tags,
            activation: Activation::Relu,
        }
    }

    /// Channels leaving the early stack (`U`).
    pub fn early_channels(&self) -> usize {
        self.early.last().map_or(self.input_channels, |l| l.num_filters)
    }

    pub fn middle_channels(&self) -> usize {
        self.middle.map_or(0, |m| m.num_filters)
    }

    pub fn persistence_channels(&self) -> usize {
        self.persistence.map_or(0, |p| p.output_channels(self.early_channels()))
    }

    /// Channels of the concatenated mid representation.
    pub fn mid_channels(&self) -> usize {
        self.middle_channels() + self.persistence_channels()
    }

    /// Input channel count of every parametrized layer, in declaration order
    /// (early, middle, late).
    pub fn layer_inputs(&self) -> Vec<(ConvLayerSpec, usize)> {
        let mut out = Vec::new();
        let mut c = self.input_channels;
        for l in &self.early {
            out.push((*l, c));
            c = l.num_filters;
        }
        if let Some(m) = self.middle {
            out.push((m, c));
        }
        let mut c = self.mid_channels();
        for l in &self.late {
            out.push((*l, c));
            c = l.num_filters;
        }
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.layer_inputs()
            .iter()
            .map(|(l, c)| l.weight_len(*c) + l.num_filters)
            .sum()
    }

    /// Every violated invariant, in a stable order.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.input_channels == 0 {
            v.push("input_channels must be >= 1".into());
        }
        if self.num_tags == 0 {
            v.push("num_tags must be >= 1".into());
        }
        for (i, l) in self.early.iter().enumerate() {
            v.extend(l.violations(&format!("early[{i}]")));
        }
        match (self.variant.uses_middle(), self.middle) {
            (true, None) => v.push(format!("variant {} requires a middle convolution", self.variant)),
            (false, Some(_)) => v.push(format!("variant {} has no middle convolution", self.variant)),
            (_, Some(m)) => v.extend(m.violations("middle")),
            _ => {}
        }
        match (self.variant.uses_persistence(), self.persistence) {
            (true, None) => v.push(format!("variant {} requires a persistence layer", self.variant)),
            (false, Some(_)) => v.push(format!("variant {} has no persistence layer", self.variant)),
            (_, Some(p)) => v.extend(p.violations()),
            _ => {}
        }
        if let (Variant::Pcnn, Some(m), Some(p)) = (self.variant, self.middle, self.persistence) {
            if m.pool_size != p.segment_length {
                v.push(format!(
                    "pcnn requires middle pool_size ({}) == persistence segment_length ({})",
                    m.pool_size, p.segment_length
                ));
            }
        }
        if self.late.is_empty() {
            v.push("at least one late layer (the output layer) is required".into());
        }
        for (i, l) in self.late.iter().enumerate() {
            v.extend(l.violations(&format!("late[{i}]")));
            if l.filter_length != 1 || l.pool_size != 1 {
                v.push(format!(
                    "late[{i}] must have filter_length 1 and pool_size 1, got ({}, {}, {})",
                    l.num_filters, l.filter_length, l.pool_size
                ));
            }
        }
        if let Some(last) = self.late.last() {
            if last.num_filters != self.num_tags {
                v.push(format!(
                    "output layer has {} filters but num_tags is {}",
                    last.num_filters, self.num_tags
                ));
            }
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(v))
        }
    }

    /// Shapes after every stage for an input of `len` steps, or an error
    /// naming the first layer the input is too short for.
    pub fn trace_shapes(&self, len: usize) -> Result<ShapeTrace> {
        let too_short = |name: String, at: usize| {
            Error::invalid(format!("input too short: {name} receives {at} time steps"))
        };
        let mut t = len;
        let mut early = Vec::new();
        for (i, l) in self.early.iter().enumerate() {
            t = l.output_len(t).ok_or_else(|| too_short(format!("early[{i}]"), t))?;
            early.push((l.num_filters, t));
        }
        let middle = match self.middle {
            Some(m) => Some((
                m.num_filters,
                m.output_len(t).ok_or_else(|| too_short("middle".into(), t))?,
            )),
            None => None,
        };
        let persistence = match self.persistence {
            Some(p) => Some((
                p.output_channels(self.early_channels()),
                p.output_len(t).ok_or_else(|| too_short("persistence".into(), t))?,
            )),
            None => None,
        };
        let mid_len = match (middle, persistence) {
            (Some(a), Some(b)) if a.1 != b.1 => {
                return Err(Error::invalid(format!(
                    "middle and persistence branches disagree on time length ({} vs {})",
                    a.1, b.1
                )))
            }
            (Some(a), _) => a.1,
            (None, Some(b)) => b.1,
            (None, None) => t,
        };
        let mid = (self.mid_channels(), mid_len);
        let late = self.late.iter().map(|l| (l.num_filters, mid_len)).collect();
        Ok(ShapeTrace {
            early,
            middle,
            persistence,
            mid,
            late,
        })
    }
}
