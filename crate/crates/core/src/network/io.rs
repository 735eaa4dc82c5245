//! Binary model files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      4 bytes  b"PLND"
//! version    u32      1
//! json_len   u32      length of the JSON header
//! json       bytes    {"spec": NetworkSpec, "tags": [...], "normalization": ...}
//! data_len   u64      byte length of the parameter block (4 * parameter count)
//! params     f32 * n  every layer's weights then biases, in declaration order
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Network, NetworkSpec, Parameters};
use crate::data::NormalizationParams;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"PLND";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelHeader {
    pub spec: NetworkSpec,
    #[serde(default)]
    pub tags: Vec<String>,
    #[serde(default)]
    pub normalization: Option<NormalizationParams>,
}

/// A network plus what is needed to run it on raw features.
#[derive(Debug, Clone, PartialEq)]
pub struct SavedModel {
    pub network: Network,
    pub tags: Vec<String>,
    pub normalization: Option<NormalizationParams>,
}

impl SavedModel {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = ModelHeader {
            spec: self.network.spec().clone(),
            tags: self.tags.clone(),
            normalization: self.normalization.clone(),
        };
        let json = serde_json::to_vec(&header)?;
        let params = self.network.params();
        let mut out = Vec::with_capacity(4 + 4 + 4 + json.len() + 8 + 4 * params.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&((4 * params.len()) as u64).to_le_bytes());
        for &v in params.iter() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::format("model file", m);
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(4).ok_or_else(|| bad("truncated magic"))? != MAGIC {
            return Err(bad("bad magic"));
        }
        let version = u32::from_le_bytes(cur.array().ok_or_else(|| bad("truncated version"))?);
        if version != VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let json_len = u32::from_le_bytes(cur.array().ok_or_else(|| bad("truncated header length"))?) as usize;
        let header: ModelHeader =
            serde_json::from_slice(cur.take(json_len).ok_or_else(|| bad("truncated header"))?)?;
        let data_len = u64::from_le_bytes(cur.array().ok_or_else(|| bad("truncated data length"))?) as usize;
        let data = cur.take(data_len).ok_or_else(|| bad("truncated parameters"))?;
        if cur.pos != bytes.len() {
            return Err(bad("trailing bytes"));
        }

        header.spec.validate()?;
        let mut params = Parameters::zeros(&header.spec);
        if data_len != 4 * params.len() {
            return Err(bad(&format!(
                "parameter block has {data_len} bytes, spec needs {}",
                4 * params.len()
            )));
        }
        for (p, chunk) in params.iter_mut().zip(data.chunks_exact(4)) {
            *p = f32::from_le_bytes(chunk.try_into().expect("chunk of 4")) as f64;
        }
        Ok(SavedModel {
            network: Network::new(header.spec, params)?,
            tags: header.tags,
            normalization: header.normalization,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        SavedModel::from_bytes(&bytes)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let s = self.bytes.get(self.pos..end)?;
        self.pos = end;
        Some(s)
    }

    fn array<const N: usize>(&mut self) -> Option<[u8; N]> {
        self.take(N).map(|s| s.try_into().expect("length checked"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Variant;

    fn model() -> SavedModel {
        let spec = NetworkSpec::paper_default(Variant::Pnn, 2, 3);
        let mut spec = spec;
        spec.early[0].num_filters = 4;
        spec.late = vec![
            crate::network::ConvLayerSpec::pointwise(8),
            crate::network::ConvLayerSpec::pointwise(3),
        ];
        SavedModel {
            network: Network::initialize(spec, 1).unwrap(),
            tags: vec!["a".into(), "b".into(), "c".into()],
            normalization: None,
        }
    }

    #[test]
    fn round_trip_to_f32_precision() {
        let m = model();
        let bytes = m.to_bytes().unwrap();
        assert_eq!(&bytes[..4], MAGIC);
        let back = SavedModel::from_bytes(&bytes).unwrap();
        assert_eq!(back.tags, m.tags);
        for (a, b) in back.network.params().iter().zip(m.network.params().iter()) {
            assert_eq!(*a, *b as f32 as f64);
        }
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn corrupt_files_rejected() {
        let bytes = model().to_bytes().unwrap();
        assert!(SavedModel::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(SavedModel::from_bytes(&extra).is_err());
        let mut bad = bytes;
        bad[0] = b'X';
        assert!(SavedModel::from_bytes(&bad).is_err());
    }
}
