//! Versioned binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    8 bytes   b"SARSRCK\0"
//! version  u32
//! hlen     u64       byte length of the JSON header
//! header   hlen bytes UTF-8 JSON
//! payload  f32 values, tensors concatenated in header order
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::classifier::{build_classifier, Classifier, ClassifierConfig};
use super::params::ParameterSnapshot;
use super::sr::{build_sr_model, SrModel, SrModelConfig};
use super::Model;
use crate::error::{Error, Result};
use crate::nn::Tensor;

pub const CHECKPOINT_MAGIC: [u8; 8] = *b"SARSRCK\0";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Provenance of a set of weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StageTag {
    #[serde(rename = "SR-I")]
    SrI,
    #[serde(rename = "SR-PT")]
    SrPt,
    #[serde(rename = "SR-FT")]
    SrFt,
    #[serde(rename = "CLS")]
    Classifier,
}

impl StageTag {
    pub fn as_str(self) -> &'static str {
        match self {
            StageTag::SrI => "SR-I",
            StageTag::SrPt => "SR-PT",
            StageTag::SrFt => "SR-FT",
            StageTag::Classifier => "CLS",
        }
    }
}

impl std::fmt::Display for StageTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    Sr(SrModelConfig),
    Classifier(ClassifierConfig),
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    model: ModelSpec,
    seed: u64,
    stage: StageTag,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ModelSpec,
    pub seed: u64,
    pub stage: StageTag,
    pub params: ParameterSnapshot,
}

impl Checkpoint {
    pub fn from_sr(model: &SrModel, stage: StageTag) -> Self {
        Self {
            model: ModelSpec::Sr(model.config().clone()),
            seed: model.seed(),
            stage,
            params: model.params().snapshot(),
        }
    }

    pub fn from_classifier(model: &Classifier) -> Self {
        Self {
            model: ModelSpec::Classifier(model.config().clone()),
            seed: model.seed(),
            stage: StageTag::Classifier,
            params: model.params().snapshot(),
        }
    }

    /// Rebuilds the SR model and loads the stored weights.
    pub fn to_sr(&self) -> Result<SrModel> {
        let ModelSpec::Sr(cfg) = &self.model else {
            return Err(Error::Checkpoint(
                "checkpoint holds a classifier, not an SR model".into(),
            ));
        };
        let mut m = build_sr_model(cfg, self.seed)?;
        m.params_mut().load(&self.params)?;
        Ok(m)
    }

    pub fn to_classifier(&self) -> Result<Classifier> {
        let ModelSpec::Classifier(cfg) = &self.model else {
            return Err(Error::Checkpoint(
                "checkpoint holds an SR model, not a classifier".into(),
            ));
        };
        let mut m = build_classifier(cfg, self.seed)?;
        m.params_mut().load(&self.params)?;
        Ok(m)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            model: self.model.clone(),
            seed: self.seed,
            stage: self.stage,
            tensors: self
                .params
                .0
                .iter()
                .map(|(name, t)| TensorEntry {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(20 + json.len() + 4 * self.params.count());
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for t in self.params.0.values() {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 20 || bytes[..8] != CHECKPOINT_MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = &bytes[20..];
        if body.len() < hlen {
            return Err(bad("truncated header"));
        }
        let header: Header = serde_json::from_slice(&body[..hlen])
            .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
        let mut payload = body[hlen..].chunks_exact(4);
        let mut params = ParameterSnapshot::default();
        for entry in header.tensors {
            let n: usize = entry.shape.iter().product();
            if payload.len() < n {
                return Err(bad("truncated payload"));
            }
            let data: Vec<f32> = payload
                .by_ref()
                .take(n)
                .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
                .collect();
            params.0.insert(entry.name, Tensor::new(entry.shape, data)?);
        }
        if payload.len() != 0 || !payload.remainder().is_empty() {
            return Err(bad("trailing bytes after payload"));
        }
        Ok(Self {
            model: header.model,
            seed: header.seed,
            stage: header.stage,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::File {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        Self::from_bytes(&bytes)
    }
}
