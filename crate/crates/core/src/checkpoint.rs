//! Self-describing model files.
//!
//! Layout: 8-byte magic, `u32` version, `u32` header length, a JSON header (kind,
//! hyperparameters, normalization, free-form metadata, blob names and shapes), then every
//! parameter as little-endian `f32` in header order. Nothing may follow the last blob.

use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::argen::{ArGen, ArGenConfig};
use crate::dataset::{GraphSample, NormalizationParams};
use crate::diffusion::{DiffusionConfig, DiffusionModel, TrainItem};
use crate::nn::{ParameterStore, Tensor};
use crate::zspace::{Decoded, ZKind};
use crate::{Error, Result, NUM_FEATURES};

pub const MAGIC: &[u8; 8] = b"SPNRCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    SparseDiffusion,
    FullDiffusion,
    Argen,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::SparseDiffusion => "sparse-diffusion",
            ModelKind::FullDiffusion => "full-diffusion",
            ModelKind::Argen => "argen",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum ModelConfig {
    Diffusion(DiffusionConfig),
    Argen(ArGenConfig),
}

impl ModelConfig {
    pub fn kind(&self) -> ModelKind {
        match self {
            ModelConfig::Diffusion(c) if c.kind == ZKind::Sparse => ModelKind::SparseDiffusion,
            ModelConfig::Diffusion(_) => ModelKind::FullDiffusion,
            ModelConfig::Argen(_) => ModelKind::Argen,
        }
    }

    pub fn batch_size(&self) -> usize {
        match self {
            ModelConfig::Diffusion(c) => c.batch_size,
            ModelConfig::Argen(c) => c.batch_size,
        }
    }
}

/// Any of the three generators.
#[derive(Debug, Clone)]
pub enum Model {
    Diffusion(DiffusionModel),
    Argen(ArGen),
}

impl Model {
    pub fn new<R: Rng + ?Sized>(cfg: ModelConfig, rng: &mut R) -> Result<Self> {
        Ok(match cfg {
            ModelConfig::Diffusion(c) => Model::Diffusion(DiffusionModel::new(c, rng)?),
            ModelConfig::Argen(c) => Model::Argen(ArGen::new(c, rng)?),
        })
    }

    pub fn config(&self) -> ModelConfig {
        match self {
            Model::Diffusion(m) => ModelConfig::Diffusion(m.cfg.clone()),
            Model::Argen(m) => ModelConfig::Argen(m.cfg.clone()),
        }
    }

    pub fn kind(&self) -> ModelKind {
        self.config().kind()
    }

    pub fn store(&self) -> &ParameterStore {
        match self {
            Model::Diffusion(m) => &m.store,
            Model::Argen(m) => &m.store,
        }
    }

    pub fn store_mut(&mut self) -> &mut ParameterStore {
        match self {
            Model::Diffusion(m) => &mut m.store,
            Model::Argen(m) => &mut m.store,
        }
    }

    pub fn items(&self, samples: &[&GraphSample], params: &NormalizationParams) -> Result<Vec<TrainItem>> {
        match self {
            Model::Diffusion(m) => m.items(samples, params),
            Model::Argen(m) => m.items(samples, params),
        }
    }

    /// One optimizer step; the autoregressive model ignores `rng`.
    pub fn train_step<R: Rng + ?Sized>(&mut self, batch: &[TrainItem], rng: &mut R) -> Result<f64> {
        match self {
            Model::Diffusion(m) => m.train_step(batch, rng),
            Model::Argen(m) => m.train_step(batch),
        }
    }

    /// Generates and decodes one graph for normalized features `cond`.
    pub fn generate<R: Rng + ?Sized>(
        &self,
        cond: &[f64; NUM_FEATURES],
        params: &NormalizationParams,
        rng: &mut R,
    ) -> Result<Decoded> {
        match self {
            Model::Diffusion(m) => m.generate(cond, params, rng),
            Model::Argen(m) => m.generate(cond, params).map(|(d, _)| d),
        }
    }
}

/// A model together with the normalization it was trained under.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Model,
    pub normalization: NormalizationParams,
    /// Free-form provenance such as step count, seed and config hash.
    pub meta: serde_json::Value,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    kind: ModelKind,
    config: ModelConfig,
    normalization: NormalizationParams,
    meta: serde_json::Value,
    blobs: Vec<BlobInfo>,
}

#[derive(Debug, Serialize, Deserialize)]
struct BlobInfo {
    name: String,
    shape: Vec<usize>,
}

impl Checkpoint {
    /// Serializes to bytes. Parameters are stored in single precision, so a loaded model
    /// equals this one after [`ParameterStore::round_to_f32`].
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let store = self.model.store();
        let header = Header {
            kind: self.model.kind(),
            config: self.model.config(),
            normalization: self.normalization,
            meta: self.meta.clone(),
            blobs: store
                .params()
                .iter()
                .map(|p| BlobInfo { name: p.name.clone(), shape: p.value.shape().to_vec() })
                .collect(),
        };
        let json = serde_json::to_vec(&header)?;
        let len = u32::try_from(json.len()).map_err(|_| Error::Checkpoint("header too large".into()))?;
        let mut out = Vec::with_capacity(16 + json.len() + 4 * store.scalar_count());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(&json);
        for p in store.params() {
            for &x in p.value.data() {
                out.extend_from_slice(&(x as f32).to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let take = |start: usize, len: usize| {
            bytes
                .get(start..start + len)
                .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {start} of {}", bytes.len())))
        };
        if take(0, 8)? != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
        }
        let version = u32::from_le_bytes(take(8, 4)?.try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(Error::Checkpoint(format!("version {version} is not supported (expected {VERSION})")));
        }
        let hlen = u32::from_le_bytes(take(12, 4)?.try_into().expect("4 bytes")) as usize;
        let header: Header = serde_json::from_slice(take(16, hlen)?)
            .map_err(|e| Error::Checkpoint(format!("unreadable header: {e}")))?;
        if header.config.kind() != header.kind {
            return Err(Error::Checkpoint(format!(
                "header kind {} disagrees with its config ({})",
                header.kind,
                header.config.kind()
            )));
        }

        let mut offset = 16 + hlen;
        let mut values = Vec::with_capacity(header.blobs.len());
        for b in &header.blobs {
            let n: usize = b.shape.iter().product();
            let raw = take(offset, 4 * n)?;
            offset += 4 * n;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                .collect();
            values.push((b.name.clone(), Tensor::from_vec(&b.shape, data)?));
        }
        if offset != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - offset)));
        }
        // initial values are overwritten; the seed only has to be valid
        let mut model = Model::new(header.config, &mut ChaCha8Rng::seed_from_u64(0))?;
        model.store_mut().load_values(&values)?;
        Ok(Self { model, normalization: header.normalization, meta: header.meta })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Loads and requires a specific model kind.
    pub fn load_kind(path: impl AsRef<Path>, expected: ModelKind) -> Result<Self> {
        let ck = Self::load(path)?;
        if ck.model.kind() != expected {
            return Err(Error::KindMismatch { expected: expected.to_string(), found: ck.model.kind().to_string() });
        }
        Ok(ck)
    }
}
