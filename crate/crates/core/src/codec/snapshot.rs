use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use super::network::{param_specs, Network};
use super::TrainingHyperparams;
use crate::decolour::DecolourMode;
use crate::embedding::EMBEDDING_DIM;
use crate::error::{Error, Result};

pub const MODEL_VERSION: &str = concat!("scci-codec/", env!("CARGO_PKG_VERSION"));

const MAGIC: &[u8; 8] = b"SCCIMDL1";

/// Per-entry mean and population variance of the training-set embeddings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingStats {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    version: String,
    embedding_dim: usize,
    training_config: TrainingHyperparams,
    embedding_stats: EmbeddingStats,
    tensors: Vec<TensorEntry>,
}

/// A trained encoder/synthesizer/rate-model triple. Immutable once built.
#[derive(Clone)]
pub struct ModelSnapshot {
    header: Header,
    values: BTreeMap<String, Vec<f32>>,
    net: Network,
    rate_loc: Vec<f64>,
    rate_log_scale: Vec<f64>,
}

impl std::fmt::Debug for ModelSnapshot {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ModelSnapshot")
            .field("version", &self.header.version)
            .field("embedding_dim", &self.header.embedding_dim)
            .field("parameters", &self.values.values().map(Vec::len).sum::<usize>())
            .finish()
    }
}

impl ModelSnapshot {
    pub(crate) fn from_parts(
        training_config: TrainingHyperparams,
        values: BTreeMap<String, (Vec<usize>, Vec<f32>)>,
        embedding_stats: EmbeddingStats,
    ) -> Result<Self> {
        let tensors = values.iter().map(|(n, (s, _))| TensorEntry { name: n.clone(), shape: s.clone() }).collect();
        let header = Header {
            version: MODEL_VERSION.to_string(),
            embedding_dim: training_config.architecture.embedding_dim,
            training_config,
            embedding_stats,
            tensors,
        };
        Self::assemble(header, values.into_iter().map(|(n, (_, v))| (n, v)).collect())
    }

    fn assemble(header: Header, values: BTreeMap<String, Vec<f32>>) -> Result<Self> {
        let config = header.training_config.architecture;
        if header.embedding_dim != config.embedding_dim {
            return Err(Error::Model("header embedding_dim disagrees with architecture".into()));
        }
        let expected = param_specs(&config);
        if expected.len() != header.tensors.len() {
            return Err(Error::Model(format!("expected {} tensors, found {}", expected.len(), header.tensors.len())));
        }
        let mut tensors = BTreeMap::new();
        for entry in &header.tensors {
            let data = values.get(&entry.name).ok_or_else(|| Error::Model(format!("missing tensor {}", entry.name)))?;
            if data.len() != entry.shape.iter().product::<usize>() {
                return Err(Error::Model(format!("tensor {} has wrong length", entry.name)));
            }
            let t = Tensor::from_vec(data.clone(), entry.shape.as_slice(), &Device::Cpu)?;
            tensors.insert(entry.name.clone(), t);
        }
        let net = Network::from_tensors(config, tensors)?;
        let rate_loc = values["rate.loc"].iter().map(|&v| f64::from(v)).collect();
        let rate_log_scale = values["rate.log_scale"].iter().map(|&v| f64::from(v)).collect();
        Ok(Self { header, values, net, rate_loc, rate_log_scale })
    }

    pub(crate) fn network(&self) -> &Network {
        &self.net
    }

    pub fn version(&self) -> &str {
        &self.header.version
    }

    pub fn embedding_dim(&self) -> usize {
        self.header.embedding_dim
    }

    pub fn training_config(&self) -> &TrainingHyperparams {
        &self.header.training_config
    }

    pub fn resolution(&self) -> usize {
        self.header.training_config.resolution
    }

    pub fn decolour_mode(&self) -> DecolourMode {
        self.header.training_config.decolour
    }

    pub fn embedding_stats(&self) -> &EmbeddingStats {
        &self.header.embedding_stats
    }

    pub(crate) fn rate_parameters(&self) -> (&[f64], &[f64]) {
        (&self.rate_loc, &self.rate_log_scale)
    }

    /// Parameters whose names start with `prefix` (`"encoder."`, `"synth."`, `"rate."`).
    pub fn parameter_blob(&self, prefix: &str) -> Vec<f32> {
        self.values.iter().filter(|(n, _)| n.starts_with(prefix)).flat_map(|(_, v)| v.iter().copied()).collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header).expect("header serializes");
        let mut out = Vec::with_capacity(16 + header.len() + 4 * self.values.values().map(Vec::len).sum::<usize>());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for entry in &self.header.tensors {
            for v in &self.values[&entry.name] {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Model(format!("invalid model file: {m}"));
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("missing magic"));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(16..16 + len).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(body).map_err(|e| bad(&e.to_string()))?;
        if header.embedding_dim != EMBEDDING_DIM {
            return Err(Error::Model(format!(
                "model embedding_dim {} does not match the required {EMBEDDING_DIM}",
                header.embedding_dim
            )));
        }
        let mut offset = 16 + len;
        let mut values = BTreeMap::new();
        for entry in &header.tensors {
            let n: usize = entry.shape.iter().product();
            let raw = bytes.get(offset..offset + 4 * n).ok_or_else(|| bad("truncated tensor data"))?;
            values.insert(
                entry.name.clone(),
                raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect(),
            );
            offset += 4 * n;
        }
        if offset != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        Self::assemble(header, values)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|source| Error::Load { path: path.to_path_buf(), source })?;
        Self::from_bytes(&bytes)
    }
}

pub(crate) fn collect_values(net: &Network) -> Result<BTreeMap<String, (Vec<usize>, Vec<f32>)>> {
    net.params()
        .iter()
        .map(|(name, t)| {
            let values = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
            Ok((name.clone(), (t.dims().to_vec(), values)))
        })
        .collect()
}
