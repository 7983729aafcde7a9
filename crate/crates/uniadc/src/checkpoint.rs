//! Versioned binary checkpoints: magic, format version, a JSON shape
//! manifest, then little-endian `f64` tensors. Loading restores every
//! parameter bit for bit.

use std::path::Path;

use serde::{Deserialize, Serialize};
use uniadc_core::discriminator::{CategoryEmbeddings, FusionArch, FusionNetwork, PatchStatsBackbone};

const MAGIC: &[u8; 8] = b"UNIADCKP";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("{}: {source}", path.display())]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("checkpoint is truncated")]
    Truncated,
    #[error("bad checkpoint manifest: {0}")]
    Manifest(String),
}

/// A trained discriminator for one image class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassModel {
    pub class: String,
    /// Label `y` is `categories[y - 1]`; "Other" is not listed.
    pub categories: Vec<String>,
    pub backbone: PatchStatsBackbone,
    pub network: FusionNetwork,
    pub embeddings: CategoryEmbeddings,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    class: String,
    categories: Vec<String>,
    backbone_levels: Vec<(usize, usize)>,
    level_channels: Vec<usize>,
    hidden: usize,
    embed_dim: usize,
    tensors: Vec<TensorEntry>,
}

pub fn encode(model: &ClassModel) -> Vec<u8> {
    let arch = model.network.arch();
    let dim = model.embeddings.dim();
    let mut tensors = vec![
        TensorEntry {
            name: "fusion.params".into(),
            shape: vec![model.network.params.len()],
        },
        TensorEntry {
            name: "embeddings.known".into(),
            shape: vec![model.embeddings.len_known(), dim],
        },
    ];
    if model.embeddings.other().is_some() {
        tensors.push(TensorEntry {
            name: "embeddings.other".into(),
            shape: vec![dim],
        });
    }
    let manifest = Manifest {
        class: model.class.clone(),
        categories: model.categories.clone(),
        backbone_levels: model.backbone.levels.clone(),
        level_channels: arch.level_channels.clone(),
        hidden: arch.hidden,
        embed_dim: arch.embed_dim,
        tensors,
    };
    let header = serde_json::to_vec(&manifest).expect("manifest serializes");
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    let values = model
        .network
        .params
        .iter()
        .chain(model.embeddings.known().iter().flatten())
        .chain(model.embeddings.other().into_iter().flatten());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<ClassModel, CheckpointError> {
    let take = |range: std::ops::Range<usize>| bytes.get(range).ok_or(CheckpointError::Truncated);
    if take(0..8)? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = u32::from_le_bytes(take(8..12)?.try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let header_len = u64::from_le_bytes(take(12..20)?.try_into().expect("8 bytes")) as usize;
    let header_end = 20usize.checked_add(header_len).ok_or(CheckpointError::Truncated)?;
    let manifest: Manifest =
        serde_json::from_slice(take(20..header_end)?).map_err(|e| CheckpointError::Manifest(e.to_string()))?;
    let payload = &bytes[header_end..];
    if payload.len() % 8 != 0 {
        return Err(CheckpointError::Truncated);
    }
    let values: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let mut cursor = 0usize;
    let mut tensor = |name: &str| -> Result<Option<(Vec<usize>, Vec<f64>)>, CheckpointError> {
        let Some(entry) = manifest.tensors.iter().find(|t| t.name == name) else {
            return Ok(None);
        };
        let n: usize = entry.shape.iter().product();
        let data = values.get(cursor..cursor + n).ok_or(CheckpointError::Truncated)?.to_vec();
        cursor += n;
        Ok(Some((entry.shape.clone(), data)))
    };
    let missing = |n: &str| CheckpointError::Manifest(format!("missing tensor {n}"));
    let (_, params) = tensor("fusion.params")?.ok_or_else(|| missing("fusion.params"))?;
    let (shape, known) = tensor("embeddings.known")?.ok_or_else(|| missing("embeddings.known"))?;
    let other = tensor("embeddings.other")?;
    if cursor != values.len() {
        return Err(CheckpointError::Manifest("trailing data after tensors".into()));
    }
    let [rows, dim] = shape[..] else {
        return Err(CheckpointError::Manifest("embeddings.known must be 2-d".into()));
    };
    if rows == 0 || dim == 0 {
        return Err(CheckpointError::Manifest("empty embedding table".into()));
    }
    let arch = FusionArch {
        level_channels: manifest.level_channels,
        hidden: manifest.hidden,
        embed_dim: manifest.embed_dim,
    };
    let bad = |e: uniadc_core::Error| CheckpointError::Manifest(e.to_string());
    let network = FusionNetwork::from_params(arch, params).map_err(bad)?;
    let mut embeddings = CategoryEmbeddings::from_vectors(known.chunks(dim).map(<[f64]>::to_vec).collect()).map_err(bad)?;
    if let Some((_, o)) = other {
        embeddings.set_other(o).map_err(bad)?;
    }
    Ok(ClassModel {
        class: manifest.class,
        categories: manifest.categories,
        backbone: PatchStatsBackbone {
            levels: manifest.backbone_levels,
        },
        network,
        embeddings,
    })
}

pub fn save_checkpoint(path: &Path, model: &ClassModel) -> Result<(), CheckpointError> {
    let io = |source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(p) = path.parent() {
        std::fs::create_dir_all(p).map_err(io)?;
    }
    std::fs::write(path, encode(model)).map_err(io)
}

pub fn load_checkpoint(path: &Path) -> Result<ClassModel, CheckpointError> {
    let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode(&bytes)
}
