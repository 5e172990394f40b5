//! On-disk checkpoints: `manifest.json` describing the model and one raw
//! little-endian f64 blob per component (`<component>.bin`).

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autograd::{Component, ParamId};
use crate::model::ComposedModel;
use crate::tensor::Tensor;

pub const CHECKPOINT_VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed manifest: {0}")]
    Manifest(String),
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("blob {file}: {reason}")]
    Blob { file: String, reason: String },
}

#[derive(Serialize, Deserialize)]
struct Entry {
    index: usize,
    rows: usize,
    cols: usize,
    /// Offset in values, not bytes.
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct BlobInfo {
    file: String,
    sha256: String,
    entries: Vec<Entry>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    version: u32,
    /// The model with every parameter value emptied.
    model: ComposedModel,
    blobs: BTreeMap<String, BlobInfo>,
    /// Free-form metadata, e.g. training state.
    #[serde(default)]
    meta: serde_json::Value,
}

fn hex_sha(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

/// Writes `dir/manifest.json` and one blob per component with live parameters.
pub fn save(model: &ComposedModel, dir: &Path, meta: serde_json::Value) -> Result<(), CheckpointError> {
    fs::create_dir_all(dir)?;
    let mut skeleton = model.clone();
    let mut blobs = BTreeMap::new();
    for component in Component::ALL {
        let mut bytes = Vec::new();
        let mut entries = Vec::new();
        let mut offset = 0;
        for (id, p) in model.store.iter().filter(|(_, p)| p.component == component) {
            for v in p.value.data() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            entries.push(Entry {
                index: id.index(),
                rows: p.value.rows(),
                cols: p.value.cols(),
                offset,
            });
            offset += p.value.len();
            *skeleton.store.value_mut(id) = Tensor::default();
        }
        if entries.is_empty() {
            continue;
        }
        let file = format!("{}.bin", component.name());
        fs::write(dir.join(&file), &bytes)?;
        blobs.insert(
            component.name().to_owned(),
            BlobInfo {
                file,
                sha256: hex_sha(&bytes),
                entries,
            },
        );
    }
    let manifest = Manifest {
        version: CHECKPOINT_VERSION,
        model: skeleton,
        blobs,
        meta,
    };
    let json = serde_json::to_vec_pretty(&manifest).map_err(|e| CheckpointError::Manifest(e.to_string()))?;
    fs::write(dir.join(MANIFEST), json)?;
    Ok(())
}

/// Loads a checkpoint written by [`save`], verifying blob digests and shapes.
pub fn load(dir: &Path) -> Result<(ComposedModel, serde_json::Value), CheckpointError> {
    let bytes = fs::read(dir.join(MANIFEST))?;
    let manifest: Manifest = serde_json::from_slice(&bytes).map_err(|e| CheckpointError::Manifest(e.to_string()))?;
    if manifest.version != CHECKPOINT_VERSION {
        return Err(CheckpointError::Version(manifest.version));
    }
    let mut model = manifest.model;
    for info in manifest.blobs.values() {
        let err = |reason: String| CheckpointError::Blob {
            file: info.file.clone(),
            reason,
        };
        let raw = fs::read(dir.join(&info.file))?;
        if hex_sha(&raw) != info.sha256 {
            return Err(err("digest mismatch".into()));
        }
        if raw.len() % 8 != 0 {
            return Err(err("length is not a whole number of f64 values".into()));
        }
        let values: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        for e in &info.entries {
            if e.index >= model.store.len() {
                return Err(err(format!("parameter index {} out of range", e.index)));
            }
            let n = e.rows * e.cols;
            let data = values
                .get(e.offset..e.offset + n)
                .ok_or_else(|| err(format!("parameter {} runs past the end", e.index)))?;
            let id = ParamId(e.index);
            *model.store.value_mut(id) = Tensor::from_vec(e.rows, e.cols, data.to_vec());
        }
    }
    for (_, p) in model.store.iter() {
        if p.value.is_empty() {
            return Err(CheckpointError::Manifest(format!("parameter {} has no stored value", p.name)));
        }
    }
    model.restore();
    Ok((model, manifest.meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AdapterConfig, Example, ModelConfig, PrefixSource};
    use crate::tokenizer::Tokenizer;
    use std::sync::Arc;

    fn model() -> ComposedModel {
        let tok = Tokenizer::train(["in the north", "what else"].iter().copied(), 40);
        let mut m = ComposedModel::new(ModelConfig::desk(4), tok).unwrap();
        m.inject_adapters(AdapterConfig::default(), 1).unwrap();
        m
    }

    fn tmpdir(name: &str) -> std::path::PathBuf {
        std::env::temp_dir().join(format!("dst-ckpt-{}-{name}", std::process::id()))
    }

    #[test]
    fn round_trip_preserves_every_component() {
        let m = model();
        let dir = tmpdir("rt");
        save(&m, &dir, serde_json::json!({"step": 3})).unwrap();
        let (back, meta) = load(&dir).unwrap();
        assert_eq!(meta["step"], 3);
        for c in Component::ALL {
            assert_eq!(back.fingerprint(c), m.fingerprint(c));
        }
        let ex = Example {
            frames: Some(Arc::new(Tensor::filled(12, 4, 0.5))),
            utterance: None,
            history: m.tokenizer.encode("what else"),
            target: m.tokenizer.encode("in the north"),
        };
        assert_eq!(
            back.loss_value(PrefixSource::Speech, &ex).unwrap().to_bits(),
            m.loss_value(PrefixSource::Speech, &ex).unwrap().to_bits()
        );
    }

    #[test]
    fn missing_text_encoder_survives_round_trip() {
        let mut m = model();
        m.drop_text_encoder();
        let dir = tmpdir("nte");
        save(&m, &dir, serde_json::Value::Null).unwrap();
        assert!(!dir.join("text_encoder.bin").exists());
        let (back, _) = load(&dir).unwrap();
        assert!(back.text_encoder.is_none());
    }

    #[test]
    fn corrupted_blob_is_rejected() {
        let m = model();
        let dir = tmpdir("bad");
        save(&m, &dir, serde_json::Value::Null).unwrap();
        let p = dir.join("connector.bin");
        let mut b = fs::read(&p).unwrap();
        b[0] ^= 1;
        fs::write(&p, b).unwrap();
        assert!(matches!(load(&dir), Err(CheckpointError::Blob { .. })));
    }
}
