//! Versioned single-file checkpoints.
//!
//! Layout: the 8-byte magic `TEXTIRCK`, a little-endian `u32` format version,
//! a `u64` header length, a JSON header, then every tensor as contiguous
//! little-endian `f32` in header order.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::conditioning::ProviderSpec;
use crate::error::{Error, Result};
use crate::generator::GeneratorSpec;
use crate::model::TextIr;

pub const MAGIC: &[u8; 8] = b"TEXTIRCK";
pub const FORMAT_VERSION: u32 = 1;

/// Prefix of the restorer's own weights inside a checkpoint.
pub const MODEL_PREFIX: &str = "model/";

/// Prefix of the moving average of the model's weights, when kept.
pub const EMA_PREFIX: &str = "ema/";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    spec: GeneratorSpec,
    provider: Option<ProviderSpec>,
    step: u64,
    #[serde(default)]
    extra: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub spec: GeneratorSpec,
    pub provider: Option<ProviderSpec>,
    pub step: u64,
    /// Free-form metadata, e.g. training state that is not a tensor.
    pub extra: serde_json::Value,
    pub tensors: BTreeMap<String, Tensor>,
}

fn corrupt(path: &Path, reason: impl Into<String>) -> Error {
    Error::Checkpoint {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

impl Checkpoint {
    /// A checkpoint holding only the model's weights.
    pub fn from_model(model: &TextIr, provider: Option<&ProviderSpec>) -> Result<Self> {
        let mut ckpt = Self {
            spec: model.spec().clone(),
            provider: provider.cloned(),
            step: 0,
            extra: serde_json::Value::Null,
            tensors: BTreeMap::new(),
        };
        ckpt.insert_section(MODEL_PREFIX, model.params().snapshot()?);
        Ok(ckpt)
    }

    pub fn insert_section(&mut self, prefix: &str, tensors: BTreeMap<String, Tensor>) {
        for (k, v) in tensors {
            self.tensors.insert(format!("{prefix}{k}"), v);
        }
    }

    /// Tensors under `prefix`, with the prefix stripped.
    pub fn section(&self, prefix: &str) -> BTreeMap<String, Tensor> {
        self.tensors
            .iter()
            .filter_map(|(k, v)| k.strip_prefix(prefix).map(|s| (s.to_string(), v.clone())))
            .collect()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            spec: self.spec.clone(),
            provider: self.provider.clone(),
            step: self.step,
            extra: self.extra.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|(name, t)| TensorEntry {
                    name: name.clone(),
                    shape: t.dims().to_vec(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::config(e.to_string()))?;
        let mut out = Vec::with_capacity(json.len() + 20);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for t in self.tensors.values() {
            for v in t.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()? {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path, device: &Device) -> Result<Self> {
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(corrupt(path, "not a checkpoint file (bad magic)"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(corrupt(
                path,
                format!("format version {version}, this build reads {FORMAT_VERSION}"),
            ));
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = &bytes[20..];
        if header_len > body.len() {
            return Err(corrupt(path, "truncated header"));
        }
        let header: Header = serde_json::from_slice(&body[..header_len])
            .map_err(|e| corrupt(path, format!("unreadable header: {e}")))?;
        let mut blob = &body[header_len..];
        let mut tensors = BTreeMap::new();
        for entry in header.tensors {
            let n: usize = entry.shape.iter().product();
            let size = n * 4;
            if blob.len() < size {
                return Err(corrupt(path, format!("truncated data for `{}`", entry.name)));
            }
            let values: Vec<f32> = blob[..size]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            blob = &blob[size..];
            tensors.insert(entry.name, Tensor::from_vec(values, entry.shape, device)?);
        }
        if !blob.is_empty() {
            return Err(corrupt(path, format!("{} trailing bytes", blob.len())));
        }
        Ok(Self {
            spec: header.spec,
            provider: header.provider,
            step: header.step,
            extra: header.extra,
            tensors,
        })
    }

    /// Writes through a temporary file and returns the content hash.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<String> {
        let path = path.as_ref();
        let bytes = self.to_bytes()?;
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        let tmp = tmp_path(path);
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&bytes)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(hex::encode(Sha256::digest(&bytes)))
    }

    pub fn read(path: impl AsRef<Path>, device: &Device) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| corrupt(path, e.to_string()))?;
        Self::from_bytes(&bytes, path, device)
    }

    /// Rebuilds the model stored in this checkpoint, using the moving
    /// average of the weights when the run kept one.
    pub fn to_model(&self, device: &Device) -> Result<TextIr> {
        let model = TextIr::new(self.spec.clone(), device, 0)?;
        let ema = self.section(EMA_PREFIX);
        if ema.is_empty() {
            model.params().load(&self.section(MODEL_PREFIX))?;
        } else {
            model.params().load(&ema)?;
        }
        Ok(model)
    }
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".tmp");
    path.with_file_name(name)
}

/// SHA-256 of a file's bytes, hex encoded.
pub fn file_hash(path: impl AsRef<Path>) -> Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

/// Loads a model checkpoint, refusing it when its spec differs from `expected`.
pub fn load_checkpoint(
    path: impl AsRef<Path>,
    expected: Option<&GeneratorSpec>,
    device: &Device,
) -> Result<(TextIr, Checkpoint)> {
    let ckpt = Checkpoint::read(path, device)?;
    if let Some(expected) = expected {
        if *expected != ckpt.spec {
            return Err(Error::SpecMismatch {
                expected: expected.describe(),
                found: ckpt.spec.describe(),
            });
        }
    }
    let model = ckpt.to_model(device)?;
    Ok((model, ckpt))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Task;

    #[test]
    fn round_trip_preserves_weights() {
        let dev = Device::Cpu;
        let model = TextIr::new(GeneratorSpec::tiny(Task::Inpaint, 16), &dev, 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let hash = Checkpoint::from_model(&model, None).unwrap().save(&path).unwrap();
        assert_eq!(hash, file_hash(&path).unwrap());
        let (back, _) = load_checkpoint(&path, Some(model.spec()), &dev).unwrap();
        let a = model.params().snapshot().unwrap();
        let b = back.params().snapshot().unwrap();
        for (k, t) in &a {
            let d = (t - &b[k]).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f32>().unwrap();
            assert_eq!(d, 0.0, "{k}");
        }
    }

    #[test]
    fn wrong_spec_and_corruption_are_refused() {
        let dev = Device::Cpu;
        let model = TextIr::new(GeneratorSpec::tiny(Task::Inpaint, 16), &dev, 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        Checkpoint::from_model(&model, None).unwrap().save(&path).unwrap();
        let other = GeneratorSpec::tiny(Task::Inpaint, 32);
        assert!(matches!(
            load_checkpoint(&path, Some(&other), &dev),
            Err(Error::SpecMismatch { .. })
        ));
        let mut bytes = fs::read(&path).unwrap();
        bytes.pop();
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_checkpoint(&path, None, &dev), Err(Error::Checkpoint { .. })));
        fs::write(&path, b"garbage").unwrap();
        assert!(matches!(load_checkpoint(&path, None, &dev), Err(Error::Checkpoint { .. })));
    }
}
