//! Versioned, self-describing checkpoint container.
//!
//! Layout: the magic `RAWGATCK`, a little-endian `u32` format version, a
//! little-endian `u64` header length, a JSON header (model configuration,
//! metadata and the tensor table), the tensor payload as little-endian
//! `f32` values in table order, and a SHA-256 digest of everything before it.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ModelConfig, RawGatModel};
use crate::error::{Error, Result};
use crate::params::ParamKind;

const MAGIC: &[u8; 8] = b"RAWGATCK";
pub const FORMAT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub epoch: Option<usize>,
    pub dev_loss: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TensorRecord {
    name: String,
    kind: ParamKind,
    shape: Vec<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    seed: u64,
    meta: CheckpointMeta,
    tensors: Vec<TensorRecord>,
}

pub fn encode(model: &RawGatModel, meta: &CheckpointMeta) -> Result<Vec<u8>> {
    let entries = model.store().entries();
    let header = Header {
        config: model.config().clone(),
        seed: model.config().seed,
        meta: meta.clone(),
        tensors: entries
            .iter()
            .map(|e| TensorRecord {
                name: e.name.clone(),
                kind: e.kind,
                shape: e.tensor.shape().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut buf = Vec::with_capacity(json.len() + 64 + 4 * model.store().entries().len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    for e in entries {
        for &v in e.tensor.data() {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    Ok(buf)
}

fn corrupt(detail: impl Into<String>) -> Error {
    Error::Checkpoint(detail.into())
}

fn parse_header(bytes: &[u8]) -> Result<(Header, &[u8])> {
    if bytes.len() < MAGIC.len() + 12 + DIGEST_LEN || &bytes[..8] != MAGIC {
        return Err(corrupt("not a checkpoint file (bad magic or truncated)"));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(corrupt("digest mismatch; file is corrupted"));
    }
    let version = u32::from_le_bytes(body[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(corrupt(format!("format version {version}, this build reads {FORMAT_VERSION}")));
    }
    let len = u64::from_le_bytes(body[12..20].try_into().unwrap()) as usize;
    let json = body.get(20..20 + len).ok_or_else(|| corrupt("header length past end of file"))?;
    let header: Header = serde_json::from_slice(json).map_err(|e| corrupt(format!("header: {e}")))?;
    Ok((header, &body[20 + len..]))
}

pub fn decode(bytes: &[u8]) -> Result<(RawGatModel, CheckpointMeta)> {
    let (header, payload) = parse_header(bytes)?;
    let mut model = RawGatModel::new(header.config.clone())?;
    let entries = model.store_mut().entries_mut();
    if entries.len() != header.tensors.len() {
        return Err(corrupt(format!(
            "{} tensors stored, configuration builds {}",
            header.tensors.len(),
            entries.len()
        )));
    }
    let total: usize = header.tensors.iter().map(|t| t.shape.iter().product::<usize>()).sum();
    if payload.len() != 4 * total {
        return Err(corrupt(format!("payload holds {} bytes, table needs {}", payload.len(), 4 * total)));
    }
    let mut values = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64);
    for (entry, rec) in entries.iter_mut().zip(&header.tensors) {
        if entry.name != rec.name || entry.kind != rec.kind || entry.tensor.shape() != rec.shape.as_slice() {
            return Err(corrupt(format!(
                "tensor `{}` {:?} does not match model tensor `{}` {:?}",
                rec.name,
                rec.shape,
                entry.name,
                entry.tensor.shape()
            )));
        }
        for slot in entry.tensor.data_mut() {
            *slot = values.next().expect("length checked");
        }
        entry.tensor.ensure_finite(&entry.name)?;
    }
    Ok((model, header.meta))
}

/// Writes through a temporary sibling file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = temp_sibling(path);
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(result?)
}

fn temp_sibling(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".tmp");
    path.with_file_name(name)
}

pub fn save(model: &RawGatModel, meta: &CheckpointMeta, path: &Path) -> Result<()> {
    write_atomic(path, &encode(model, meta)?)
}

pub fn load(path: &Path) -> Result<(RawGatModel, CheckpointMeta)> {
    let bytes = fs::read(path).map_err(|e| corrupt(format!("{}: {e}", path.display())))?;
    decode(&bytes)
}

/// Configuration stored in a checkpoint, without rebuilding the model.
pub fn read_config(path: &Path) -> Result<ModelConfig> {
    let bytes = fs::read(path).map_err(|e| corrupt(format!("{}: {e}", path.display())))?;
    Ok(parse_header(&bytes)?.0.config)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig {
            segment_length: 900,
            sinc_filters: 9,
            sinc_kernel: 33,
            encoder_channels: vec![3, 4],
            encoder_blocks: vec![1, 1],
            gat_dim: 3,
            st_gat_dim: 2,
            fused_nodes: 3,
            mask_limit: 1,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn round_trip_restores_f32_values() {
        let model = RawGatModel::new(tiny()).unwrap();
        let meta = CheckpointMeta {
            epoch: Some(3),
            dev_loss: Some(0.25),
        };
        let (back, m) = decode(&encode(&model, &meta).unwrap()).unwrap();
        assert_eq!(m, meta);
        assert_eq!(back.config(), model.config());
        for (a, b) in model.store().entries().iter().zip(back.store().entries()) {
            assert_eq!(a.name, b.name);
            for (x, y) in a.tensor.data().iter().zip(b.tensor.data()) {
                assert_eq!(*x as f32 as f64, *y);
            }
        }
    }

    #[test]
    fn any_flipped_byte_is_detected() {
        let model = RawGatModel::new(tiny()).unwrap();
        let bytes = encode(&model, &CheckpointMeta::default()).unwrap();
        for pos in [0, 9, 30, bytes.len() / 2, bytes.len() - 1] {
            let mut bad = bytes.clone();
            bad[pos] ^= 0x40;
            assert!(decode(&bad).is_err(), "flip at {pos}");
        }
        assert!(decode(&bytes[..bytes.len() - 5]).is_err());
    }

    #[test]
    fn atomic_write_leaves_no_temp() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let model = RawGatModel::new(tiny()).unwrap();
        save(&model, &CheckpointMeta::default(), &path).unwrap();
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
        assert_eq!(read_config(&path).unwrap(), *model.config());
    }
}
