//! `model.json` (header and tensor index) plus `model.bin` (little-endian f32).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};
use crate::ingest::{read_json, write_json};
use crate::raster::{decode_f32, encode_f32};

use super::{Architecture, ModelParams, NamedTensor};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// Offset in floats from the start of `model.bin`.
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    seed: u64,
    architecture: Architecture,
    tensors: Vec<TensorEntry>,
}

pub fn save_checkpoint(params: &ModelParams, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut offset = 0;
    let mut entries = Vec::with_capacity(params.tensors.len());
    let mut blob = Vec::new();
    for t in &params.tensors {
        entries.push(TensorEntry {
            name: t.name.clone(),
            shape: t.shape.clone(),
            offset,
        });
        offset += t.len();
        blob.extend_from_slice(&encode_f32(&t.data));
    }
    let header = Header {
        version: CHECKPOINT_VERSION,
        seed: params.seed,
        architecture: params.architecture.clone(),
        tensors: entries,
    };
    write_json(&dir.join("model.json"), &header)?;
    let bin = dir.join("model.bin");
    fs::write(&bin, blob).map_err(io_err(&bin))
}

pub fn load_checkpoint(dir: &Path) -> Result<ModelParams> {
    let header: Header = read_json(&dir.join("model.json"))?;
    if header.version != CHECKPOINT_VERSION {
        return Err(Error::CheckpointVersion {
            found: header.version,
            supported: CHECKPOINT_VERSION,
        });
    }
    let bin = dir.join("model.bin");
    let bytes = fs::read(&bin).map_err(io_err(&bin))?;
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for e in header.tensors {
        let len: usize = e.shape.iter().product();
        let (start, end) = (e.offset * 4, (e.offset + len) * 4);
        if end > bytes.len() {
            return Err(Error::Checkpoint(format!(
                "model.bin is truncated: tensor {} needs bytes {start}..{end}, file has {}",
                e.name,
                bytes.len()
            )));
        }
        tensors.push(NamedTensor {
            data: decode_f32(&bytes[start..end]),
            name: e.name,
            shape: e.shape,
        });
    }
    let params = ModelParams {
        architecture: header.architecture,
        seed: header.seed,
        tensors,
    };
    params.check_layout().map_err(|e| Error::Checkpoint(e.to_string()))?;
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::super::init_params;
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = init_params(9);
        save_checkpoint(&p, dir.path()).unwrap();
        let back = load_checkpoint(dir.path()).unwrap();
        assert_eq!(back.seed, 9);
        for (a, b) in p.tensors.iter().zip(&back.tensors) {
            assert_eq!(a.name, b.name);
            assert!(a.data.iter().zip(&b.data).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn truncation_names_the_tensor() {
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(&init_params(1), dir.path()).unwrap();
        let bin = dir.path().join("model.bin");
        let bytes = fs::read(&bin).unwrap();
        fs::write(&bin, &bytes[..bytes.len() - 4]).unwrap();
        let err = load_checkpoint(dir.path()).unwrap_err().to_string();
        assert!(err.contains("output/bias"), "{err}");
    }

    #[test]
    fn unknown_version_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(&init_params(1), dir.path()).unwrap();
        let path = dir.path().join("model.json");
        let text = fs::read_to_string(&path).unwrap().replace("\"version\": 1", "\"version\": 99");
        fs::write(&path, text).unwrap();
        assert!(matches!(load_checkpoint(dir.path()), Err(Error::CheckpointVersion { found: 99, .. })));
    }
}
