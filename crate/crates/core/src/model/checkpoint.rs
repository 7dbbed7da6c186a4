//! Model checkpoint file: a JSON index header followed by the raw parameter
//! arrays as little-endian 64-bit floats.
//!
//! Layout: 8-byte magic, u64 LE header length, header JSON (model config plus
//! an index of `(name, shape, byte offset)` entries), then the data section
//! the offsets point into.

use super::{ModelConfig, ModelError, Tensor, TensorMap, TinyDepth};
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write;
use std::path::Path;

const MAGIC: &[u8; 8] = b"RDEPTHCK";

#[derive(Debug, Serialize, Deserialize)]
struct IndexEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    index: Vec<IndexEntry>,
}

pub fn save_checkpoint(path: &Path, model: &TinyDepth) -> Result<(), ModelError> {
    let mut index = Vec::new();
    let mut offset = 0u64;
    for (name, tensor) in model.params().iter() {
        index.push(IndexEntry {
            name: name.clone(),
            shape: tensor.shape.clone(),
            offset,
        });
        offset += (tensor.len() * 8) as u64;
    }
    let header = Header {
        config: *model.config(),
        index,
    };
    let header_bytes =
        serde_json::to_vec(&header).map_err(|e| ModelError::Checkpoint(e.to_string()))?;

    let mut file = fs::File::create(path)?;
    file.write_all(MAGIC)?;
    file.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
    file.write_all(&header_bytes)?;
    for (_, tensor) in model.params().iter() {
        let mut buf = Vec::with_capacity(tensor.len() * 8);
        for &v in &tensor.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        file.write_all(&buf)?;
    }
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<TinyDepth, ModelError> {
    let bytes = fs::read(path)?;
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(ModelError::Checkpoint("bad magic".into()));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let header_end = 16 + header_len;
    if bytes.len() < header_end {
        return Err(ModelError::Checkpoint("truncated header".into()));
    }
    let header: Header = serde_json::from_slice(&bytes[16..header_end])
        .map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    let data = &bytes[header_end..];

    let mut params = TensorMap::new();
    for entry in header.index {
        let len: usize = entry.shape.iter().product();
        let start = entry.offset as usize;
        let end = start + len * 8;
        if end > data.len() {
            return Err(ModelError::Checkpoint(format!(
                "tensor `{}` extends past end of file",
                entry.name
            )));
        }
        let values: Vec<f64> = data[start..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        params.insert(
            entry.name,
            Tensor {
                shape: entry.shape,
                data: values,
            },
        );
    }
    TinyDepth::from_parts(header.config, params)
}
