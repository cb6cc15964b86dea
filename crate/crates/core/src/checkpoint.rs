//! Binary model checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "GDIMPCKP"
//! version    u32
//! header     u64 length + UTF-8 JSON (schema, graph, model config, layout statistics)
//! tensors    u32 count, then per tensor:
//!            u32 name length + name, u32 rows, u32 cols, rows·cols f32 values
//! ```

use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diffusion::{ImputerModel, ModelConfig};
use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::schema::{AssemblyGraph, FeatureSchema};

pub const MAGIC: &[u8; 8] = b"GDIMPCKP";
pub const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    schema: serde_json::Value,
    graph: serde_json::Value,
    model: ModelConfig,
    layout_stats: Vec<(f64, f64)>,
    trained: bool,
}

pub fn to_bytes(model: &ImputerModel) -> Vec<u8> {
    let header = Header {
        schema: serde_json::from_str(&model.schema().to_json()).expect("schema JSON"),
        graph: serde_json::from_str(&model.graph().to_json()).expect("graph JSON"),
        model: model.config().clone(),
        layout_stats: model.layout().stats().to_vec(),
        trained: model.is_trained(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.write_u32::<LittleEndian>(VERSION).unwrap();
    out.write_u64::<LittleEndian>(json.len() as u64).unwrap();
    out.extend_from_slice(&json);
    out.write_u32::<LittleEndian>(model.params().len() as u32).unwrap();
    for (name, m) in model.params().iter() {
        out.write_u32::<LittleEndian>(name.len() as u32).unwrap();
        out.extend_from_slice(name.as_bytes());
        out.write_u32::<LittleEndian>(m.nrows() as u32).unwrap();
        out.write_u32::<LittleEndian>(m.ncols() as u32).unwrap();
        for &x in m.iter() {
            out.write_f32::<LittleEndian>(x as f32).unwrap();
        }
    }
    out
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn from_bytes(bytes: &[u8]) -> Result<ImputerModel> {
    let mut r = Cursor::new(bytes);
    let truncated = |_| corrupt("checkpoint is truncated");
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(truncated)?;
    if &magic != MAGIC {
        return Err(corrupt("not a checkpoint file (bad magic)"));
    }
    let version = r.read_u32::<LittleEndian>().map_err(truncated)?;
    if version != VERSION {
        return Err(corrupt(format!("unsupported checkpoint version {version}")));
    }
    let len = r.read_u64::<LittleEndian>().map_err(truncated)? as usize;
    let mut json = vec![0u8; len.min(bytes.len())];
    r.read_exact(&mut json).map_err(truncated)?;
    let header: Header =
        serde_json::from_slice(&json).map_err(|e| corrupt(format!("bad header: {e}")))?;
    let schema = std::sync::Arc::new(FeatureSchema::from_json(&header.schema.to_string())?);
    let graph = AssemblyGraph::from_json(&header.graph.to_string(), schema)?;

    let count = r.read_u32::<LittleEndian>().map_err(truncated)?;
    let mut params = ParamStore::new();
    for _ in 0..count {
        let n = r.read_u32::<LittleEndian>().map_err(truncated)? as usize;
        let mut name = vec![0u8; n.min(bytes.len())];
        r.read_exact(&mut name).map_err(truncated)?;
        let name = String::from_utf8(name).map_err(|_| corrupt("tensor name is not UTF-8"))?;
        let rows = r.read_u32::<LittleEndian>().map_err(truncated)? as usize;
        let cols = r.read_u32::<LittleEndian>().map_err(truncated)? as usize;
        let size = rows.checked_mul(cols).filter(|s| s * 4 <= bytes.len()).ok_or_else(|| corrupt("tensor too large"))?;
        let mut data = Vec::with_capacity(size);
        for _ in 0..size {
            let x = r.read_f32::<LittleEndian>().map_err(truncated)?;
            if !x.is_finite() {
                return Err(corrupt(format!("tensor '{name}' holds a non-finite value")));
            }
            data.push(f64::from(x));
        }
        let m = Array2::from_shape_vec((rows, cols), data).expect("size checked");
        if params.get(&name).is_some() {
            return Err(corrupt(format!("duplicate tensor '{name}'")));
        }
        params.insert(name, m);
    }
    if (r.position() as usize) != bytes.len() {
        return Err(corrupt("trailing bytes after the last tensor"));
    }
    ImputerModel::from_parts(graph, header.model, params, header.layout_stats, header.trained)
}

/// Lowercase hex SHA-256.
pub fn digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes the checkpoint and returns its digest.
pub fn save(model: &ImputerModel, path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let bytes = to_bytes(model);
    fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
    Ok(digest(&bytes))
}

/// Loads a checkpoint and returns the model with the file digest.
pub fn load(path: impl AsRef<Path>) -> Result<(ImputerModel, String)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok((from_bytes(&bytes)?, digest(&bytes)))
}
