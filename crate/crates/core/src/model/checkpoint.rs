//! Checkpoint files.
//!
//! Layout (all integers little-endian):
//!
//! | bytes        | content                                                      |
//! |--------------|--------------------------------------------------------------|
//! | 0..8         | magic `XF2TCKP1`                                              |
//! | 8..16        | `u64` length `H` of the JSON header                           |
//! | 16..16+H     | UTF-8 JSON header `{"config", "languages", "tensors"}`       |
//! | 16+H..       | tensor data in header order, row-major `f64` little-endian   |
//!
//! `tensors` lists `{"name", "rows", "cols"}` per tensor; `languages` is the vocabulary's
//! language set so the matching vocabulary file can be read back.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use super::{ModelConfig, ModelError, ModelParams};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"XF2TCKP1";

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    languages: Vec<String>,
    tensors: Vec<TensorEntry>,
}

fn io_err(e: std::io::Error) -> ModelError {
    ModelError::Checkpoint(e.to_string())
}

pub fn write_checkpoint<W: Write>(mut w: W, params: &ModelParams, languages: &[String]) -> Result<(), ModelError> {
    let header = Header {
        config: params.config.clone(),
        languages: languages.to_vec(),
        tensors: params
            .names()
            .iter()
            .zip(&params.tensors)
            .map(|(n, t)| TensorEntry { name: n.clone(), rows: t.rows, cols: t.cols })
            .collect(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    w.write_all(CHECKPOINT_MAGIC).map_err(io_err)?;
    w.write_all(&(json.len() as u64).to_le_bytes()).map_err(io_err)?;
    w.write_all(&json).map_err(io_err)?;
    for t in &params.tensors {
        for x in &t.data {
            w.write_all(&x.to_le_bytes()).map_err(io_err)?;
        }
    }
    w.flush().map_err(io_err)
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<(ModelParams, Vec<String>), ModelError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io_err)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(ModelError::Checkpoint("bad magic".into()));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len).map_err(io_err)?;
    let len = u64::from_le_bytes(len) as usize;
    let mut json = vec![0u8; len];
    r.read_exact(&mut json).map_err(io_err)?;
    let header: Header = serde_json::from_slice(&json).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    let mut named = Vec::with_capacity(header.tensors.len());
    let mut buf = [0u8; 8];
    for e in header.tensors {
        let mut data = Vec::with_capacity(e.rows * e.cols);
        for _ in 0..e.rows * e.cols {
            r.read_exact(&mut buf).map_err(io_err)?;
            data.push(f64::from_le_bytes(buf));
        }
        named.push((e.name, Matrix::from_vec(e.rows, e.cols, data)));
    }
    if r.read(&mut buf).map_err(io_err)? != 0 {
        return Err(ModelError::Checkpoint("trailing bytes after tensor data".into()));
    }
    Ok((ModelParams::from_tensors(header.config, named)?, header.languages))
}

pub fn save_checkpoint(path: &Path, params: &ModelParams, languages: &[String]) -> Result<(), ModelError> {
    let f = File::create(path).map_err(io_err)?;
    write_checkpoint(BufWriter::new(f), params, languages)
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelParams, Vec<String>), ModelError> {
    let f = File::open(path).map_err(io_err)?;
    read_checkpoint(BufReader::new(f))
}
