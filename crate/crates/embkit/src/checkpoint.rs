//! Checkpoint persistence for the bi-encoder.
//!
//! File layout:
//!
//! ```text
//! EMBKIT1\n                      8-byte magic
//! {json header}\n                dims, adapter rank/alpha, tokenizer config,
//!                                format version, tensor order
//! <payload>                      little-endian f32 arrays, row-major, in
//!                                header-declared order
//! ```
//!
//! Parameters are held in f64 in memory and stored as f32 on disk;
//! `save(load(file))` reproduces `file` byte for byte.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::model::{BiEncoder, LoraAdapter, ModelParams};
use crate::tokenizer::TokenizerConfig;

pub const MAGIC: &[u8; 8] = b"EMBKIT1\n";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("bad magic: not an embkit checkpoint")]
    BadMagic,
    #[error("checkpoint format version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("truncated checkpoint: payload is {found_bytes} bytes, header declares {expected_bytes}")]
    TruncatedFile {
        expected_bytes: usize,
        found_bytes: usize,
    },
    #[error("invalid checkpoint header: {0}")]
    InvalidHeader(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    tokenizer: TokenizerConfig,
    d_embed: usize,
    d_out: usize,
    lora_rank: usize,
    lora_alpha: f64,
    tensors: Vec<TensorMeta>,
}

fn tensor_meta(name: &str, m: &Array2<f64>) -> TensorMeta {
    TensorMeta {
        name: name.to_string(),
        rows: m.nrows(),
        cols: m.ncols(),
    }
}

fn write_tensor(buf: &mut Vec<u8>, m: &Array2<f64>) {
    for &x in m.iter() {
        buf.extend_from_slice(&(x as f32).to_le_bytes());
    }
}

/// Serialize a model bundle to `path`. Values are quantized to f32.
pub fn save_checkpoint(model: &BiEncoder, path: &Path) -> Result<(), CheckpointError> {
    let params = &model.params;
    let mut tensors = vec![
        tensor_meta("embed", &params.embed),
        tensor_meta("proj", &params.proj),
    ];
    if let Some(lora) = &params.lora {
        tensors.push(tensor_meta("lora_a", &lora.a));
        tensors.push(tensor_meta("lora_b", &lora.b));
    }
    let header = Header {
        format_version: FORMAT_VERSION,
        tokenizer: model.tokenizer.clone(),
        d_embed: params.d_embed(),
        d_out: params.d_out(),
        lora_rank: params.lora_rank(),
        lora_alpha: params.lora.as_ref().map_or(0.0, |l| l.alpha),
        tensors,
    };

    let mut bytes = Vec::new();
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(
        serde_json::to_string(&header)
            .expect("header serializes")
            .as_bytes(),
    );
    bytes.push(b'\n');
    write_tensor(&mut bytes, &params.embed);
    write_tensor(&mut bytes, &params.proj);
    if let Some(lora) = &params.lora {
        write_tensor(&mut bytes, &lora.a);
        write_tensor(&mut bytes, &lora.b);
    }
    fs::write(path, bytes)?;
    Ok(())
}

fn read_tensor(payload: &[u8], offset: &mut usize, rows: usize, cols: usize) -> Array2<f64> {
    let mut m = Array2::zeros((rows, cols));
    for x in m.iter_mut() {
        let chunk: [u8; 4] = payload[*offset..*offset + 4].try_into().unwrap();
        *x = f32::from_le_bytes(chunk) as f64;
        *offset += 4;
    }
    m
}

/// Load a model bundle from `path`.
pub fn load_checkpoint(path: &Path) -> Result<BiEncoder, CheckpointError> {
    let bytes = fs::read(path)?;
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let rest = &bytes[MAGIC.len()..];
    let newline = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| CheckpointError::InvalidHeader("missing header line".into()))?;
    let header: Header = serde_json::from_slice(&rest[..newline])
        .map_err(|e| CheckpointError::InvalidHeader(e.to_string()))?;
    if header.format_version != FORMAT_VERSION {
        return Err(CheckpointError::VersionMismatch {
            found: header.format_version,
            expected: FORMAT_VERSION,
        });
    }

    let expected_names: &[&str] = if header.lora_rank > 0 {
        &["embed", "proj", "lora_a", "lora_b"]
    } else {
        &["embed", "proj"]
    };
    if header.tensors.len() != expected_names.len()
        || header
            .tensors
            .iter()
            .zip(expected_names)
            .any(|(meta, name)| meta.name != *name)
    {
        return Err(CheckpointError::InvalidHeader(format!(
            "tensor list {:?} does not match adapter rank {}",
            header.tensors.iter().map(|t| &t.name).collect::<Vec<_>>(),
            header.lora_rank
        )));
    }
    let dims_ok = {
        let t = &header.tensors;
        let base = t[0].rows == header.tokenizer.hash_buckets
            && t[0].cols == header.d_embed
            && t[1].rows == header.d_out
            && t[1].cols == header.d_embed;
        let adapter = header.lora_rank == 0
            || (t[2].rows == header.lora_rank
                && t[2].cols == header.d_embed
                && t[3].rows == header.d_out
                && t[3].cols == header.lora_rank);
        base && adapter
    };
    if !dims_ok {
        return Err(CheckpointError::InvalidHeader(
            "tensor shapes disagree with declared dims".into(),
        ));
    }

    let payload = &rest[newline + 1..];
    let expected_bytes: usize = header.tensors.iter().map(|t| t.rows * t.cols * 4).sum();
    if payload.len() != expected_bytes {
        return Err(CheckpointError::TruncatedFile {
            expected_bytes,
            found_bytes: payload.len(),
        });
    }

    let mut offset = 0;
    let embed = read_tensor(payload, &mut offset, header.tensors[0].rows, header.tensors[0].cols);
    let proj = read_tensor(payload, &mut offset, header.tensors[1].rows, header.tensors[1].cols);
    let lora = if header.lora_rank > 0 {
        let a = read_tensor(payload, &mut offset, header.tensors[2].rows, header.tensors[2].cols);
        let b = read_tensor(payload, &mut offset, header.tensors[3].rows, header.tensors[3].cols);
        Some(LoraAdapter {
            a,
            b,
            alpha: header.lora_alpha,
        })
    } else {
        None
    };

    Ok(BiEncoder {
        tokenizer: header.tokenizer,
        params: ModelParams { embed, proj, lora },
    })
}
