//! `.tsr` files: one JSON header line `{"shape":[...],"dtype":"f64"}` followed
//! by the little-endian `f64` payload in row-major order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct Header {
    shape: Vec<usize>,
    dtype: String,
}

pub fn encode_tsr(tensor: &Tensor) -> Vec<u8> {
    let header = Header {
        shape: tensor.shape().to_vec(),
        dtype: "f64".to_string(),
    };
    let mut out = serde_json::to_vec(&header).expect("header serializes");
    out.push(b'\n');
    out.reserve(tensor.numel() * 8);
    for v in tensor.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_tsr(bytes: &[u8]) -> std::result::Result<Tensor, String> {
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or("missing header line")?;
    let header: Header =
        serde_json::from_slice(&bytes[..newline]).map_err(|e| format!("bad header: {e}"))?;
    if header.dtype != "f64" {
        return Err(format!("unsupported dtype {:?}", header.dtype));
    }
    let payload = &bytes[newline + 1..];
    let numel: usize = header.shape.iter().product();
    if payload.len() != numel * 8 {
        return Err(format!(
            "payload has {} bytes, shape {:?} needs {}",
            payload.len(),
            header.shape,
            numel * 8
        ));
    }
    let data = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Tensor::new(header.shape, data).map_err(|e| e.to_string())
}

pub fn write_tsr(path: impl AsRef<Path>, tensor: &Tensor) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_tsr(tensor)).map_err(|e| Error::io(path, e))
}

pub fn read_tsr(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tsr(&bytes).map_err(|reason| Error::Format {
        path: path.to_path_buf(),
        reason,
    })
}
