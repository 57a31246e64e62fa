//! Binary parameter checkpoints.
//!
//! Layout (little endian):
//!
//! ```text
//! magic   b"ASDCKPT\0"
//! version u8
//! dtype   u8            0 = f32, 1 = f64
//! hlen    u32
//! header  hlen bytes    JSON: {"meta": string, "tensors": [{"name", "shape"}]}
//! values  row-major, every tensor in header order
//! sha256  32 bytes over everything above
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::io::write_atomic;

const MAGIC: &[u8; 8] = b"ASDCKPT\0";
pub const CHECKPOINT_VERSION: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    #[default]
    F64,
}

impl Dtype {
    fn tag(self) -> u8 {
        match self {
            Dtype::F32 => 0,
            Dtype::F64 => 1,
        }
    }

    /// Rounds a value to what this dtype can store.
    pub fn quantize(self, v: f64) -> f64 {
        match self {
            Dtype::F32 => v as f32 as f64,
            Dtype::F64 => v,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    meta: String,
    tensors: Vec<Entry>,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: String,
    pub dtype: Dtype,
    pub tensors: Vec<(String, Tensor)>,
}

pub fn encode(meta: &str, tensors: &[(String, &Tensor)], dtype: Dtype) -> Vec<u8> {
    let header = Header {
        meta: meta.to_owned(),
        tensors: tensors
            .iter()
            .map(|(n, t)| Entry {
                name: n.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let hjson = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(CHECKPOINT_VERSION);
    out.push(dtype.tag());
    out.extend_from_slice(&(hjson.len() as u32).to_le_bytes());
    out.extend_from_slice(&hjson);
    for (_, t) in tensors {
        for &v in t.data() {
            match dtype {
                Dtype::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
                Dtype::F64 => out.extend_from_slice(&v.to_le_bytes()),
            }
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

pub fn decode(bytes: &[u8], origin: &Path) -> Result<Checkpoint> {
    let bad = |r: &str| Error::format(origin, r.to_owned());
    if bytes.len() < MAGIC.len() + 6 + 32 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint"));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(bad("checksum mismatch"));
    }
    if body[8] != CHECKPOINT_VERSION {
        return Err(bad(&format!("unsupported version {}", body[8])));
    }
    let dtype = match body[9] {
        0 => Dtype::F32,
        1 => Dtype::F64,
        t => return Err(bad(&format!("unknown dtype tag {t}"))),
    };
    let hlen = u32::from_le_bytes(body[10..14].try_into().unwrap()) as usize;
    let hend = 14 + hlen;
    if body.len() < hend {
        return Err(bad("truncated header"));
    }
    let header: Header =
        serde_json::from_slice(&body[14..hend]).map_err(|e| bad(&format!("header: {e}")))?;
    let width = match dtype {
        Dtype::F32 => 4,
        Dtype::F64 => 8,
    };
    let mut cursor = hend;
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for e in header.tensors {
        let n: usize = e.shape.iter().product();
        let end = cursor + n * width;
        if end > body.len() {
            return Err(bad("truncated values"));
        }
        let data = body[cursor..end]
            .chunks_exact(width)
            .map(|c| match dtype {
                Dtype::F32 => f32::from_le_bytes(c.try_into().unwrap()) as f64,
                Dtype::F64 => f64::from_le_bytes(c.try_into().unwrap()),
            })
            .collect();
        cursor = end;
        tensors.push((e.name, Tensor::new(e.shape, data)?));
    }
    if cursor != body.len() {
        return Err(bad("trailing bytes"));
    }
    Ok(Checkpoint {
        meta: header.meta,
        dtype,
        tensors,
    })
}

pub fn save(path: &Path, meta: &str, tensors: &[(String, &Tensor)], dtype: Dtype) -> Result<()> {
    write_atomic(path, &encode(meta, tensors, dtype))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path)?;
    decode(&bytes, path)
}
