//! Single-file binary checkpoints.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "CR8W"
//! 4       4     format version, u32
//! 8       8     body length B in bytes, u64
//! 16      B     body
//! 16+B    4     CRC32 (IEEE) of bytes [0, 16+B)
//!
//! body:
//!   u32 config length, UTF-8 JSON ModelConfig
//!   u32 tensor count
//!   per tensor:
//!     u32 name length, UTF-8 name
//!     u32 rank, rank × u64 dims (row-major)
//!     u8  dtype tag (0 = f32, 1 = f64)
//!     payload, little-endian
//! ```
//!
//! All integers are little-endian. Tensors are written as f64; f32 records
//! are accepted on load and widened.

use std::fs;
use std::path::Path;

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::model::CrateModel;

pub const MAGIC: &[u8; 4] = b"CR8W";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum DType {
    F32 = 0,
    F64 = 1,
}

impl DType {
    fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(DType::F32),
            1 => Some(DType::F64),
            _ => None,
        }
    }

    fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

pub fn encode_checkpoint(model: &CrateModel) -> Result<Vec<u8>> {
    let mut body = Vec::new();
    let config = serde_json::to_vec(&model.config)?;
    put_u32(&mut body, config.len());
    body.extend_from_slice(&config);
    let params = model.params();
    put_u32(&mut body, params.len());
    for p in &params {
        put_u32(&mut body, p.name.len());
        body.extend_from_slice(p.name.as_bytes());
        put_u32(&mut body, p.values.ndim());
        for &dim in p.values.shape() {
            body.extend_from_slice(&(dim as u64).to_le_bytes());
        }
        body.push(DType::F64 as u8);
        // Logical row-major order, independent of memory layout.
        for v in p.values.iter() {
            body.extend_from_slice(&v.to_le_bytes());
        }
    }

    let mut out = Vec::with_capacity(HEADER_LEN + body.len() + 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(body.len() as u64).to_le_bytes());
    out.extend_from_slice(&body);
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<CrateModel> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Checkpoint(format!("truncated: {} bytes, header needs {HEADER_LEN}", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Checkpoint(format!("bad magic {:?}, expected \"CR8W\"", String::from_utf8_lossy(&bytes[..4]))));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::Version { found: version, supported: FORMAT_VERSION });
    }
    let body_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let expected = (HEADER_LEN as u64).checked_add(body_len).and_then(|n| n.checked_add(4));
    match expected {
        Some(n) if n == bytes.len() as u64 => {}
        Some(n) if n > bytes.len() as u64 => {
            return Err(Error::Checkpoint(format!("truncated: {} bytes, header declares {n}", bytes.len())));
        }
        _ => return Err(Error::Checkpoint(format!("{} bytes, header declares {expected:?}", bytes.len()))),
    }
    let split = bytes.len() - 4;
    let stored = u32::from_le_bytes(bytes[split..].try_into().unwrap());
    let computed = crc32fast::hash(&bytes[..split]);
    if stored != computed {
        return Err(Error::Crc { stored, computed });
    }

    let mut r = Reader { buf: &bytes[..split], pos: HEADER_LEN };
    let config_len = r.u32()? as usize;
    let config: ModelConfig = serde_json::from_slice(r.take(config_len)?)?;
    config.validate()?;
    let mut model = CrateModel::zeros(&config);
    let count = r.u32()? as usize;
    let mut params = model.params_mut();
    if count != params.len() {
        return Err(Error::Checkpoint(format!("{count} tensors stored, configuration implies {}", params.len())));
    }
    for p in params.iter_mut() {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?).map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
        if name != p.name {
            return Err(Error::Checkpoint(format!("tensor {name:?} found where {:?} was expected", p.name)));
        }
        let rank = r.u32()? as usize;
        let mut dims = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            dims.push(r.u64()? as usize);
        }
        if dims != p.values.shape() {
            return Err(Error::Checkpoint(format!("tensor {name:?} has shape {dims:?}, expected {:?}", p.values.shape())));
        }
        let tag_pos = r.pos;
        let tag = r.take(1)?[0];
        let dtype = DType::from_tag(tag)
            .ok_or_else(|| Error::Checkpoint(format!("unknown dtype tag {tag} for tensor {name:?} at byte {tag_pos}")))?;
        let payload = r.take(p.values.len() * dtype.size())?;
        for (dst, chunk) in p.values.iter_mut().zip(payload.chunks_exact(dtype.size())) {
            *dst = match dtype {
                DType::F32 => f32::from_le_bytes(chunk.try_into().unwrap()) as f64,
                DType::F64 => f64::from_le_bytes(chunk.try_into().unwrap()),
            };
        }
    }
    drop(params);
    if r.pos != r.buf.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes after the last tensor", r.buf.len() - r.pos)));
    }
    Ok(model)
}

pub fn save_checkpoint(model: &CrateModel, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_checkpoint(model)?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<CrateModel> {
    decode_checkpoint(&fs::read(path)?)
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&u32::try_from(v).expect("length fits in u32").to_le_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Checkpoint(format!("record at byte {} runs past the end of the body", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
