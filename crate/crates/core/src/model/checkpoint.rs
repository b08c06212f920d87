//! Checkpoint format:
//!
//! ```text
//! magic "FCK1" | version u32 | levels u32 | base_channels u32
//! | convs_per_level u32 | input_channels u32 | output_channels u32 | seed u64
//! | param_count u32
//! | per parameter: name_len u32, name bytes, rank u32, extents u32 × rank,
//!   f32 × product(extents)
//! | crc32 u32 over every preceding byte
//! ```
//!
//! All integers and floats are little-endian.

use super::{build_network, FcnModel, NetworkConfig, Param};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};
use std::path::Path;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"FCK1";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn checkpoint_to_bytes<T: Real>(model: &FcnModel<T>) -> Vec<u8> {
    let mut buf = Vec::with_capacity(64 + 4 * model.parameter_count());
    let u32le = |buf: &mut Vec<u8>, v: usize| buf.extend_from_slice(&(v as u32).to_le_bytes());
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let c = model.config();
    for v in [c.levels, c.base_channels, c.convs_per_level, c.input_channels, c.output_channels] {
        u32le(&mut buf, v);
    }
    buf.extend_from_slice(&c.seed.to_le_bytes());
    u32le(&mut buf, model.params().len());
    for p in model.params() {
        u32le(&mut buf, p.name.len());
        buf.extend_from_slice(p.name.as_bytes());
        u32le(&mut buf, p.value.shape().len());
        for &e in p.value.shape() {
            u32le(&mut buf, e);
        }
        for v in p.value.data() {
            buf.extend_from_slice(&(v.to_f64() as f32).to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    buf
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::CorruptCheckpoint(format!("unexpected end of data at byte {}", self.at))
        })?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn usize(&mut self) -> Result<usize> {
        self.u32().map(|v| v as usize)
    }
}

pub fn checkpoint_from_bytes<T: Real>(bytes: &[u8]) -> Result<FcnModel<T>> {
    if bytes.len() < 12 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::CorruptCheckpoint("missing FCK1 magic".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    if crc32fast::hash(body) != stored {
        return Err(Error::CorruptCheckpoint("CRC32 mismatch".into()));
    }

    let mut cur = Cursor { bytes: body, at: 8 };
    let config = NetworkConfig {
        levels: cur.usize()?,
        base_channels: cur.usize()?,
        convs_per_level: cur.usize()?,
        input_channels: cur.usize()?,
        output_channels: cur.usize()?,
        seed: u64::from_le_bytes(cur.take(8)?.try_into().unwrap()),
    };
    let mut model = build_network::<T>(config)
        .map_err(|e| Error::CorruptCheckpoint(format!("stored config rejected: {e}")))?;
    let count = cur.usize()?;
    let mut params = Vec::with_capacity(count);
    for _ in 0..count {
        let len = cur.usize()?;
        let name = std::str::from_utf8(cur.take(len)?)
            .map_err(|_| Error::CorruptCheckpoint("parameter name is not UTF-8".into()))?
            .to_owned();
        let rank = cur.usize()?;
        let shape = (0..rank).map(|_| cur.usize()).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let data = cur
            .take(4 * n)?
            .chunks_exact(4)
            .map(|c| T::from_f64(f64::from(f32::from_le_bytes(c.try_into().unwrap()))))
            .collect();
        let value = Tensor::new(shape, data).map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;
        params.push(Param { name, value });
    }
    if cur.at != body.len() {
        return Err(Error::CorruptCheckpoint("trailing bytes after parameters".into()));
    }
    model
        .load_parameters(params)
        .map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;
    Ok(model)
}

pub fn save_checkpoint<T: Real>(model: &FcnModel<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, checkpoint_to_bytes(model)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Real>(path: impl AsRef<Path>) -> Result<FcnModel<T>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    checkpoint_from_bytes(&bytes)
}
