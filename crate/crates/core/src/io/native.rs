//! Native volume format: 8-byte magic `VXVOL001`, little-endian `u32` W, H, D,
//! three little-endian `f32` spacings, then `W·H·D` little-endian `f32`
//! voxels in x-fastest order.

use crate::error::{Error, Result};
use crate::volume::{voxel_count, Volume};
use std::io::Write;
use std::path::Path;

pub const NATIVE_MAGIC: &[u8; 8] = b"VXVOL001";
const HEADER_LEN: usize = 8 + 12 + 12;

pub fn write_native(volume: &Volume, mut out: impl Write) -> std::io::Result<()> {
    let mut buf = Vec::with_capacity(HEADER_LEN + 4 * volume.len());
    buf.extend_from_slice(NATIVE_MAGIC);
    for d in volume.dims() {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for s in volume.spacing() {
        buf.extend_from_slice(&s.to_le_bytes());
    }
    for v in volume.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&buf)
}

pub fn save_native(volume: &Volume, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    write_native(volume, &mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn read_native(bytes: &[u8]) -> Result<Volume> {
    if bytes.len() < HEADER_LEN || &bytes[..8] != NATIVE_MAGIC {
        return Err(Error::MalformedHeader("not a VXVOL001 volume".into()));
    }
    let word = |at: usize| -> [u8; 4] { bytes[at..at + 4].try_into().unwrap() };
    let dims = [0, 1, 2].map(|i| u32::from_le_bytes(word(8 + 4 * i)) as usize);
    let spacing = [0, 1, 2].map(|i| f32::from_le_bytes(word(20 + 4 * i)));
    let n = voxel_count(dims);
    let expected = 4 * n;
    let found = bytes.len() - HEADER_LEN;
    if found < expected {
        return Err(Error::TruncatedFile { expected, found });
    }
    let data = bytes[HEADER_LEN..HEADER_LEN + expected]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Volume::new(dims, spacing, data)
}

pub fn load_native(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_native(&bytes)
}
