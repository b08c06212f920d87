//! Minimal read-only NIfTI-1 support: single-file `.nii`, uncompressed,
//! datatypes uint8, int16 and float32. Orientation (qform/sform) is ignored.

use crate::error::{Error, Result};
use crate::volume::{voxel_count, Volume};
use std::path::Path;

const HEADER_SIZE: usize = 348;
const MAGIC: &[u8; 4] = b"n+1\0";

const DT_UINT8: i16 = 2;
const DT_INT16: i16 = 4;
const DT_FLOAT32: i16 = 16;

pub fn load_nifti(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_nifti(&bytes)
}

#[derive(Clone, Copy)]
struct Reader<'a> {
    bytes: &'a [u8],
    big_endian: bool,
}

impl Reader<'_> {
    fn bytes<const N: usize>(&self, at: usize) -> [u8; N] {
        let mut b = [0u8; N];
        b.copy_from_slice(&self.bytes[at..at + N]);
        if self.big_endian {
            b.reverse();
        }
        b
    }

    fn i16(&self, at: usize) -> i16 {
        i16::from_le_bytes(self.bytes(at))
    }

    fn i32(&self, at: usize) -> i32 {
        i32::from_le_bytes(self.bytes(at))
    }

    fn f32(&self, at: usize) -> f32 {
        f32::from_le_bytes(self.bytes(at))
    }
}

/// Decodes an in-memory `.nii` file.
pub fn read_nifti(bytes: &[u8]) -> Result<Volume> {
    if bytes.len() < HEADER_SIZE {
        return Err(Error::MalformedHeader(format!(
            "file holds {} bytes, shorter than a NIfTI-1 header",
            bytes.len()
        )));
    }
    let le = Reader {
        bytes,
        big_endian: false,
    };
    let rd = if le.i32(0) == HEADER_SIZE as i32 {
        le
    } else if i32::from_be_bytes(bytes[0..4].try_into().unwrap()) == HEADER_SIZE as i32 {
        Reader {
            bytes,
            big_endian: true,
        }
    } else {
        return Err(Error::MalformedHeader(format!(
            "sizeof_hdr is {}, expected 348",
            le.i32(0)
        )));
    };
    if &bytes[344..348] != MAGIC {
        return Err(Error::MalformedHeader(
            "magic is not \"n+1\" (only single-file NIfTI-1 is supported)".into(),
        ));
    }

    let ndim = rd.i16(40);
    if !(1..=7).contains(&ndim) {
        return Err(Error::MalformedHeader(format!("dim[0] = {ndim} out of 1..=7")));
    }
    let mut dims = [1usize; 3];
    for i in 1..=ndim as usize {
        let extent = rd.i16(40 + 2 * i);
        if extent < 1 {
            return Err(Error::MalformedHeader(format!("dim[{i}] = {extent}")));
        }
        if i <= 3 {
            dims[i - 1] = extent as usize;
        } else if extent > 1 {
            return Err(Error::MalformedHeader(format!(
                "dim[{i}] = {extent}: multi-frame volumes are not supported"
            )));
        }
    }

    let datatype = rd.i16(70);
    let width = match datatype {
        DT_UINT8 => 1,
        DT_INT16 => 2,
        DT_FLOAT32 => 4,
        other => return Err(Error::UnsupportedDatatype(other)),
    };

    let mut spacing = [1f32; 3];
    for (i, s) in spacing.iter_mut().enumerate() {
        let p = rd.f32(76 + 4 * (i + 1)).abs();
        if !(p.is_finite() && p > 0.0) {
            return Err(Error::MalformedHeader(format!("pixdim[{}] = {p}", i + 1)));
        }
        *s = p;
    }

    let vox_offset = rd.f32(108);
    if !(vox_offset.is_finite() && vox_offset >= 0.0) {
        return Err(Error::MalformedHeader(format!("vox_offset = {vox_offset}")));
    }
    // A single-file header is followed by a 4-byte extension flag.
    let offset = (vox_offset as usize).max(HEADER_SIZE + 4);
    let slope = rd.f32(112);
    let inter = rd.f32(116);
    let scaled = slope != 0.0 && slope.is_finite();
    if scaled && !inter.is_finite() {
        return Err(Error::MalformedHeader(format!("scl_inter = {inter}")));
    }

    let n = voxel_count(dims);
    let expected = n * width;
    let found = bytes.len().saturating_sub(offset);
    if found < expected {
        return Err(Error::TruncatedFile { expected, found });
    }
    let payload = &bytes[offset..offset + expected];
    let body = Reader {
        bytes: payload,
        big_endian: rd.big_endian,
    };
    let mut data = Vec::with_capacity(n);
    for i in 0..n {
        let raw = match datatype {
            DT_UINT8 => f64::from(payload[i]),
            DT_INT16 => f64::from(body.i16(2 * i)),
            _ => f64::from(body.f32(4 * i)),
        };
        let v = if scaled {
            raw * f64::from(slope) + f64::from(inter)
        } else {
            raw
        };
        data.push(v as f32);
    }
    Volume::new(dims, spacing, data)
}
