use crate::error::{Error, Result};
use crate::volume::{Axis, Volume};
use std::path::Path;

/// Extracts one plane and encodes it as a binary (P5) PGM with maxval 255.
///
/// Plane orientation: a Z slice is W columns by H rows, a Y slice is W by D,
/// an X slice is H by D. Intensities are min-max normalized over the slice
/// with round-half-up; a constant slice maps to 128.
pub fn slice_to_pgm(volume: &Volume, axis: Axis, index: usize) -> Result<Vec<u8>> {
    let [w, h, d] = volume.dims();
    let extent = volume.dims()[axis.index()];
    if index >= extent {
        return Err(Error::IndexOutOfRange { index, extent });
    }
    let (cols, rows) = match axis {
        Axis::Z => (w, h),
        Axis::Y => (w, d),
        Axis::X => (h, d),
    };
    let mut plane = Vec::with_capacity(cols * rows);
    for r in 0..rows {
        for c in 0..cols {
            plane.push(match axis {
                Axis::Z => volume.get(c, r, index),
                Axis::Y => volume.get(c, index, r),
                Axis::X => volume.get(index, c, r),
            });
        }
    }
    let (lo, hi) = plane
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = f64::from(hi) - f64::from(lo);

    let mut out = format!("P5\n{cols} {rows}\n255\n").into_bytes();
    out.extend(plane.iter().map(|&v| {
        if span <= 0.0 {
            128u8
        } else {
            let t = (f64::from(v) - f64::from(lo)) / span;
            (t * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
        }
    }));
    Ok(out)
}

pub fn export_slice(volume: &Volume, axis: Axis, index: usize, path: impl AsRef<Path>) -> Result<()> {
    let bytes = slice_to_pgm(volume, axis, index)?;
    let path = path.as_ref();
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
