//! Align-corners trilinear resampling.
//!
//! Output index `i` along an axis of source extent `S` and target extent `T`
//! samples source coordinate `i·(S−1)/(T−1)` when `T > 1`, or the center
//! `(S−1)/2` when `T == 1`.

use super::{Real, Tensor};
use crate::error::{Error, Result};
use crate::volume::{voxel_count, Dims, Volume};

/// Per-output-index `(lower, upper, weight of upper)` along one axis.
fn axis_taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    (0..dst)
        .map(|i| {
            let c = if dst > 1 {
                i as f64 * (src - 1) as f64 / (dst - 1) as f64
            } else {
                (src - 1) as f64 / 2.0
            };
            let lo = (c.floor() as usize).min(src - 1);
            let hi = (lo + 1).min(src - 1);
            (lo, hi, c - lo as f64)
        })
        .collect()
}

/// Resamples one x-fastest grid of extents `src` (W, H, D) to `dst`.
pub fn resample_grid<T: Real>(data: &[T], src: Dims, dst: Dims) -> Result<Vec<T>> {
    if src.iter().chain(&dst).any(|&e| e == 0) {
        return Err(Error::ShapeMismatch(format!(
            "resample extents must be positive: {src:?} -> {dst:?}"
        )));
    }
    if data.len() != voxel_count(src) {
        return Err(Error::ShapeMismatch(format!(
            "grid of {} values does not match {src:?}",
            data.len()
        )));
    }
    if src == dst {
        return Ok(data.to_vec());
    }
    let tx = axis_taps(src[0], dst[0]);
    let ty = axis_taps(src[1], dst[1]);
    let tz = axis_taps(src[2], dst[2]);
    let at = |x: usize, y: usize, z: usize| data[x + src[0] * (y + src[1] * z)].to_f64();
    let mut out = Vec::with_capacity(voxel_count(dst));
    for &(z0, z1, fz) in &tz {
        for &(y0, y1, fy) in &ty {
            for &(x0, x1, fx) in &tx {
                let c00 = at(x0, y0, z0) * (1.0 - fx) + at(x1, y0, z0) * fx;
                let c10 = at(x0, y1, z0) * (1.0 - fx) + at(x1, y1, z0) * fx;
                let c01 = at(x0, y0, z1) * (1.0 - fx) + at(x1, y0, z1) * fx;
                let c11 = at(x0, y1, z1) * (1.0 - fx) + at(x1, y1, z1) * fx;
                let c0 = c00 * (1.0 - fy) + c10 * fy;
                let c1 = c01 * (1.0 - fy) + c11 * fy;
                out.push(T::from_f64(c0 * (1.0 - fz) + c1 * fz));
            }
        }
    }
    Ok(out)
}

/// Resamples a volume; spacing is rescaled by `source / target` per axis.
pub fn resample_volume(volume: &Volume, target: Dims) -> Result<Volume> {
    let src = volume.dims();
    let data = resample_grid(volume.data(), src, target)?;
    let sp = volume.spacing();
    let spacing = [0, 1, 2].map(|i| sp[i] * src[i] as f32 / target[i] as f32);
    Volume::new(target, spacing, data)
}

/// Resamples every `(n, c)` channel of an `N×C×D×H×W` tensor to spatial
/// extents `target` given as (W, H, D).
pub fn resample_tensor<T: Real>(t: &Tensor<T>, target: Dims) -> Result<Tensor<T>> {
    let [n, c, d, h, w] = t.dims5()?;
    let src = [w, h, d];
    let mut data = Vec::with_capacity(n * c * voxel_count(target));
    for grid in t.data().chunks_exact(voxel_count(src)) {
        data.extend(resample_grid(grid, src, target)?);
    }
    Tensor::new(vec![n, c, target[2], target[1], target[0]], data)
}
