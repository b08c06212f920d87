//! Axis-projection localization and fixed-size window cropping.
//!
//! A proposal map is summed over two axes at a time to get one occupancy
//! histogram per axis. The bounds on each axis are the smallest and largest
//! indices whose plane mass exceeds `ε`, and the center is the floored
//! midpoint of those bounds.

use crate::error::{Error, Result};
use crate::volume::{linear_index, voxel_count, Axis, Dims, LabelVolume, Volume};
use std::fmt;
use std::str::FromStr;

/// Marginal sums of a volume over the two orthogonal axes.
#[derive(Debug, Clone, PartialEq)]
pub struct AxisHistograms {
    pub hx: Vec<f64>,
    pub hy: Vec<f64>,
    pub hz: Vec<f64>,
}

impl AxisHistograms {
    pub fn axis(&self, axis: Axis) -> &[f64] {
        match axis {
            Axis::X => &self.hx,
            Axis::Y => &self.hy,
            Axis::Z => &self.hz,
        }
    }

    pub fn total(&self) -> f64 {
        self.hx.iter().sum()
    }
}

pub fn axis_histograms(prob: &Volume) -> AxisHistograms {
    let [w, h, d] = prob.dims();
    let mut hist = AxisHistograms {
        hx: vec![0.0; w],
        hy: vec![0.0; h],
        hz: vec![0.0; d],
    };
    let mut rows = prob.data().chunks_exact(w);
    for z in 0..d {
        for y in 0..h {
            let row = rows.next().expect("volume holds W·H·D values");
            let mut row_sum = 0.0;
            for (hx, &v) in hist.hx.iter_mut().zip(row) {
                let v = f64::from(v);
                *hx += v;
                row_sum += v;
            }
            hist.hy[y] += row_sum;
            hist.hz[z] += row_sum;
        }
    }
    hist
}

/// Bounds `[xmin, xmax, ymin, ymax, zmin, zmax]` and floored midpoint center.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Localization {
    pub bounds: [usize; 6],
    pub center: [usize; 3],
}

impl Localization {
    pub fn from_bounds(bounds: [usize; 6]) -> Self {
        let mid = |a: usize| (bounds[2 * a] + bounds[2 * a + 1]) / 2;
        Localization {
            bounds,
            center: [mid(0), mid(1), mid(2)],
        }
    }

    /// `xmin xmax ymin ymax zmin zmax cx cy cz`
    pub fn to_line(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for Localization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [a, b, c, d, e, g] = self.bounds;
        let [cx, cy, cz] = self.center;
        write!(f, "{a} {b} {c} {d} {e} {g} {cx} {cy} {cz}")
    }
}

impl FromStr for Localization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let v = s
            .split_whitespace()
            .map(|t| t.parse::<usize>().map_err(|e| Error::Parse(format!("localization field {t:?}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        let [b0, b1, b2, b3, b4, b5, cx, cy, cz] = v[..] else {
            return Err(Error::Parse(format!("localization needs 9 fields, got {}", v.len())));
        };
        Ok(Localization {
            bounds: [b0, b1, b2, b3, b4, b5],
            center: [cx, cy, cz],
        })
    }
}

/// Extremal indices with `H(i) > epsilon` on every axis.
pub fn localize(hist: &AxisHistograms, epsilon: f64) -> Result<Localization> {
    let mut bounds = [0; 6];
    for axis in [Axis::X, Axis::Y, Axis::Z] {
        let h = hist.axis(axis);
        let empty = Error::EmptyProposal { axis: axis.name() };
        let lo = h.iter().position(|&v| v > epsilon).ok_or(empty)?;
        let hi = h.iter().rposition(|&v| v > epsilon).expect("lo exists");
        bounds[2 * axis.index()] = lo;
        bounds[2 * axis.index() + 1] = hi;
    }
    Ok(Localization::from_bounds(bounds))
}

/// Where a crop window sits in its source volume.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CropWindow {
    /// First source voxel covered, after clamping.
    pub start: [usize; 3],
    /// Zero voxels inserted before the source data on axes where the volume
    /// is smaller than the crop.
    pub pad_before: [usize; 3],
    pub crop_dims: Dims,
    pub source_dims: Dims,
}

impl CropWindow {
    pub fn new(source_dims: Dims, center: [usize; 3], crop_dims: Dims) -> Self {
        let mut start = [0; 3];
        let mut pad_before = [0; 3];
        for a in 0..3 {
            let (n, c) = (source_dims[a], crop_dims[a]);
            if c > n {
                pad_before[a] = (c - n) / 2;
            } else {
                start[a] = center[a].saturating_sub(c / 2).min(n - c);
            }
        }
        CropWindow {
            start,
            pad_before,
            crop_dims,
            source_dims,
        }
    }

    /// Source extent covered on each axis.
    pub fn covered(&self) -> [usize; 3] {
        std::array::from_fn(|a| self.crop_dims[a].min(self.source_dims[a]))
    }

    /// Visits every covered voxel as `(crop index, source index)`.
    fn for_each(&self, mut f: impl FnMut(usize, usize)) {
        let cov = self.covered();
        for z in 0..cov[2] {
            for y in 0..cov[1] {
                let dst = linear_index(
                    self.crop_dims,
                    self.pad_before[0],
                    y + self.pad_before[1],
                    z + self.pad_before[2],
                );
                let src = linear_index(self.source_dims, self.start[0], y + self.start[1], z + self.start[2]);
                for x in 0..cov[0] {
                    f(dst + x, src + x);
                }
            }
        }
    }

    fn extract<T: Copy + Default>(&self, src: &[T]) -> Vec<T> {
        let mut out = vec![T::default(); voxel_count(self.crop_dims)];
        self.for_each(|d, s| out[d] = src[s]);
        out
    }

    fn paste<T: Copy + Default>(&self, crop: &[T]) -> Vec<T> {
        let mut out = vec![T::default(); voxel_count(self.source_dims)];
        self.for_each(|d, s| out[s] = crop[d]);
        out
    }
}

/// Extracts a `crop_dims` window centered on `center`. The window is clamped
/// to fit inside the volume; axes shorter than the crop are zero-padded
/// symmetrically (extra voxel after).
pub fn crop(volume: &Volume, center: [usize; 3], crop_dims: Dims) -> Result<(Volume, CropWindow)> {
    let window = CropWindow::new(volume.dims(), center, crop_dims);
    let out = Volume::new(crop_dims, volume.spacing(), window.extract(volume.data()))?;
    Ok((out, window))
}

pub fn crop_labels(labels: &LabelVolume, window: &CropWindow) -> Result<LabelVolume> {
    check_source(labels.dims(), window)?;
    LabelVolume::new(window.crop_dims, window.extract(labels.data()))
}

/// Writes a cropped volume back into a zero volume of the source dims.
pub fn paste_back(cropped: &Volume, window: &CropWindow) -> Result<Volume> {
    check_crop(cropped.dims(), window)?;
    Volume::new(window.source_dims, cropped.spacing(), window.paste(cropped.data()))
}

pub fn paste_back_labels(cropped: &LabelVolume, window: &CropWindow) -> Result<LabelVolume> {
    check_crop(cropped.dims(), window)?;
    LabelVolume::new(window.source_dims, window.paste(cropped.data()))
}

fn check_source(dims: Dims, window: &CropWindow) -> Result<()> {
    if dims != window.source_dims {
        return Err(Error::ShapeMismatch(format!(
            "window was cut from {:?}, got {dims:?}",
            window.source_dims
        )));
    }
    Ok(())
}

fn check_crop(dims: Dims, window: &CropWindow) -> Result<()> {
    if dims != window.crop_dims {
        return Err(Error::ShapeMismatch(format!(
            "window has extents {:?}, got {dims:?}",
            window.crop_dims
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_voxel_histograms() {
        let v = Volume::from_fn([5, 5, 5], |x, y, z| f32::from((x, y, z) == (2, 3, 1))).unwrap();
        let h = axis_histograms(&v);
        assert_eq!(h.hx, [0.0, 0.0, 1.0, 0.0, 0.0]);
        assert_eq!(h.hy, [0.0, 0.0, 0.0, 1.0, 0.0]);
        assert_eq!(h.hz, [0.0, 1.0, 0.0, 0.0, 0.0]);
        let zero = axis_histograms(&Volume::zeros([3, 4, 2]).unwrap());
        assert_eq!(zero.total(), 0.0);
    }

    #[test]
    fn threshold_is_strict() {
        let h = AxisHistograms {
            hx: vec![0.0, 6.0, 7.0, 6.0, 0.0],
            hy: vec![6.0],
            hz: vec![5.5, 5.5],
        };
        let loc = localize(&h, 5.0).unwrap();
        assert_eq!(loc.bounds, [1, 3, 0, 0, 0, 1]);
        assert_eq!(loc.center, [2, 0, 0]);

        let flat = AxisHistograms {
            hx: vec![5.0; 4],
            hy: vec![6.0],
            hz: vec![6.0],
        };
        assert!(matches!(localize(&flat, 5.0), Err(Error::EmptyProposal { axis: 'x' })));
    }

    #[test]
    fn line_round_trip() {
        let loc = Localization::from_bounds([1, 4, 2, 9, 0, 3]);
        assert_eq!(loc.to_line(), "1 4 2 9 0 3 2 5 1");
        assert_eq!(loc.to_line().parse::<Localization>().unwrap(), loc);
        assert!("1 2 3".parse::<Localization>().is_err());
    }

    #[test]
    fn identity_and_clamped_crops() {
        let v = Volume::from_fn([6, 4, 2], |x, y, z| (x + 10 * y + 100 * z) as f32).unwrap();
        let (c, w) = crop(&v, [3, 2, 1], [6, 4, 2]).unwrap();
        assert_eq!(c, v);
        assert_eq!(w.start, [0, 0, 0]);

        let big = Volume::zeros([100, 100, 100]).unwrap();
        let (_, w) = crop(&big, [2, 50, 50], [64, 64, 64]).unwrap();
        assert_eq!(w.start, [0, 18, 18]);
        let (_, w) = crop(&big, [99, 50, 50], [64, 64, 64]).unwrap();
        assert_eq!(w.start[0], 36);
    }

    #[test]
    fn short_axis_is_padded_symmetrically() {
        let v = Volume::from_fn([40, 10, 10], |x, y, z| (1 + x + 40 * y + 400 * z) as f32).unwrap();
        let (c, w) = crop(&v, [20, 5, 5], [64, 8, 8]).unwrap();
        assert_eq!(w.pad_before, [12, 0, 0]);
        assert_eq!(w.start, [0, 1, 1]);
        for z in 0..8 {
            for y in 0..8 {
                for x in 0..64 {
                    let want = if (12..52).contains(&x) { v.get(x - 12, y + 1, z + 1) } else { 0.0 };
                    assert_eq!(c.get(x, y, z), want);
                }
            }
        }
        let back = paste_back(&c, &w).unwrap();
        for (i, (&a, &b)) in back.data().iter().zip(v.data()).enumerate() {
            let [_, y, z] = [i % 40, (i / 40) % 10, i / 400];
            let inside = (1..9).contains(&y) && (1..9).contains(&z);
            assert_eq!(a, if inside { b } else { 0.0 });
        }
    }

    #[test]
    fn label_crop_and_paste() {
        let l = LabelVolume::from_fn([8, 8, 8], |x, y, z| x + y + z == 10).unwrap();
        let (_, w) = crop(&l.to_volume(), [4, 4, 4], [4, 4, 4]).unwrap();
        let c = crop_labels(&l, &w).unwrap();
        let back = paste_back_labels(&c, &w).unwrap();
        let inside = LabelVolume::from_fn([8, 8, 8], |x, y, z| {
            x + y + z == 10 && (2..6).contains(&x) && (2..6).contains(&y) && (2..6).contains(&z)
        })
        .unwrap();
        assert_eq!(back, inside);
        assert!(crop_labels(&LabelVolume::zeros([4, 4, 4]).unwrap(), &w).is_err());
    }
}
