//! Dense scalar volumes and binary label volumes.
//!
//! Voxels are stored x-fastest: the linear index of `(x, y, z)` is
//! `x + W * (y + H * z)`. This is the same memory order as a single-channel
//! `N×C×D×H×W` tensor, so conversions between the two are copies.

use crate::error::{Error, Result};

/// Volume extents in voxels, `(W, H, D)`.
pub type Dims = [usize; 3];

/// Spatial axis of a volume.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }

    pub fn name(self) -> char {
        match self {
            Axis::X => 'x',
            Axis::Y => 'y',
            Axis::Z => 'z',
        }
    }
}

impl std::str::FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "x" => Ok(Axis::X),
            "y" => Ok(Axis::Y),
            "z" => Ok(Axis::Z),
            other => Err(Error::Parse(format!("unknown axis {other:?}"))),
        }
    }
}

#[inline]
pub fn voxel_count(dims: Dims) -> usize {
    dims[0] * dims[1] * dims[2]
}

#[inline]
pub fn linear_index(dims: Dims, x: usize, y: usize, z: usize) -> usize {
    x + dims[0] * (y + dims[1] * z)
}

fn check_dims(dims: Dims) -> Result<()> {
    if dims.contains(&0) {
        return Err(Error::ShapeMismatch(format!(
            "volume dims must be positive, got {dims:?}"
        )));
    }
    Ok(())
}

/// A dense 3D scalar field with voxel spacing in millimeters.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    dims: Dims,
    spacing: [f32; 3],
    data: Vec<f32>,
}

impl Volume {
    /// Builds a volume, checking extents, spacing and finiteness.
    pub fn new(dims: Dims, spacing: [f32; 3], data: Vec<f32>) -> Result<Self> {
        check_dims(dims)?;
        if data.len() != voxel_count(dims) {
            return Err(Error::ShapeMismatch(format!(
                "data length {} does not match dims {dims:?}",
                data.len()
            )));
        }
        if spacing.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(Error::MalformedHeader(format!(
                "spacing must be strictly positive, got {spacing:?}"
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteData(i));
        }
        Ok(Volume {
            dims,
            spacing,
            data,
        })
    }

    pub fn zeros(dims: Dims) -> Result<Self> {
        Self::filled(dims, 0.0)
    }

    pub fn filled(dims: Dims, value: f32) -> Result<Self> {
        check_dims(dims)?;
        Self::new(dims, [1.0; 3], vec![value; voxel_count(dims)])
    }

    /// Builds a volume by evaluating `f(x, y, z)` at every voxel.
    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize) -> f32) -> Result<Self> {
        check_dims(dims)?;
        let mut data = Vec::with_capacity(voxel_count(dims));
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    data.push(f(x, y, z));
                }
            }
        }
        Self::new(dims, [1.0; 3], data)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> [f32; 3] {
        self.spacing
    }

    pub fn with_spacing(mut self, spacing: [f32; 3]) -> Result<Self> {
        if spacing.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(Error::MalformedHeader(format!(
                "spacing must be strictly positive, got {spacing:?}"
            )));
        }
        self.spacing = spacing;
        Ok(self)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.data[linear_index(self.dims, x, y, z)]
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Replaces the voxel values, re-checking the invariants.
    pub fn map(&self, f: impl Fn(f32) -> f32) -> Result<Self> {
        Self::new(self.dims, self.spacing, self.data.iter().map(|&v| f(v)).collect())
    }
}

/// A binary volume whose voxels are exactly 0 or 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVolume {
    dims: Dims,
    data: Vec<u8>,
}

impl LabelVolume {
    pub fn new(dims: Dims, data: Vec<u8>) -> Result<Self> {
        check_dims(dims)?;
        if data.len() != voxel_count(dims) {
            return Err(Error::ShapeMismatch(format!(
                "label length {} does not match dims {dims:?}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|&v| v > 1) {
            return Err(Error::Data(format!("label voxel {i} is not 0 or 1")));
        }
        Ok(LabelVolume { dims, data })
    }

    pub fn zeros(dims: Dims) -> Result<Self> {
        check_dims(dims)?;
        Ok(LabelVolume {
            dims,
            data: vec![0; voxel_count(dims)],
        })
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize) -> bool) -> Result<Self> {
        check_dims(dims)?;
        let mut data = Vec::with_capacity(voxel_count(dims));
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    data.push(u8::from(f(x, y, z)));
                }
            }
        }
        Ok(LabelVolume { dims, data })
    }

    /// Reads a volume whose values must all be exactly 0.0 or 1.0.
    pub fn from_volume(volume: &Volume) -> Result<Self> {
        let mut data = Vec::with_capacity(volume.len());
        for (i, &v) in volume.data().iter().enumerate() {
            data.push(match v {
                0.0 => 0,
                1.0 => 1,
                _ => return Err(Error::Data(format!("voxel {i} holds {v}, not a label"))),
            });
        }
        Ok(LabelVolume {
            dims: volume.dims(),
            data,
        })
    }

    pub fn to_volume(&self) -> Volume {
        Volume {
            dims: self.dims,
            spacing: [1.0; 3],
            data: self.data.iter().map(|&v| f32::from(v)).collect(),
        }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> u8 {
        self.data[linear_index(self.dims, x, y, z)]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    /// Tightest box `[xmin, xmax, ymin, ymax, zmin, zmax]` holding every
    /// foreground voxel, or `None` when the label is empty.
    pub fn bounding_box(&self) -> Option<[usize; 6]> {
        let [w, h, d] = self.dims;
        let mut bb = [usize::MAX, 0, usize::MAX, 0, usize::MAX, 0];
        let mut any = false;
        for z in 0..d {
            for y in 0..h {
                for x in 0..w {
                    if self.get(x, y, z) == 1 {
                        any = true;
                        bb[0] = bb[0].min(x);
                        bb[1] = bb[1].max(x);
                        bb[2] = bb[2].min(y);
                        bb[3] = bb[3].max(y);
                        bb[4] = bb[4].min(z);
                        bb[5] = bb[5].max(z);
                    }
                }
            }
        }
        any.then_some(bb)
    }
}
