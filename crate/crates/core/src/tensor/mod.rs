//! Dense N-d tensors and the 3D convolutional primitives used by the FCN.
//!
//! Storage is generic over [`Real`] (`f32` for training, `f64` for gradient
//! checks). GEMMs run in the storage precision; reductions accumulate in `f64`.

pub(crate) mod conv;
mod ops;
mod resample;

pub use conv::{conv3d, conv3d_backward, deconv3d, deconv3d_backward, ConvGrads};
pub use ops::{
    activation, activation_backward, concat_channels, elementwise, elementwise_backward,
    split_channels, Activation, BinaryOp,
};
pub use resample::{resample_grid, resample_tensor, resample_volume};

use crate::error::{Error, Result};
use crate::volume::Volume;
use std::fmt::Debug;

/// Floating-point storage type of a tensor.
pub trait Real:
    Copy
    + Default
    + PartialEq
    + PartialOrd
    + Debug
    + Send
    + Sync
    + 'static
    + std::ops::Add<Output = Self>
    + std::ops::Mul<Output = Self>
    + std::ops::AddAssign
{
    const ZERO: Self;
    const ONE: Self;
    /// Sigmoid outputs are clamped into `[OPEN_LO, OPEN_HI] = [u, 1 − u]` with
    /// `u` half the machine epsilon, so they stay strictly inside (0, 1) and
    /// saturated units never push gradients into subnormal range.
    const OPEN_LO: Self;
    const OPEN_HI: Self;

    fn to_f64(self) -> f64;
    fn from_f64(v: f64) -> Self;

    fn is_finite(self) -> bool {
        self.to_f64().is_finite()
    }

    /// `C ← A·B + beta·C` on strided row/column-major views.
    ///
    /// # Safety
    /// The pointers and strides must describe live, non-overlapping
    /// `m×k`, `k×n` and `m×n` matrices.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

impl Real for f32 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    const OPEN_LO: Self = f32::EPSILON / 2.0;
    const OPEN_HI: Self = 1.0 - f32::EPSILON / 2.0;

    #[inline(always)]
    fn to_f64(self) -> f64 {
        f64::from(self)
    }
    #[inline(always)]
    fn from_f64(v: f64) -> Self {
        v as f32
    }

    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Real for f64 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    const OPEN_LO: Self = f64::EPSILON / 2.0;
    const OPEN_HI: Self = 1.0 - f64::EPSILON / 2.0;

    #[inline(always)]
    fn to_f64(self) -> f64 {
        self
    }
    #[inline(always)]
    fn from_f64(v: f64) -> Self {
        v
    }

    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// Row-major dense tensor with an optional gradient buffer of the same shape.
/// Network tensors use the `N×C×D×H×W` layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T: Real = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
    grad: Option<Vec<T>>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::ShapeMismatch(format!(
                "tensor extents must be positive, got {shape:?}"
            )));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor {
            shape,
            data,
            grad: None,
        })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Result<Self> {
        Self::full(shape, T::ZERO)
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: T) -> Result<Self> {
        let shape = shape.into();
        let n = shape.iter().product();
        Self::new(shape, vec![value; n])
    }

    pub fn from_fn(shape: impl Into<Vec<usize>>, f: impl FnMut(usize) -> T) -> Result<Self> {
        let shape = shape.into();
        let n = shape.iter().product();
        Self::new(shape, (0..n).map(f).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    pub fn set_grad(&mut self, grad: Vec<T>) -> Result<()> {
        if grad.len() != self.data.len() {
            return Err(Error::ShapeMismatch(format!(
                "gradient of length {} for tensor {:?}",
                grad.len(),
                self.shape
            )));
        }
        self.grad = Some(grad);
        Ok(())
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    pub fn reshape(mut self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        if shape.iter().product::<usize>() != self.data.len() || shape.contains(&0) {
            return Err(Error::ShapeMismatch(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape;
        Ok(self)
    }

    /// Converts the storage type; the gradient buffer is dropped.
    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.to_f64())).collect(),
            grad: None,
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
            && self.grad.as_ref().is_none_or(|g| g.iter().all(|v| v.is_finite()))
    }

    /// Shape as `[N, C, D, H, W]`, or `ShapeMismatch` for any other rank.
    pub fn dims5(&self) -> Result<[usize; 5]> {
        <[usize; 5]>::try_from(self.shape.as_slice()).map_err(|_| {
            Error::ShapeMismatch(format!("expected a 5-d N×C×D×H×W tensor, got {:?}", self.shape))
        })
    }

    /// Wraps a volume as a `1×1×D×H×W` tensor.
    pub fn from_volume(volume: &Volume) -> Self {
        let [w, h, d] = volume.dims();
        Tensor {
            shape: vec![1, 1, d, h, w],
            data: volume.data().iter().map(|&v| T::from_f64(f64::from(v))).collect(),
            grad: None,
        }
    }

    /// Unwraps a `1×1×D×H×W` tensor into a unit-spacing volume.
    pub fn to_volume(&self) -> Result<Volume> {
        let [n, c, d, h, w] = self.dims5()?;
        if n != 1 || c != 1 {
            return Err(Error::ShapeMismatch(format!(
                "only 1×1×D×H×W tensors convert to volumes, got {:?}",
                self.shape
            )));
        }
        Volume::new(
            [w, h, d],
            [1.0; 3],
            self.data.iter().map(|v| v.to_f64() as f32).collect(),
        )
    }

    /// Stacks equally shaped `1×C×D×H×W` tensors along the batch axis.
    pub fn stack_batch(items: &[Tensor<T>]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::ShapeMismatch("cannot stack an empty batch".into()))?;
        let [_, c, d, h, w] = first.dims5()?;
        let mut data = Vec::with_capacity(first.len() * items.len());
        for t in items {
            if t.shape != first.shape || t.shape[0] != 1 {
                return Err(Error::ShapeMismatch(format!(
                    "batch items must share a 1×C×D×H×W shape, got {:?} and {:?}",
                    first.shape, t.shape
                )));
            }
            data.extend_from_slice(&t.data);
        }
        Self::new(vec![items.len(), c, d, h, w], data)
    }
}

pub(crate) fn same_shape<T: Real>(a: &Tensor<T>, b: &Tensor<T>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch(format!(
            "{what}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}
