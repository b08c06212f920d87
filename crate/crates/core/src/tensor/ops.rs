use super::{same_shape, Real, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Mul,
}

#[inline]
fn sigmoid<T: Real>(x: T) -> T {
    let s = 1.0 / (1.0 + (-x.to_f64()).exp());
    let s = T::from_f64(s);
    if s < T::OPEN_LO {
        T::OPEN_LO
    } else if s > T::OPEN_HI {
        T::OPEN_HI
    } else {
        s
    }
}

/// Elementwise nonlinearity. Sigmoid outputs are kept strictly inside (0, 1).
pub fn activation<T: Real>(t: &Tensor<T>, kind: Activation) -> Tensor<T> {
    let data = match kind {
        Activation::Relu => t
            .data()
            .iter()
            .map(|&v| if v > T::ZERO { v } else { T::ZERO })
            .collect(),
        Activation::Sigmoid => t.data().iter().map(|&v| sigmoid(v)).collect(),
    };
    Tensor::new(t.shape().to_vec(), data).expect("shape preserved")
}

/// Gradient of [`activation`], expressed through the forward *output*:
/// relu' = [y > 0], sigmoid' = y(1 − y).
pub fn activation_backward<T: Real>(
    grad_out: &Tensor<T>,
    output: &Tensor<T>,
    kind: Activation,
) -> Result<Tensor<T>> {
    same_shape(grad_out, output, "activation backward")?;
    let data = grad_out
        .data()
        .iter()
        .zip(output.data())
        .map(|(&g, &y)| match kind {
            Activation::Relu => {
                if y > T::ZERO {
                    g
                } else {
                    T::ZERO
                }
            }
            Activation::Sigmoid => {
                let y = y.to_f64();
                T::from_f64(g.to_f64() * y * (1.0 - y))
            }
        })
        .collect();
    Tensor::new(output.shape().to_vec(), data)
}

pub fn elementwise<T: Real>(a: &Tensor<T>, b: &Tensor<T>, op: BinaryOp) -> Result<Tensor<T>> {
    same_shape(a, b, "elementwise")?;
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            T::from_f64(match op {
                BinaryOp::Add => x.to_f64() + y.to_f64(),
                BinaryOp::Mul => x.to_f64() * y.to_f64(),
            })
        })
        .collect();
    Tensor::new(a.shape().to_vec(), data)
}

/// Gradients of [`elementwise`] with respect to `a` and `b`.
pub fn elementwise_backward<T: Real>(
    grad_out: &Tensor<T>,
    a: &Tensor<T>,
    b: &Tensor<T>,
    op: BinaryOp,
) -> Result<(Tensor<T>, Tensor<T>)> {
    same_shape(a, b, "elementwise backward")?;
    same_shape(grad_out, a, "elementwise backward")?;
    match op {
        BinaryOp::Add => Ok((grad_out.clone(), grad_out.clone())),
        BinaryOp::Mul => Ok((
            elementwise(grad_out, b, BinaryOp::Mul)?,
            elementwise(grad_out, a, BinaryOp::Mul)?,
        )),
    }
}

/// Concatenates two `N×C×D×H×W` tensors along the channel axis.
pub fn concat_channels<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, ca, d, h, w] = a.dims5()?;
    let [nb, cb, db, hb, wb] = b.dims5()?;
    if (n, d, h, w) != (nb, db, hb, wb) {
        return Err(Error::ShapeMismatch(format!(
            "concat needs equal non-channel dims: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let vol = d * h * w;
    let mut data = Vec::with_capacity(a.len() + b.len());
    for i in 0..n {
        data.extend_from_slice(&a.data()[i * ca * vol..(i + 1) * ca * vol]);
        data.extend_from_slice(&b.data()[i * cb * vol..(i + 1) * cb * vol]);
    }
    Tensor::new(vec![n, ca + cb, d, h, w], data)
}

/// Splits a channel-concatenated tensor (typically a gradient) back into the
/// first `first_channels` channels and the remainder.
pub fn split_channels<T: Real>(t: &Tensor<T>, first_channels: usize) -> Result<(Tensor<T>, Tensor<T>)> {
    let [n, c, d, h, w] = t.dims5()?;
    if first_channels == 0 || first_channels >= c {
        return Err(Error::ShapeMismatch(format!(
            "cannot split {c} channels at {first_channels}"
        )));
    }
    let vol = d * h * w;
    let cb = c - first_channels;
    let mut a = Vec::with_capacity(n * first_channels * vol);
    let mut b = Vec::with_capacity(n * cb * vol);
    for sample in t.data().chunks_exact(c * vol) {
        a.extend_from_slice(&sample[..first_channels * vol]);
        b.extend_from_slice(&sample[first_channels * vol..]);
    }
    Ok((
        Tensor::new(vec![n, first_channels, d, h, w], a)?,
        Tensor::new(vec![n, cb, d, h, w], b)?,
    ))
}
