//! 3D cross-correlation and its stride-2 transpose, lowered to GEMM.
//!
//! `conv3d` unfolds the input one slab of output depth planes at a time
//! (im2col) and multiplies by the `Cout × Cin·k³` weight matrix. The GEMM runs
//! in the storage precision; bias reductions accumulate in `f64`.

use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Upper bound on the number of elements in one im2col slab.
const SLAB_ELEMS: usize = 1 << 18;

/// Gradients of a convolution-like layer with respect to its three inputs.
#[derive(Debug, Clone)]
pub struct ConvGrads<T: Real> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

#[derive(Debug, Clone, Copy)]
struct Geometry {
    n: usize,
    cin: usize,
    d: usize,
    h: usize,
    w: usize,
    cout: usize,
    k: usize,
    stride: usize,
    pad: usize,
    od: usize,
    oh: usize,
    ow: usize,
}

impl Geometry {
    fn in_volume(&self) -> usize {
        self.d * self.h * self.w
    }

    fn out_plane(&self) -> usize {
        self.oh * self.ow
    }

    fn out_volume(&self) -> usize {
        self.od * self.out_plane()
    }

    fn rows(&self) -> usize {
        self.cin * self.k * self.k * self.k
    }

    /// Output depth ranges whose unfolded slab fits in `SLAB_ELEMS`.
    fn slabs(&self) -> impl Iterator<Item = (usize, usize)> {
        let per = (SLAB_ELEMS / (self.rows() * self.out_plane()).max(1)).clamp(1, self.od);
        let od = self.od;
        (0..od).step_by(per).map(move |z0| (z0, (z0 + per).min(od)))
    }
}

fn out_extent(size: usize, k: usize, stride: usize, pad: usize, axis: &str) -> Result<usize> {
    let span = (size + 2 * pad).checked_sub(k).ok_or_else(|| {
        Error::ShapeMismatch(format!("kernel {k} larger than padded {axis} extent {size}+2·{pad}"))
    })?;
    if span % stride != 0 {
        return Err(Error::ShapeMismatch(format!(
            "{axis} extent {size} with kernel {k}, padding {pad} is not divisible by stride {stride}"
        )));
    }
    Ok(span / stride + 1)
}

fn conv_geometry<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    pad: usize,
) -> Result<Geometry> {
    let [n, cin, d, h, w] = input.dims5()?;
    let ws = weight.shape();
    if ws.len() != 5 || ws[2] != ws[3] || ws[3] != ws[4] {
        return Err(Error::ShapeMismatch(format!(
            "conv3d weight must be Cout×Cin×k×k×k, got {ws:?}"
        )));
    }
    if ws[1] != cin {
        return Err(Error::ShapeMismatch(format!(
            "conv3d weight expects {} input channels, input has {cin}",
            ws[1]
        )));
    }
    if stride == 0 {
        return Err(Error::ShapeMismatch("stride must be positive".into()));
    }
    let (cout, k) = (ws[0], ws[2]);
    if let Some(b) = bias {
        if b.shape() != [cout] {
            return Err(Error::ShapeMismatch(format!(
                "conv3d bias must have shape [{cout}], got {:?}",
                b.shape()
            )));
        }
    }
    Ok(Geometry {
        n,
        cin,
        d,
        h,
        w,
        cout,
        k,
        stride,
        pad,
        od: out_extent(d, k, stride, pad, "depth")?,
        oh: out_extent(h, k, stride, pad, "height")?,
        ow: out_extent(w, k, stride, pad, "width")?,
    })
}

/// Input index hit by output `o` and kernel tap `t`, if inside the volume.
#[inline(always)]
fn tap(o: usize, t: usize, stride: usize, pad: usize, size: usize) -> Option<usize> {
    (o * stride + t).checked_sub(pad).filter(|&i| i < size)
}

/// Range of output columns `ox` whose stride-1 tap `kx` lands inside `[0, w)`.
#[inline(always)]
fn unit_stride_span(kx: usize, pad: usize, w: usize, ow: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(kx).min(ow);
    let hi = (w + pad).saturating_sub(kx).min(ow).max(lo);
    (lo, hi)
}

/// Unfolds output depth planes `[z0, z1)` of one sample into `col`
/// (`rows × m`, row = (ci, kz, ky, kx), column = output voxel).
fn im2col<T: Real>(x: &[T], g: &Geometry, z0: usize, z1: usize, col: &mut [T]) {
    let m = (z1 - z0) * g.out_plane();
    let plane = g.h * g.w;
    let mut r = 0;
    for ci in 0..g.cin {
        let xc = &x[ci * g.in_volume()..(ci + 1) * g.in_volume()];
        for kz in 0..g.k {
            for ky in 0..g.k {
                for kx in 0..g.k {
                    let row = &mut col[r * m..(r + 1) * m];
                    r += 1;
                    let (lo, hi) = unit_stride_span(kx, g.pad, g.w, g.ow);
                    for (zi, oz) in (z0..z1).enumerate() {
                        let dst_plane = &mut row[zi * g.out_plane()..(zi + 1) * g.out_plane()];
                        let Some(iz) = tap(oz, kz, g.stride, g.pad, g.d) else {
                            dst_plane.fill(T::ZERO);
                            continue;
                        };
                        for oy in 0..g.oh {
                            let dst = &mut dst_plane[oy * g.ow..(oy + 1) * g.ow];
                            let Some(iy) = tap(oy, ky, g.stride, g.pad, g.h) else {
                                dst.fill(T::ZERO);
                                continue;
                            };
                            let src = &xc[iz * plane + iy * g.w..][..g.w];
                            if g.stride == 1 {
                                dst[..lo].fill(T::ZERO);
                                dst[lo..hi].copy_from_slice(&src[lo + kx - g.pad..hi + kx - g.pad]);
                                dst[hi..].fill(T::ZERO);
                            } else {
                                for (ox, v) in dst.iter_mut().enumerate() {
                                    *v = tap(ox, kx, g.stride, g.pad, g.w).map_or(T::ZERO, |ix| src[ix]);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-adds `col` back into `x`.
fn col2im<T: Real>(col: &[T], g: &Geometry, z0: usize, z1: usize, x: &mut [T]) {
    let m = (z1 - z0) * g.out_plane();
    let plane = g.h * g.w;
    let mut r = 0;
    for ci in 0..g.cin {
        let xc = &mut x[ci * g.in_volume()..(ci + 1) * g.in_volume()];
        for kz in 0..g.k {
            for ky in 0..g.k {
                for kx in 0..g.k {
                    let row = &col[r * m..(r + 1) * m];
                    r += 1;
                    let (lo, hi) = unit_stride_span(kx, g.pad, g.w, g.ow);
                    for (zi, oz) in (z0..z1).enumerate() {
                        let Some(iz) = tap(oz, kz, g.stride, g.pad, g.d) else {
                            continue;
                        };
                        for oy in 0..g.oh {
                            let Some(iy) = tap(oy, ky, g.stride, g.pad, g.h) else {
                                continue;
                            };
                            let src = &row[zi * g.out_plane() + oy * g.ow..][..g.ow];
                            let dst = &mut xc[iz * plane + iy * g.w..][..g.w];
                            if g.stride == 1 {
                                let off = kx as isize - g.pad as isize;
                                for ox in lo..hi {
                                    dst[(ox as isize + off) as usize] += src[ox];
                                }
                            } else {
                                for (ox, v) in src.iter().enumerate() {
                                    if let Some(ix) = tap(ox, kx, g.stride, g.pad, g.w) {
                                        dst[ix] += *v;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// 3D cross-correlation with zero padding.
///
/// `input` is `N×Cin×D×H×W`, `weight` is `Cout×Cin×k×k×k`, `bias` is `[Cout]`.
/// Output extents are `(D + 2·padding − k)/stride + 1`, which must be integral.
pub fn conv3d<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let g = conv_geometry(input, weight, Some(bias), stride, padding)?;
    let rows = g.rows();
    let p_out = g.out_volume();
    let mut out = vec![T::ZERO; g.n * g.cout * p_out];
    let mut col = Vec::new();
    let samples = input
        .data()
        .chunks_exact(g.cin * g.in_volume())
        .zip(out.chunks_exact_mut(g.cout * p_out));
    for (x, y) in samples {
        for (z0, z1) in g.slabs() {
            let m = (z1 - z0) * g.out_plane();
            col.resize(rows * m, T::ZERO);
            im2col(x, &g, z0, z1, &mut col);
            // SAFETY: weight is cout×rows, col is rows×m, and the output
            // window starts at column z0·plane of this sample's cout×p_out block.
            unsafe {
                T::gemm(
                    g.cout,
                    rows,
                    m,
                    weight.data().as_ptr(),
                    rows as isize,
                    1,
                    col.as_ptr(),
                    m as isize,
                    1,
                    T::ZERO,
                    y.as_mut_ptr().add(z0 * g.out_plane()),
                    p_out as isize,
                    1,
                );
            }
        }
        for (yc, &b) in y.chunks_exact_mut(p_out).zip(bias.data()) {
            yc.iter_mut().for_each(|v| *v += b);
        }
    }
    Tensor::new(vec![g.n, g.cout, g.od, g.oh, g.ow], out)
}

/// Gradients of [`conv3d`] given the upstream gradient and the forward inputs.
pub fn conv3d_backward<T: Real>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    weight: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<ConvGrads<T>> {
    let (gi, gw, gb) = conv3d_backward_impl(grad_out, input, weight, stride, padding, true)?;
    Ok(ConvGrads {
        input: gi.expect("requested input gradient"),
        weight: gw,
        bias: gb,
    })
}

fn channel_sums<T: Real>(grad: &[T], channels: usize, vol: usize, acc: &mut [f64]) {
    for sample in grad.chunks_exact(channels * vol) {
        for (a, gc) in acc.iter_mut().zip(sample.chunks_exact(vol)) {
            *a += gc.iter().map(|v| v.to_f64()).sum::<f64>();
        }
    }
}

/// Shared backward pass; the input gradient is skipped unless `want_input`.
pub(crate) fn conv3d_backward_impl<T: Real>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    weight: &Tensor<T>,
    stride: usize,
    padding: usize,
    want_input: bool,
) -> Result<(Option<Tensor<T>>, Tensor<T>, Tensor<T>)> {
    let g = conv_geometry(input, weight, None, stride, padding)?;
    let expected = [g.n, g.cout, g.od, g.oh, g.ow];
    if grad_out.shape() != expected {
        return Err(Error::ShapeMismatch(format!(
            "conv3d grad_out is {:?}, forward output was {expected:?}",
            grad_out.shape()
        )));
    }
    let rows = g.rows();
    let p_out = g.out_volume();
    let mut gw = vec![T::ZERO; g.cout * rows];
    let mut gb = vec![0.0f64; g.cout];
    channel_sums(grad_out.data(), g.cout, p_out, &mut gb);
    let mut gin = if want_input {
        vec![T::ZERO; input.len()]
    } else {
        Vec::new()
    };
    let mut col = Vec::new();
    let mut dcol = Vec::new();
    for (i, (x, gs)) in input
        .data()
        .chunks_exact(g.cin * g.in_volume())
        .zip(grad_out.data().chunks_exact(g.cout * p_out))
        .enumerate()
    {
        for (z0, z1) in g.slabs() {
            let m = (z1 - z0) * g.out_plane();
            col.resize(rows * m, T::ZERO);
            im2col(x, &g, z0, z1, &mut col);
            let gslab = gs[z0 * g.out_plane()..].as_ptr();
            // SAFETY: gslab addresses the cout×m window (row stride p_out) of
            // this sample's gradient; col is rows×m read transposed; gw is cout×rows.
            unsafe {
                T::gemm(
                    g.cout,
                    m,
                    rows,
                    gslab,
                    p_out as isize,
                    1,
                    col.as_ptr(),
                    1,
                    m as isize,
                    T::ONE,
                    gw.as_mut_ptr(),
                    rows as isize,
                    1,
                );
            }
            if want_input {
                dcol.resize(rows * m, T::ZERO);
                // SAFETY: weight read transposed as rows×cout; dcol is rows×m.
                unsafe {
                    T::gemm(
                        rows,
                        g.cout,
                        m,
                        weight.data().as_ptr(),
                        1,
                        rows as isize,
                        gslab,
                        p_out as isize,
                        1,
                        T::ZERO,
                        dcol.as_mut_ptr(),
                        m as isize,
                        1,
                    );
                }
                let gx = &mut gin[i * g.cin * g.in_volume()..(i + 1) * g.cin * g.in_volume()];
                col2im(&dcol, &g, z0, z1, gx);
            }
        }
    }
    let gin = if want_input {
        Some(Tensor::new(input.shape().to_vec(), gin)?)
    } else {
        None
    };
    Ok((
        gin,
        Tensor::new(weight.shape().to_vec(), gw)?,
        Tensor::new(vec![g.cout], gb.into_iter().map(T::from_f64).collect())?,
    ))
}

fn deconv_geometry<T: Real>(input: &Tensor<T>, weight: &Tensor<T>) -> Result<(usize, usize, usize, [usize; 3])> {
    let [n, cin, d, h, w] = input.dims5()?;
    let ws = weight.shape();
    if ws.len() != 5 || ws[0] != cin || ws[2..] != [2, 2, 2] {
        return Err(Error::ShapeMismatch(format!(
            "deconv3d weight must be {cin}×Cout×2×2×2, got {ws:?}"
        )));
    }
    Ok((n, cin, ws[1], [d, h, w]))
}

/// Stride-2 transposed convolution with a `Cin×Cout×2×2×2` kernel: every
/// input voxel writes one `2×2×2` output block, so extents exactly double.
pub fn deconv3d<T: Real>(input: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, cin, cout, [d, h, w]) = deconv_geometry(input, weight)?;
    if bias.shape() != [cout] {
        return Err(Error::ShapeMismatch(format!(
            "deconv3d bias must have shape [{cout}], got {:?}",
            bias.shape()
        )));
    }
    let p = d * h * w;
    let c8 = cout * 8;
    let (oh, ow) = (2 * h, 2 * w);
    let o_vol = 8 * p;
    let mut y = vec![T::ZERO; c8 * p];
    let mut out = vec![T::ZERO; n * cout * o_vol];
    for (x, dst) in input.data().chunks_exact(cin * p).zip(out.chunks_exact_mut(cout * o_vol)) {
        // SAFETY: weight viewed as its transpose (c8×cin); x is cin×p; y is c8×p.
        unsafe {
            T::gemm(
                c8,
                cin,
                p,
                weight.data().as_ptr(),
                1,
                c8 as isize,
                x.as_ptr(),
                p as isize,
                1,
                T::ZERO,
                y.as_mut_ptr(),
                p as isize,
                1,
            );
        }
        for co in 0..cout {
            let b = bias.data()[co];
            let dc = &mut dst[co * o_vol..(co + 1) * o_vol];
            for tap in 0..8 {
                let (a, bb, c) = (tap >> 2, (tap >> 1) & 1, tap & 1);
                let yr = &y[(co * 8 + tap) * p..][..p];
                for z in 0..d {
                    for yy in 0..h {
                        let src = &yr[(z * h + yy) * w..][..w];
                        let row = ((2 * z + a) * oh + 2 * yy + bb) * ow + c;
                        for (x, &v) in src.iter().enumerate() {
                            dc[row + 2 * x] = v + b;
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![n, cout, 2 * d, oh, ow], out)
}

/// Gradients of [`deconv3d`].
pub fn deconv3d_backward<T: Real>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    weight: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let (n, cin, cout, [d, h, w]) = deconv_geometry(input, weight)?;
    let expected = [n, cout, 2 * d, 2 * h, 2 * w];
    if grad_out.shape() != expected {
        return Err(Error::ShapeMismatch(format!(
            "deconv3d grad_out is {:?}, forward output was {expected:?}",
            grad_out.shape()
        )));
    }
    let p = d * h * w;
    let c8 = cout * 8;
    let (oh, ow) = (2 * h, 2 * w);
    let o_vol = 8 * p;
    let mut gy = vec![T::ZERO; c8 * p];
    let mut gin = vec![T::ZERO; input.len()];
    let mut gw = vec![T::ZERO; cin * c8];
    let mut gb = vec![0.0f64; cout];
    channel_sums(grad_out.data(), cout, o_vol, &mut gb);
    let samples = input
        .data()
        .chunks_exact(cin * p)
        .zip(grad_out.data().chunks_exact(cout * o_vol))
        .zip(gin.chunks_exact_mut(cin * p));
    for ((x, gs), gx) in samples {
        for co in 0..cout {
            let gc = &gs[co * o_vol..(co + 1) * o_vol];
            for tap in 0..8 {
                let (a, bb, c) = (tap >> 2, (tap >> 1) & 1, tap & 1);
                let dst = &mut gy[(co * 8 + tap) * p..][..p];
                for z in 0..d {
                    for yy in 0..h {
                        let row = ((2 * z + a) * oh + 2 * yy + bb) * ow + c;
                        for (x, v) in dst[(z * h + yy) * w..][..w].iter_mut().enumerate() {
                            *v = gc[row + 2 * x];
                        }
                    }
                }
            }
        }
        // SAFETY: weight is cin×c8, gy is c8×p, gx and x are cin×p, gw is
        // cin×c8; gy is read transposed (p×c8) for the weight gradient.
        unsafe {
            T::gemm(
                cin,
                c8,
                p,
                weight.data().as_ptr(),
                c8 as isize,
                1,
                gy.as_ptr(),
                p as isize,
                1,
                T::ZERO,
                gx.as_mut_ptr(),
                p as isize,
                1,
            );
            T::gemm(
                cin,
                p,
                c8,
                x.as_ptr(),
                p as isize,
                1,
                gy.as_ptr(),
                1,
                p as isize,
                T::ONE,
                gw.as_mut_ptr(),
                c8 as isize,
                1,
            );
        }
    }
    Ok(ConvGrads {
        input: Tensor::new(input.shape().to_vec(), gin)?,
        weight: Tensor::new(weight.shape().to_vec(), gw)?,
        bias: Tensor::new(vec![cout], gb.into_iter().map(T::from_f64).collect())?,
    })
}
