//! Brute-force reference implementations shared by the integration tests and
//! the acceptance runner. The oracles never call into the code under test;
//! the finite-difference helpers at the end drive it from outside.
#![allow(dead_code)]

use maskseg_core::dice::dice_loss_and_grad;
use maskseg_core::model::{build_network, NetworkConfig};
use maskseg_core::tensor::Tensor;
use maskseg_core::volume::Dims;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::HashSet;

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Cross-correlation by direct summation over every output voxel and tap.
#[allow(clippy::too_many_arguments)]
pub fn naive_conv3d(
    x: &[f64],
    [n, cin, d, h, w]: [usize; 5],
    weight: &[f64],
    cout: usize,
    k: usize,
    bias: &[f64],
    stride: usize,
    pad: usize,
) -> (Vec<f64>, [usize; 5]) {
    let out_extent = |e: usize| (e + 2 * pad - k) / stride + 1;
    let (od, oh, ow) = (out_extent(d), out_extent(h), out_extent(w));
    let mut out = vec![0.0; n * cout * od * oh * ow];
    let mut o = 0;
    for b in 0..n {
        for co in 0..cout {
            for z in 0..od {
                for y in 0..oh {
                    for xx in 0..ow {
                        let mut acc = bias[co];
                        for ci in 0..cin {
                            for kz in 0..k {
                                for ky in 0..k {
                                    for kx in 0..k {
                                        let iz = (z * stride + kz) as isize - pad as isize;
                                        let iy = (y * stride + ky) as isize - pad as isize;
                                        let ix = (xx * stride + kx) as isize - pad as isize;
                                        if iz < 0 || iy < 0 || ix < 0 || iz >= d as isize || iy >= h as isize || ix >= w as isize {
                                            continue;
                                        }
                                        let xi = (((b * cin + ci) * d + iz as usize) * h + iy as usize) * w + ix as usize;
                                        let wi = (((co * cin + ci) * k + kz) * k + ky) * k + kx;
                                        acc += x[xi] * weight[wi];
                                    }
                                }
                            }
                        }
                        out[o] = acc;
                        o += 1;
                    }
                }
            }
        }
    }
    (out, [n, cout, od, oh, ow])
}

/// Stride-2, 2³ transposed convolution as an explicit scatter of each input
/// voxel into its output block.
pub fn naive_deconv3d(
    x: &[f64],
    [n, cin, d, h, w]: [usize; 5],
    weight: &[f64],
    cout: usize,
    bias: &[f64],
) -> Vec<f64> {
    let (od, oh, ow) = (2 * d, 2 * h, 2 * w);
    let mut out = vec![0.0; n * cout * od * oh * ow];
    for b in 0..n {
        for co in 0..cout {
            for i in 0..od * oh * ow {
                out[(b * cout + co) * od * oh * ow + i] = bias[co];
            }
        }
        for ci in 0..cin {
            for z in 0..d {
                for y in 0..h {
                    for xx in 0..w {
                        let v = x[(((b * cin + ci) * d + z) * h + y) * w + xx];
                        for co in 0..cout {
                            for kz in 0..2 {
                                for ky in 0..2 {
                                    for kx in 0..2 {
                                        let oi = (((b * cout + co) * od + 2 * z + kz) * oh + 2 * y + ky) * ow + 2 * xx + kx;
                                        out[oi] += v * weight[(((ci * cout + co) * 2 + kz) * 2 + ky) * 2 + kx];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Align-corners trilinear interpolation evaluated voxel by voxel.
pub fn naive_resample(data: &[f64], src: Dims, dst: Dims) -> Vec<f64> {
    let coord = |i: usize, a: usize| -> f64 {
        if dst[a] == 1 {
            (src[a] as f64 - 1.0) / 2.0
        } else {
            i as f64 * (src[a] as f64 - 1.0) / (dst[a] as f64 - 1.0)
        }
    };
    let at = |x: usize, y: usize, z: usize| data[x + src[0] * (y + src[1] * z)];
    let mut out = Vec::with_capacity(dst.iter().product());
    for z in 0..dst[2] {
        for y in 0..dst[1] {
            for x in 0..dst[0] {
                let p = [coord(x, 0), coord(y, 1), coord(z, 2)];
                let lo: [usize; 3] = std::array::from_fn(|a| (p[a].floor() as usize).min(src[a] - 1));
                let hi: [usize; 3] = std::array::from_fn(|a| (lo[a] + 1).min(src[a] - 1));
                let f: [f64; 3] = std::array::from_fn(|a| p[a] - lo[a] as f64);
                let mut v = 0.0;
                for corner in 0..8 {
                    let pick = |a: usize| corner >> a & 1 == 1;
                    let wgt: f64 = (0..3).map(|a| if pick(a) { f[a] } else { 1.0 - f[a] }).product();
                    let c: [usize; 3] = std::array::from_fn(|a| if pick(a) { hi[a] } else { lo[a] });
                    v += wgt * at(c[0], c[1], c[2]);
                }
                out.push(v);
            }
        }
    }
    out
}

/// Per-axis plane sums by a plain triple loop.
pub fn naive_histograms(data: &[f32], [w, h, d]: Dims) -> [Vec<f64>; 3] {
    let mut hs = [vec![0.0; w], vec![0.0; h], vec![0.0; d]];
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                let v = f64::from(data[x + w * (y + h * z)]);
                hs[0][x] += v;
                hs[1][y] += v;
                hs[2][z] += v;
            }
        }
    }
    hs
}

/// Smallest and largest index of `h` strictly above `eps`, by linear scan.
pub fn naive_bounds(h: &[f64], eps: f64) -> Option<(usize, usize)> {
    let idx: Vec<usize> = (0..h.len()).filter(|&i| h[i] > eps).collect();
    Some((*idx.first()?, *idx.last()?))
}

/// `(dsc, jsc, pi, ri)` from explicit index sets.
pub fn naive_metrics(seg: &[u8], reference: &[u8]) -> (f64, f64, f64, f64) {
    let s: HashSet<usize> = (0..seg.len()).filter(|&i| seg[i] == 1).collect();
    let g: HashSet<usize> = (0..reference.len()).filter(|&i| reference[i] == 1).collect();
    let inter = s.intersection(&g).count() as f64;
    let union = s.union(&g).count() as f64;
    let (s, g) = (s.len() as f64, g.len() as f64);
    (2.0 * inter / (s + g), inter / union, inter / g, inter / s)
}

pub fn central_difference(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + step;
            let up = f(&probe);
            probe[i] = x[i] - step;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// `|a − b| / max(|a|, |b|, 1e-6)`; the floor keeps vanishing gradients
/// from turning round-off into a large relative error.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

pub fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(&x, &y)| rel_err(x, y)).fold(0.0, f64::max)
}

pub fn max_abs_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(&x, &y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Largest relative error between backprop and central differences over
/// every parameter of a tiny network under the Dice loss.
pub fn network_gradient_error(config: NetworkConfig, extent: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = build_network::<f64>(config).unwrap();
    // nonzero biases keep every ReLU off its kink
    for p in model.params_mut() {
        for v in p.value.data_mut() {
            *v += rng.random_range(-0.1..0.1);
        }
    }
    let shape = vec![1, 1, extent, extent, extent];
    let x = Tensor::from_fn(shape.clone(), |_| rng.random_range(0.0..1.0)).unwrap();
    let t = Tensor::from_fn(shape, |_| f64::from(rng.random_bool(0.3))).unwrap();
    let y = model.forward(&x, true).unwrap();
    let (_, g) = dice_loss_and_grad(&y, &t).unwrap();
    model.backward(&g).unwrap();
    let mut worst: f64 = 0.0;
    for pi in 0..model.params().len() {
        let analytic = model.params()[pi].value.grad().unwrap().to_vec();
        let values = model.params()[pi].value.data().to_vec();
        let mut probe = model.clone();
        let fd = central_difference(
            &mut |v| {
                probe.params_mut()[pi].value.data_mut().copy_from_slice(v);
                dice_loss_and_grad(&probe.predict(&x).unwrap(), &t).unwrap().0
            },
            &values,
            1e-6,
        );
        worst = worst.max(max_rel_err(&analytic, &fd));
    }
    worst
}
