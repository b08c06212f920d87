mod common;

use common::*;
use maskseg_core::dice::{batch_dice_loss_and_grad, dice_loss_and_grad};
use maskseg_core::model::{build_network, NetworkConfig};
use maskseg_core::tensor::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tensor(shape: &[usize], data: Vec<f64>) -> Tensor<f64> {
    Tensor::new(shape.to_vec(), data).unwrap()
}

#[test]
fn conv3d_matches_naive_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random_vec(&mut rng, 2 * 125);
    let w = random_vec(&mut rng, 3 * 2 * 27);
    let b = random_vec(&mut rng, 3);
    let got = conv3d(&tensor(&[1, 2, 5, 5, 5], x.clone()), &tensor(&[3, 2, 3, 3, 3], w.clone()), &tensor(&[3], b.clone()), 1, 1).unwrap();
    let (want, shape) = naive_conv3d(&x, [1, 2, 5, 5, 5], &w, 3, 3, &b, 1, 1);
    assert_eq!(got.shape(), shape);
    assert!(max_rel_err(got.data(), &want) < 1e-6);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn conv3d_oracle_on_random_shapes(
        seed in any::<u64>(),
        n in 1usize..3, cin in 1usize..4, cout in 1usize..4,
        half in 1usize..4, hh in 1usize..4, hw in 1usize..4,
        variant in 0usize..3,
    ) {
        let (k, stride, pad) = [(3, 1, 1), (3, 1, 0), (2, 2, 0)][variant];
        // even extents of at least 4 suit all three variants
        let [d, h, w] = [2 * half + 2, 2 * hh + 2, 2 * hw + 2];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs = [n, cin, d, h, w];
        let x = random_vec(&mut rng, xs.iter().product());
        let wt = random_vec(&mut rng, cout * cin * k * k * k);
        let b = random_vec(&mut rng, cout);
        let got = conv3d(&tensor(&xs, x.clone()), &tensor(&[cout, cin, k, k, k], wt.clone()), &tensor(&[cout], b.clone()), stride, pad).unwrap();
        let (want, shape) = naive_conv3d(&x, xs, &wt, cout, k, &b, stride, pad);
        prop_assert_eq!(got.shape(), &shape[..]);
        prop_assert!(max_rel_err(got.data(), &want) < 1e-9);
    }

    #[test]
    fn deconv3d_oracles(seed in any::<u64>(), n in 1usize..3, cin in 1usize..4, cout in 1usize..4, d in 1usize..4, h in 1usize..4, w in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs = [n, cin, d, h, w];
        let x = random_vec(&mut rng, xs.iter().product());
        let wt = random_vec(&mut rng, cin * cout * 8);
        let zero_bias = vec![0.0; cout];
        let got = deconv3d(&tensor(&xs, x.clone()), &tensor(&[cin, cout, 2, 2, 2], wt.clone()), &tensor(&[cout], zero_bias.clone())).unwrap();
        prop_assert!(max_rel_err(got.data(), &naive_deconv3d(&x, xs, &wt, cout, &zero_bias)) < 1e-9);

        // transpose identity: the deconv is the input-gradient of a 2³ stride-2 conv
        let probe = Tensor::zeros(vec![n, cout, 2 * d, 2 * h, 2 * w]).unwrap();
        let via_conv = conv3d_backward(&tensor(&xs, x.clone()), &probe, &tensor(&[cin, cout, 2, 2, 2], wt.clone()), 2, 0).unwrap().input;
        prop_assert!(max_rel_err(got.data(), via_conv.data()) < 1e-6);
    }

    #[test]
    fn resample_matches_direct_formula(seed in any::<u64>(), src in prop::array::uniform3(1usize..8), dst in prop::array::uniform3(1usize..10)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = random_vec(&mut rng, src.iter().product());
        let got = resample_grid(&data, src, dst).unwrap();
        // values lie in [-1, 1], so an absolute bound is the meaningful one
        prop_assert!(max_abs_err(&got, &naive_resample(&data, src, dst)) < 1e-12);
    }

    #[test]
    fn resample_reproduces_trilinear_fields(coef in prop::array::uniform8(-2.0f64..2.0), src in prop::array::uniform3(2usize..7), dst in prop::array::uniform3(1usize..9)) {
        let field = |x: f64, y: f64, z: f64| {
            let c = coef;
            c[0] + c[1] * x + c[2] * y + c[3] * z + c[4] * x * y + c[5] * y * z + c[6] * x * z + c[7] * x * y * z
        };
        let mut data = Vec::new();
        for z in 0..src[2] { for y in 0..src[1] { for x in 0..src[0] {
            data.push(field(x as f64, y as f64, z as f64));
        }}}
        let got = resample_grid(&data, src, dst).unwrap();
        let coord = |i: usize, a: usize| if dst[a] == 1 { (src[a] as f64 - 1.0) / 2.0 } else { i as f64 * (src[a] as f64 - 1.0) / (dst[a] as f64 - 1.0) };
        let mut i = 0;
        for z in 0..dst[2] { for y in 0..dst[1] { for x in 0..dst[0] {
            let want = field(coord(x, 0), coord(y, 1), coord(z, 2));
            prop_assert!((got[i] - want).abs() < 1e-9, "{} vs {}", got[i], want);
            i += 1;
        }}}
    }
}

/// Scalar test loss `Σ rᵢ·yᵢ`, so every output element contributes.
fn weighted_sum(y: &Tensor<f64>, r: &[f64]) -> f64 {
    y.data().iter().zip(r).map(|(a, b)| a * b).sum()
}

#[test]
fn conv3d_backward_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for (k, stride, pad) in [(3, 1, 1), (3, 1, 0), (2, 2, 0)] {
        for _ in 0..20 {
            let xs = [rng.random_range(1..3), rng.random_range(1..3), 4, 4, 4];
            let cout = rng.random_range(1..3);
            let x = random_vec(&mut rng, xs.iter().product());
            let wt = random_vec(&mut rng, cout * xs[1] * k * k * k);
            let b = random_vec(&mut rng, cout);
            let run = |x: &[f64], wt: &[f64], b: &[f64]| {
                conv3d(&tensor(&xs, x.to_vec()), &tensor(&[cout, xs[1], k, k, k], wt.to_vec()), &tensor(&[cout], b.to_vec()), stride, pad).unwrap()
            };
            let y = run(&x, &wt, &b);
            let r = random_vec(&mut rng, y.len());
            let g = conv3d_backward(&tensor(y.shape(), r.clone()), &tensor(&xs, x.clone()), &tensor(&[cout, xs[1], k, k, k], wt.clone()), stride, pad).unwrap();
            let fx = central_difference(&mut |p| weighted_sum(&run(p, &wt, &b), &r), &x, 1e-3);
            let fw = central_difference(&mut |p| weighted_sum(&run(&x, p, &b), &r), &wt, 1e-3);
            let fb = central_difference(&mut |p| weighted_sum(&run(&x, &wt, p), &r), &b, 1e-3);
            assert!(max_rel_err(g.input.data(), &fx) < 1e-3);
            assert!(max_rel_err(g.weight.data(), &fw) < 1e-3);
            assert!(max_rel_err(g.bias.data(), &fb) < 1e-3);
        }
    }
}

#[test]
fn deconv3d_backward_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let (cin, cout) = (rng.random_range(1..4), rng.random_range(1..4));
        let xs = [1, cin, 2, 3, 2];
        let x = random_vec(&mut rng, xs.iter().product());
        let wt = random_vec(&mut rng, cin * cout * 8);
        let b = random_vec(&mut rng, cout);
        let run = |x: &[f64], wt: &[f64], b: &[f64]| {
            deconv3d(&tensor(&xs, x.to_vec()), &tensor(&[cin, cout, 2, 2, 2], wt.to_vec()), &tensor(&[cout], b.to_vec())).unwrap()
        };
        let y = run(&x, &wt, &b);
        let r = random_vec(&mut rng, y.len());
        let g = deconv3d_backward(&tensor(y.shape(), r.clone()), &tensor(&xs, x.clone()), &tensor(&[cin, cout, 2, 2, 2], wt.clone())).unwrap();
        assert!(max_rel_err(g.input.data(), &central_difference(&mut |p| weighted_sum(&run(p, &wt, &b), &r), &x, 1e-3)) < 1e-3);
        assert!(max_rel_err(g.weight.data(), &central_difference(&mut |p| weighted_sum(&run(&x, p, &b), &r), &wt, 1e-3)) < 1e-3);
        assert!(max_rel_err(g.bias.data(), &central_difference(&mut |p| weighted_sum(&run(&x, &wt, p), &r), &b, 1e-3)) < 1e-3);
    }
}

#[test]
fn activation_backward_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for kind in [Activation::Relu, Activation::Sigmoid] {
        for _ in 0..20 {
            // keep relu inputs clear of the kink so the difference quotient is defined
            let x: Vec<f64> = random_vec(&mut rng, 30).into_iter().map(|v| if v.abs() < 0.01 { v + 0.05 } else { v * 3.0 }).collect();
            let r = random_vec(&mut rng, 30);
            let y = activation(&tensor(&[30], x.clone()), kind);
            let g = activation_backward(&tensor(&[30], r.clone()), &y, kind).unwrap();
            let fd = central_difference(&mut |p| weighted_sum(&activation(&tensor(&[30], p.to_vec()), kind), &r), &x, 1e-3);
            let err = max_rel_err(g.data(), &fd);
            assert!(err < 1e-4, "{kind:?}: {err}");
        }
    }
    assert_eq!(activation(&tensor(&[2], vec![-1.0, 2.0]), Activation::Relu).data(), &[0.0, 2.0]);
    assert_eq!(activation(&tensor(&[1], vec![0.0]), Activation::Sigmoid).data(), &[0.5]);
}

#[test]
fn elementwise_and_concat_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for op in [BinaryOp::Add, BinaryOp::Mul] {
        for _ in 0..20 {
            let a = random_vec(&mut rng, 12);
            let b = random_vec(&mut rng, 12);
            let r = random_vec(&mut rng, 12);
            let (ga, gb) = elementwise_backward(&tensor(&[12], r.clone()), &tensor(&[12], a.clone()), &tensor(&[12], b.clone()), op).unwrap();
            let run = |a: &[f64], b: &[f64]| elementwise(&tensor(&[12], a.to_vec()), &tensor(&[12], b.to_vec()), op).unwrap();
            assert!(max_rel_err(ga.data(), &central_difference(&mut |p| weighted_sum(&run(p, &b), &r), &a, 1e-3)) < 1e-3);
            assert!(max_rel_err(gb.data(), &central_difference(&mut |p| weighted_sum(&run(&a, p), &r), &b, 1e-3)) < 1e-3);
        }
    }
    let a = Tensor::<f64>::zeros(vec![1, 4, 8, 8, 8]).unwrap();
    let b = Tensor::<f64>::full(vec![1, 8, 8, 8, 8], 1.0).unwrap();
    let c = concat_channels(&a, &b).unwrap();
    assert_eq!(c.shape(), &[1, 12, 8, 8, 8]);
    let (a2, b2) = split_channels(&c, 4).unwrap();
    assert_eq!((a2, b2), (a, b));
}

#[test]
fn dice_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..50 {
        let n = rng.random_range(2..40);
        let p: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..0.99)).collect();
        let g: Vec<f64> = (0..n).map(|_| f64::from(rng.random_bool(0.4))).collect();
        let gt = tensor(&[n], g.clone());
        let (_, grad) = dice_loss_and_grad(&tensor(&[n], p.clone()), &gt).unwrap();
        let fd = central_difference(&mut |q| dice_loss_and_grad(&tensor(&[n], q.to_vec()), &gt).unwrap().0, &p, 1e-5);
        assert!(max_rel_err(grad.data(), &fd) < 1e-4);
    }
    // batch form: mean of per-sample losses
    let p = random_vec(&mut rng, 16).iter().map(|v| 0.5 + 0.4 * v).collect::<Vec<_>>();
    let g: Vec<f64> = (0..16).map(|i| f64::from(i % 3 == 0)).collect();
    let gt = tensor(&[2, 8], g);
    let (_, grad) = batch_dice_loss_and_grad(&tensor(&[2, 8], p.clone()), &gt).unwrap();
    let fd = central_difference(&mut |q| batch_dice_loss_and_grad(&tensor(&[2, 8], q.to_vec()), &gt).unwrap().0, &p, 1e-5);
    assert!(max_rel_err(grad.data(), &fd) < 1e-4);
}

#[test]
fn whole_network_gradient_check() {
    let tiny = NetworkConfig { levels: 1, base_channels: 2, convs_per_level: 1, ..NetworkConfig::default() };
    let err = network_gradient_error(tiny, 4, 7);
    assert!(err < 1e-2, "{err}");
    let deeper = NetworkConfig { levels: 2, base_channels: 2, convs_per_level: 2, seed: 3, ..NetworkConfig::default() };
    let err = network_gradient_error(deeper, 4, 8);
    assert!(err < 1e-2, "{err}");
}

#[test]
fn identical_passes_give_identical_gradients() {
    let mut m = build_network::<f32>(NetworkConfig { levels: 2, base_channels: 2, ..NetworkConfig::default() }).unwrap();
    let x = Tensor::from_fn(vec![1, 1, 8, 8, 8], |i| (i as f32 * 0.1).sin()).unwrap();
    let grads = |m: &mut maskseg_core::FcnModel| {
        let y = m.forward(&x, true).unwrap();
        let (_, g) = dice_loss_and_grad(&y, &Tensor::full(y.shape().to_vec(), 1.0).unwrap()).unwrap();
        m.backward(&g).unwrap();
        m.params().iter().map(|p| p.value.grad().unwrap().to_vec()).collect::<Vec<_>>()
    };
    assert_eq!(grads(&mut m), grads(&mut m));
}
