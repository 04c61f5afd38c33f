use bfr_core::autodiff::gradcheck::grad_check;
use bfr_core::{Activation, Error, Ewise, Graph, Graph64, Tensor, Tensor64, Var};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn t64(shape: &[usize], data: &[f64]) -> Tensor64 {
    Tensor::from_f64(shape.to_vec(), data).unwrap()
}

/// Weighted sum `Σ w ⊙ y` with fixed pseudo-random weights, so that
/// gradients of sum-preserving ops (softmax, normalization) are non-trivial.
fn weighted_sum(g: &mut Graph64, y: Var, seed: u64) -> bfr_core::Result<Var> {
    let w = Tensor::randn(g.shape(y).to_vec(), 1.0, &mut rng(seed));
    let w = g.constant(w);
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

/// Six nested loops (plus group bookkeeping), no im2col.
#[allow(clippy::too_many_arguments)]
fn conv_oracle(
    x: &Tensor64,
    w: &Tensor64,
    b: Option<&Tensor64>,
    stride: usize,
    pad: usize,
    groups: usize,
) -> Tensor64 {
    let (n, cin, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (cout, cin_g, kh, kw) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
    let cout_g = cout / groups;
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (wd + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0; n * cout * oh * ow];
    for ni in 0..n {
        for co in 0..cout {
            let grp = co / cout_g;
            for oi in 0..oh {
                for oj in 0..ow {
                    let mut acc = b.map_or(0.0, |b| b.data()[co]);
                    for ci in 0..cin_g {
                        for ki in 0..kh {
                            for kj in 0..kw {
                                let y = (oi * stride + ki) as isize - pad as isize;
                                let xx = (oj * stride + kj) as isize - pad as isize;
                                if y < 0 || xx < 0 || y >= h as isize || xx >= wd as isize {
                                    continue;
                                }
                                let c = grp * cin_g + ci;
                                let xv = x.data()[((ni * cin + c) * h + y as usize) * wd + xx as usize];
                                let wv = w.data()[((co * cin_g + ci) * kh + ki) * kw + kj];
                                acc += xv * wv;
                            }
                        }
                    }
                    out[((ni * cout + co) * oh + oi) * ow + oj] = acc;
                }
            }
        }
    }
    Tensor::new(vec![n, cout, oh, ow], out).unwrap()
}

fn run_conv(x: &Tensor64, w: &Tensor64, b: Option<&Tensor64>, s: usize, p: usize, gr: usize) -> Tensor64 {
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let wv = g.constant(w.clone());
    let bv = b.map(|b| g.constant(b.clone()));
    let y = g.conv2d(xv, wv, bv, s, p, gr).unwrap();
    g.value(y).clone()
}

#[test]
fn conv_pointwise_scaling() {
    let x = Tensor64::ones([1, 1, 3, 3]);
    let w = t64(&[1, 1, 1, 1], &[2.0]);
    let y = run_conv(&x, &w, None, 1, 0, 1);
    assert_eq!(y.shape(), &[1, 1, 3, 3]);
    assert!(y.data().iter().all(|&v| v == 2.0));
}

#[test]
fn conv_delta_kernel_is_identity() {
    let x = Tensor64::randn([1, 1, 5, 4], 1.0, &mut rng(1));
    let mut k = vec![0.0; 9];
    k[4] = 1.0;
    let w = t64(&[1, 1, 3, 3], &k);
    assert_eq!(run_conv(&x, &w, None, 1, 1, 1), x);
}

#[test]
fn conv_matches_loop_oracle() {
    let mut r = rng(2);
    let x = Tensor64::randn([1, 2, 4, 4], 1.0, &mut r);
    let w = Tensor64::randn([3, 2, 3, 3], 1.0, &mut r);
    let b = Tensor64::randn([3], 1.0, &mut r);
    let y = run_conv(&x, &w, Some(&b), 2, 1, 1);
    assert_eq!(y.shape(), &[1, 3, 2, 2]);
    assert!(y.max_abs_diff(&conv_oracle(&x, &w, Some(&b), 2, 1, 1)).unwrap() < 1e-6);

    // batched, grouped, pointwise and non-square variants
    let x = Tensor64::randn([2, 4, 5, 6], 1.0, &mut r);
    for (w_shape, s, p, gr) in [
        ([6, 2, 3, 3], 1, 1, 2),
        ([5, 4, 1, 1], 1, 0, 1),
        ([4, 4, 3, 3], 2, 1, 1),
        ([2, 4, 5, 3], 1, 2, 1),
    ] {
        let w = Tensor64::randn(w_shape, 1.0, &mut r);
        let y = run_conv(&x, &w, None, s, p, gr);
        assert!(y.max_abs_diff(&conv_oracle(&x, &w, None, s, p, gr)).unwrap() < 1e-9);
    }
}

#[test]
fn depthwise_conv_matches_per_channel_correlation() {
    let mut r = rng(3);
    let x = Tensor64::randn([2, 3, 6, 5], 1.0, &mut r);
    let w = Tensor64::randn([3, 1, 3, 3], 1.0, &mut r);
    let y = run_conv(&x, &w, None, 1, 1, 3);
    // each channel through its own single-channel convolution
    for c in 0..3 {
        for n in 0..2 {
            let plane: Vec<f64> = x.data()[(n * 3 + c) * 30..][..30].to_vec();
            let xc = t64(&[1, 1, 6, 5], &plane);
            let wc = t64(&[1, 1, 3, 3], &w.data()[c * 9..(c + 1) * 9]);
            let yc = conv_oracle(&xc, &wc, None, 1, 1, 1);
            let got = &y.data()[(n * 3 + c) * 30..][..30];
            for (a, b) in got.iter().zip(yc.data()) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }
}

#[test]
fn conv_errors() {
    let mut g = Graph64::new();
    let x = g.constant(Tensor::ones([1, 3, 4, 4]));
    let w = g.constant(Tensor::ones([4, 1, 3, 3]));
    assert!(matches!(g.conv2d(x, w, None, 1, 1, 2), Err(Error::Config(_))));
    let w2 = g.constant(Tensor::ones([4, 2, 3, 3]));
    assert!(matches!(g.conv2d(x, w2, None, 1, 1, 1), Err(Error::Dimension(_))));
    let w3 = g.constant(Tensor::ones([4, 3, 2, 2]));
    assert!(matches!(g.conv2d(x, w3, None, 1, 1, 1), Err(Error::Config(_))));
}

#[test]
fn layer_norm_examples() {
    let mut g = Graph64::new();
    let x = g.constant(Tensor::full([2, 4, 3, 3], 7.5));
    let y = g.layer_norm(x, 1e-5).unwrap();
    assert!(g.value(y).data().iter().all(|&v| v == 0.0));

    let x = g.constant(t64(&[1, 2, 1, 1], &[1.0, 3.0]));
    let y = g.layer_norm(x, 1e-5).unwrap();
    let d = g.value(y).data();
    assert!((d[0] + 1.0).abs() < 1e-3 && (d[1] - 1.0).abs() < 1e-3);
}

#[test]
fn layer_norm_moments_per_position() {
    let mut g = Graph64::new();
    let x = g.constant(Tensor::randn([2, 5, 3, 2], 3.0, &mut rng(4)));
    let y = g.layer_norm(x, 1e-8).unwrap();
    let d = g.value(y).data();
    for n in 0..2 {
        for p in 0..6 {
            let vals: Vec<f64> = (0..5).map(|c| d[(n * 5 + c) * 6 + p]).collect();
            let mean = vals.iter().sum::<f64>() / 5.0;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 5.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-6);
        }
    }
}

#[test]
fn matmul_examples() {
    let mut g = Graph64::new();
    let a = g.constant(t64(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let b = g.constant(t64(&[2, 1], &[1.0, 1.0]));
    let c = g.matmul(a, b).unwrap();
    assert_eq!(g.value(c).data(), &[3.0, 7.0]);

    let eye = g.constant(t64(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
    let c = g.matmul(eye, a).unwrap();
    assert_eq!(g.value(c), g.value(a));

    let bad = g.constant(Tensor::ones([3, 2]));
    assert!(matches!(g.matmul(a, bad), Err(Error::Dimension(_))));
}

#[test]
fn softmax_examples() {
    let mut g = Graph64::new();
    let x = g.constant(t64(&[2], &[0.0, 0.0]));
    let y = g.softmax(x, 0).unwrap();
    assert_eq!(g.value(y).data(), &[0.5, 0.5]);

    let x = g.constant(t64(&[2], &[1000.0, 0.0]));
    let y = g.softmax(x, 0).unwrap();
    assert_eq!(g.value(y).data()[0], 1.0);
    assert!(g.value(y).data()[1] < 1e-300);

    let x = g.constant(t64(&[3], &[1.0, 2.0, 3.0]));
    let y = g.softmax(x, 0).unwrap();
    for (v, e) in g.value(y).data().iter().zip([0.0900, 0.2447, 0.6652]) {
        assert!((v - e).abs() < 1e-4);
    }
}

#[test]
fn activation_examples() {
    let mut g = Graph64::new();
    let x = g.constant(t64(&[2], &[0.0, 1.0]));
    let s = g.silu(x);
    let ge = g.gelu(x);
    assert_eq!(g.value(s).data()[0], 0.0);
    assert_eq!(g.value(ge).data()[0], 0.0);
    assert!((g.value(s).data()[1] - 1.0 / (1.0 + (-1.0f64).exp())).abs() < 1e-12);
    assert!((g.value(s).data()[1] - 0.7311).abs() < 1e-4);
    assert!(matches!("relu".parse::<Activation>(), Err(Error::Config(_))));
    assert_eq!("gelu".parse::<Activation>().unwrap(), Activation::Gelu);
}

#[test]
fn ewise_identities_and_broadcast() {
    let mut r = rng(5);
    let a = Tensor64::randn([2, 3, 2, 2], 1.0, &mut r);
    let mut g = Graph64::new();
    let av = g.constant(a.clone());
    let z = g.constant(Tensor::zeros([2, 3, 2, 2]));
    let o = g.constant(Tensor::ones([2, 3, 2, 2]));
    let s = g.add(av, z).unwrap();
    let p = g.mul(av, o).unwrap();
    assert_eq!(g.value(s), &a);
    assert_eq!(g.value(p), &a);

    // [C] vector broadcast vs explicit tiling
    let v = t64(&[2], &[10.0, -1.0]);
    let vv = g.constant(v.clone());
    let row = g.constant(Tensor::randn([3, 2], 1.0, &mut r));
    let bc = g.add(row, vv).unwrap();
    let tiled: Vec<f64> = (0..6).map(|i| v.data()[i % 2]).collect();
    for (i, val) in g.value(bc).data().iter().enumerate() {
        assert_eq!(*val, g.value(row).data()[i] + tiled[i]);
    }

    // channel vector broadcast over NCHW via [C,1,1]
    let cvec = t64(&[3, 1, 1], &[1.0, 2.0, 3.0]);
    let cv = g.constant(cvec);
    let m = g.mul(av, cv).unwrap();
    for n in 0..2 {
        for c in 0..3 {
            for k in 0..4 {
                let i = (n * 3 + c) * 4 + k;
                assert_eq!(g.value(m).data()[i], a.data()[i] * (c + 1) as f64);
            }
        }
    }

    let bad = g.constant(Tensor::ones([4]));
    assert!(matches!(g.ewise(av, bad, Ewise::Add), Err(Error::Dimension(_))));
}

#[test]
fn broadcast_add_gradient_reduces_over_broadcast_axes() {
    let mut g = Graph64::new();
    let a = g.leaf(Tensor::randn([2, 3, 4], 1.0, &mut rng(6)), true);
    let b = g.leaf(Tensor::zeros([3, 1]), true);
    let s = g.add(a, b).unwrap();
    let loss = g.sum(s);
    let grads = g.backward(loss).unwrap();
    assert_eq!(grads.get(b).unwrap(), &[8.0, 8.0, 8.0]);
    assert!(grads.get(a).unwrap().iter().all(|&v| v == 1.0));
}

#[test]
fn backward_examples() {
    let x = Tensor64::randn([3, 4], 1.0, &mut rng(7));
    let mut g = Graph64::new();
    let xv = g.leaf(x.clone(), true);
    let loss = g.sum(xv);
    let grads = g.backward(loss).unwrap();
    assert!(grads.get(xv).unwrap().iter().all(|&v| v == 1.0));

    let mut g = Graph64::new();
    let xv = g.leaf(x.clone(), true);
    let sq = g.mul(xv, xv).unwrap();
    let loss = g.sum(sq);
    let grads = g.backward(loss).unwrap();
    for (gv, xv) in grads.get(xv).unwrap().iter().zip(x.data()) {
        assert_eq!(*gv, 2.0 * xv);
    }

    let mut g = Graph64::new();
    let xv = g.leaf(x, true);
    assert!(matches!(g.backward(xv), Err(Error::Usage(_))));
}

#[test]
fn constants_receive_no_gradient() {
    let mut g = Graph64::new();
    let x = g.leaf(Tensor::ones([2]), true);
    let c = g.constant(Tensor::ones([2]));
    let p = g.mul(x, c).unwrap();
    let loss = g.sum(p);
    let grads = g.backward(loss).unwrap();
    assert!(grads.get(c).is_none());
    assert!(grads.get(x).is_some());
}

#[test]
fn grad_check_examples() {
    let x = Tensor64::randn([3, 5], 1.0, &mut rng(8));
    let err = grad_check(|g, v| Ok(g.sum(v[0])), &[x.clone()], 1e-5).unwrap();
    assert!(err < 1e-9, "sum: {err}");
    let err = grad_check(
        |g, v| {
            let s = g.silu(v[0]);
            Ok(g.sum(s))
        },
        &[x],
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-6, "silu: {err}");
}

fn check(name: &str, inputs: Vec<Tensor64>, f: impl Fn(&mut Graph64, &[Var]) -> bfr_core::Result<Var>) {
    let err = grad_check(
        |g, v| {
            let y = f(g, v)?;
            weighted_sum(g, y, 99)
        },
        &inputs,
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-3, "{name}: relative error {err}");
}

#[test]
fn every_op_passes_grad_check_on_three_shapes() {
    let mut r = rng(9);
    let mut rn = |s: &[usize]| Tensor64::randn(s.to_vec(), 1.0, &mut r);

    for (xs, ws, s, p, gr) in [
        ([1, 2, 4, 4], [3, 2, 3, 3], 2, 1, 1),
        ([2, 4, 3, 5], [4, 1, 3, 3], 1, 1, 4),
        ([1, 3, 2, 2], [2, 3, 1, 1], 1, 0, 1),
    ] {
        let inputs = vec![rn(&xs), rn(&ws), rn(&[ws[0]])];
        check("conv2d", inputs, |g, v| g.conv2d(v[0], v[1], Some(v[2]), s, p, gr));
    }
    for shape in [[1usize, 3, 2, 2], [2, 5, 1, 3], [1, 2, 4, 1]] {
        check("layer_norm", vec![rn(&shape)], |g, v| g.layer_norm(v[0], 1e-5));
    }
    for (a, b) in [
        (vec![3, 4], vec![4, 2]),
        (vec![2, 3, 4], vec![2, 4, 5]),
        (vec![2, 2, 3, 4], vec![4, 3]),
    ] {
        check("matmul", vec![rn(&a), rn(&b)], |g, v| g.matmul(v[0], v[1]));
    }
    check("matmul_shared_lhs", vec![rn(&[3, 4]), rn(&[2, 4, 2])], |g, v| g.matmul(v[0], v[1]));
    for (shape, axis) in [(vec![5], 0), (vec![2, 3, 4], 1), (vec![2, 2, 3], 2)] {
        check("softmax", vec![rn(&shape)], move |g, v| g.softmax(v[0], axis));
    }
    for shape in [vec![7], vec![2, 3], vec![1, 2, 2, 3]] {
        check("silu", vec![rn(&shape)], |g, v| Ok(g.silu(v[0])));
        check("gelu", vec![rn(&shape)], |g, v| Ok(g.gelu(v[0])));
        check("square", vec![rn(&shape)], |g, v| Ok(g.square(v[0])));
        check("affine", vec![rn(&shape)], |g, v| Ok(g.affine(v[0], -1.7, 0.3)));
        let shifted = rn(&shape).map(|x| x.abs() + 0.5);
        check("recip", vec![shifted], |g, v| Ok(g.recip(v[0])));
    }
    for (a, b) in [
        (vec![2, 3], vec![3]),
        (vec![2, 3, 2, 2], vec![3, 1, 1]),
        (vec![4, 2], vec![4, 2]),
    ] {
        for kind in [Ewise::Add, Ewise::Sub, Ewise::Mul] {
            check("ewise", vec![rn(&a), rn(&b)], move |g, v| g.ewise(v[0], v[1], kind));
        }
    }
    for shape in [vec![2, 3], vec![2, 3, 4], vec![1, 2, 2, 5]] {
        let flat: usize = shape.iter().product();
        check("reshape", vec![rn(&shape)], move |g, v| g.reshape(v[0], &[flat]));
        check("transpose", vec![rn(&shape)], |g, v| g.transpose(v[0]));
        check("upsample2x", vec![rn(&shape)], |g, v| g.upsample2x(v[0]));
        check("mean", vec![rn(&shape)], |g, v| Ok(g.mean(v[0])));
        check("sum", vec![rn(&shape)], |g, v| Ok(g.sum(v[0])));
        check("narrow", vec![rn(&shape)], |g, v| g.narrow(v[0], 1, 1, 1));
        check("concat", vec![rn(&shape), rn(&shape)], |g, v| g.concat(&[v[0], v[1], v[0]], 1));
    }
    for shape in [[1usize, 1, 2, 2], [2, 3, 4, 2], [1, 2, 4, 4]] {
        check("space_to_depth", vec![rn(&shape)], |g, v| g.space_to_depth(v[0], 2));
    }
}

#[test]
fn forward_is_bit_deterministic() {
    let run = || {
        let mut r = rng(10);
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::randn([2, 8, 6, 6], 1.0, &mut r));
        let w = g.constant(Tensor::randn([8, 8, 3, 3], 0.2, &mut r));
        let y = g.conv2d(x, w, None, 1, 1, 1).unwrap();
        let y = g.layer_norm(y, 1e-5).unwrap();
        let y = g.gelu(y);
        let y = g.softmax(y, 1).unwrap();
        g.value(y).clone()
    };
    assert_eq!(run().data(), run().data());
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one(vals in prop::collection::vec(-1e4f64..1e4, 1..40)) {
        let n = vals.len();
        let mut g = Graph64::new();
        let x = g.constant(Tensor::new(vec![n], vals).unwrap());
        let y = g.softmax(x, 0).unwrap();
        let total: f64 = g.value(y).data().iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-6);
        prop_assert!(g.value(y).data().iter().all(|&p| (0.0..=1.0).contains(&p)));
    }
}
