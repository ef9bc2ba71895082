//! Structural properties of the tensor ops: oracle comparisons against
//! direct loops, adjoint identities for the linear ops, determinism, and
//! input immutability.

mod common;

use modeseg::ops;
use modeseg::tensor::Tensor;
use proptest::prelude::*;
use rand::Rng;

fn inner(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[test]
fn conv2d_matches_loop_oracle() {
    let mut r = common::rng(101);
    let (n, cin, h, w) = (2, 3, 8, 8);
    let (cout, kh, kw) = (4, 3, 3);
    let x: Vec<f64> = common::random_vec(&mut r, n * cin * h * w, -2.0, 2.0);
    let wgt: Vec<f64> = common::random_vec(&mut r, cout * cin * kh * kw, -1.0, 1.0);
    let bias: Vec<f64> = common::random_vec(&mut r, cout, -1.0, 1.0);

    let y = ops::conv2d(
        &Tensor::from_vec(x.clone(), [n, cin, h, w]).unwrap(),
        &Tensor::from_vec(wgt.clone(), [cout, cin, kh, kw]).unwrap(),
        &Tensor::from_vec(bias.clone(), [cout]).unwrap(),
        1,
        1,
    )
    .unwrap();
    let reference = common::conv2d_ref(&x, (n, cin, h, w), &wgt, (cout, kh, kw), &bias, 1, 1);
    assert_eq!(y.numel(), reference.len());
    for (a, b) in y.data().iter().zip(&reference) {
        assert!((a - b).abs() < 1e-5, "{a} vs {b}");
    }
}

#[test]
fn strided_conv_matches_loop_oracle() {
    let mut r = common::rng(103);
    let (n, cin, h, w) = (1, 2, 9, 7);
    let (cout, kh, kw) = (3, 3, 2);
    let x: Vec<f64> = common::random_vec(&mut r, n * cin * h * w, -1.0, 1.0);
    let wgt: Vec<f64> = common::random_vec(&mut r, cout * cin * kh * kw, -1.0, 1.0);
    let bias = vec![0.25, -0.5, 0.0];
    let y = ops::conv2d(
        &Tensor::from_vec(x.clone(), [n, cin, h, w]).unwrap(),
        &Tensor::from_vec(wgt.clone(), [cout, cin, kh, kw]).unwrap(),
        &Tensor::from_vec(bias.clone(), [cout]).unwrap(),
        2,
        0,
    )
    .unwrap();
    let reference = common::conv2d_ref(&x, (n, cin, h, w), &wgt, (cout, kh, kw), &bias, 2, 0);
    for (a, b) in y.data().iter().zip(&reference) {
        assert!((a - b).abs() < 1e-10, "{a} vs {b}");
    }
}

#[test]
fn maxpool_matches_loop_oracle() {
    let mut r = common::rng(107);
    let x: Vec<f64> = common::random_vec(&mut r, 36, -3.0, 3.0);
    let (y, idx) = ops::maxpool2d(&Tensor::from_vec(x.clone(), [1, 1, 6, 6]).unwrap()).unwrap();
    let (ref_y, ref_idx) = common::maxpool_ref(&x, (1, 1, 6, 6));
    assert_eq!(y.data(), &ref_y[..]);
    let got: Vec<usize> = idx.indices.iter().map(|&v| v as usize).collect();
    assert_eq!(got, ref_idx);
}

/// ⟨conv2d(x, w), y⟩ == ⟨x, conv_transpose2d(y, w)⟩ for the matching
/// geometry (the transpose is the adjoint of the conv).
#[test]
fn conv_transpose_is_adjoint_of_conv() {
    let mut r = common::rng(109);
    for (stride, kh) in [(2usize, 2usize), (1, 3), (2, 3)] {
        let (n, cin, cout) = (2, 3, 4);
        let (oh, ow) = (4, 5);
        let h = stride * (oh - 1) + kh;
        let w = stride * (ow - 1) + kh;
        let x: Vec<f64> = common::random_vec(&mut r, n * cin * h * w, -1.0, 1.0);
        let y: Vec<f64> = common::random_vec(&mut r, n * cout * oh * ow, -1.0, 1.0);
        let wgt: Vec<f64> = common::random_vec(&mut r, cout * cin * kh * kh, -1.0, 1.0);

        let conv_x = ops::conv2d(
            &Tensor::from_vec(x.clone(), [n, cin, h, w]).unwrap(),
            &Tensor::from_vec(wgt.clone(), [cout, cin, kh, kh]).unwrap(),
            &Tensor::zeros([cout]),
            stride,
            0,
        )
        .unwrap();
        let transpose_y = ops::conv_transpose2d(
            &Tensor::from_vec(y.clone(), [n, cout, oh, ow]).unwrap(),
            &Tensor::from_vec(wgt.clone(), [cout, cin, kh, kh]).unwrap(),
            &Tensor::zeros([cin]),
            stride,
        )
        .unwrap();
        let lhs = inner(conv_x.data(), &y);
        let rhs = inner(&x, transpose_y.data());
        assert!(
            (lhs - rhs).abs() <= 1e-5 * (1.0 + lhs.abs()),
            "stride {stride} k {kh}: {lhs} vs {rhs}"
        );
    }
}

/// Generic adjoint identity via the backward pass: for a linear op f,
/// grad_x ⟨f(x), y⟩ must satisfy ⟨f(x), y⟩ == ⟨x, grad⟩.
fn backward_adjoint_check(
    op: &dyn Fn(&Tensor<f64>) -> Tensor<f64>,
    x: Vec<f64>,
    shape: &[usize],
    seed: u64,
) {
    let mut r = common::rng(seed);
    let xt = Tensor::param(x.clone(), shape).unwrap();
    let fx = op(&xt);
    let y: Vec<f64> = common::random_vec(&mut r, fx.numel(), -1.0, 1.0);
    let yt = Tensor::from_vec(y.clone(), fx.shape().clone()).unwrap();
    let loss = ops::sum(&ops::mul(&fx, &yt).unwrap()).unwrap();
    let grads = loss.backward().unwrap();
    let gx = grads.get(&xt).unwrap();
    let lhs = inner(fx.data(), &y);
    let rhs = inner(&x, gx);
    assert!(
        (lhs - rhs).abs() <= 1e-5 * (1.0 + lhs.abs()),
        "{lhs} vs {rhs}"
    );
}

#[test]
fn linear_ops_satisfy_adjoint_identity() {
    let mut r = common::rng(211);
    let x24: Vec<f64> = common::random_vec(&mut r, 2 * 3 * 4 * 4, -1.5, 1.5);
    // concat is linear in x only when the other operand is zero
    let zeros = Tensor::<f64>::zeros([2, 1, 4, 4]);
    backward_adjoint_check(
        &|x| ops::concat_channels(x, &zeros).unwrap(),
        x24.clone(),
        &[2, 3, 4, 4],
        1,
    );
    backward_adjoint_check(&|x| ops::scale(x, 2.5).unwrap(), x24.clone(), &[2, 3, 4, 4], 2);
    let wgt = Tensor::from_vec(common::random_vec::<f64>(&mut r, 2 * 3 * 9, -1.0, 1.0), [2, 3, 3, 3]).unwrap();
    backward_adjoint_check(
        &|x| ops::conv2d(x, &wgt, &Tensor::zeros([2]), 1, 1).unwrap(),
        x24.clone(),
        &[2, 3, 4, 4],
        3,
    );
    // unpool with fixed indices is linear; its adjoint gathers
    let pool_src = Tensor::from_vec(common::random_vec::<f64>(&mut r, 2 * 3 * 16, -1.0, 1.0), [2, 3, 4, 4]).unwrap();
    let (_, idx) = ops::maxpool2d(&pool_src).unwrap();
    backward_adjoint_check(
        &|x| ops::max_unpool2d(x, &idx).unwrap(),
        common::random_vec(&mut r, 2 * 3 * 4, -1.0, 1.0),
        &[2, 3, 2, 2],
        4,
    );
}

#[test]
fn forward_is_deterministic_for_fixed_seed() {
    let mut r1 = common::rng(5);
    let mut r2 = common::rng(5);
    let x = Tensor::from_vec(common::random_vec::<f32>(&mut common::rng(1), 256, -1.0, 1.0), [2, 2, 8, 8]).unwrap();
    let a = ops::dropout(&x, 0.3, true, &mut r1).unwrap();
    let b = ops::dropout(&x, 0.3, true, &mut r2).unwrap();
    assert_eq!(a.data(), b.data());
}

#[test]
fn ops_do_not_mutate_inputs() {
    let mut r = common::rng(6);
    let data: Vec<f64> = common::random_vec(&mut r, 2 * 2 * 4 * 4, -1.0, 1.0);
    let x = Tensor::param(data.clone(), [2, 2, 4, 4]).unwrap();
    let w = Tensor::param(common::random_vec::<f64>(&mut r, 2 * 2 * 9, -1.0, 1.0), [2, 2, 3, 3]).unwrap();
    let w_data = w.data().to_vec();
    let y = ops::conv2d(&x, &w, &Tensor::zeros([2]), 1, 1).unwrap();
    let _ = ops::relu(&y).unwrap();
    let (p, idx) = ops::maxpool2d(&y).unwrap();
    let _ = ops::max_unpool2d(&p, &idx).unwrap();
    let loss = ops::mean(&y).unwrap();
    let _ = loss.backward().unwrap();
    assert_eq!(x.data(), &data[..]);
    assert_eq!(w.data(), &w_data[..]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// unpool(pool(x)) is non-zero exactly at the recorded argmax positions
    /// and round-trips their values.
    #[test]
    fn pool_unpool_round_trip(n in 1usize..3, c in 1usize..4, hw in 1usize..5, seed in 0u64..1000) {
        let (h, w) = (hw * 2, hw * 2);
        let mut r = common::rng(seed);
        let data: Vec<f64> = (0..n * c * h * w).map(|_| r.random_range(-5.0..5.0)).collect();
        let x = Tensor::from_vec(data.clone(), [n, c, h, w]).unwrap();
        let (pooled, idx) = ops::maxpool2d(&x).unwrap();
        let back = ops::max_unpool2d(&pooled, &idx).unwrap();
        for (i, (&b, &orig)) in back.data().iter().zip(&data).enumerate() {
            if idx.indices.contains(&(i as u32)) {
                prop_assert_eq!(b, orig);
            } else {
                prop_assert_eq!(b, 0.0);
            }
        }
    }

    /// concatenation preserves both operands in order
    #[test]
    fn concat_preserves_order(ca in 1usize..4, cb in 1usize..4, seed in 0u64..1000) {
        let mut r = common::rng(seed);
        let a: Vec<f64> = (0..ca * 4).map(|_| r.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..cb * 4).map(|_| r.random_range(-1.0..1.0)).collect();
        let at = Tensor::from_vec(a.clone(), [1, ca, 2, 2]).unwrap();
        let bt = Tensor::from_vec(b.clone(), [1, cb, 2, 2]).unwrap();
        let y = ops::concat_channels(&at, &bt).unwrap();
        prop_assert_eq!(&y.data()[..ca * 4], &a[..]);
        prop_assert_eq!(&y.data()[ca * 4..], &b[..]);
    }

    /// x + (-1)·x vanishes and sum distributes over concat
    #[test]
    fn sum_distributes_over_concat(c in 1usize..4, seed in 0u64..1000) {
        let mut r = common::rng(seed);
        let a: Vec<f64> = (0..c * 4).map(|_| r.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..4).map(|_| r.random_range(-1.0..1.0)).collect();
        let at = Tensor::from_vec(a, [1, c, 2, 2]).unwrap();
        let bt = Tensor::from_vec(b, [1, 1, 2, 2]).unwrap();
        let cat = ops::concat_channels(&at, &bt).unwrap();
        let lhs = ops::sum(&cat).unwrap().item().unwrap();
        let rhs = ops::sum(&at).unwrap().item().unwrap() + ops::sum(&bt).unwrap().item().unwrap();
        prop_assert!((lhs - rhs).abs() < 1e-9);
    }
}
