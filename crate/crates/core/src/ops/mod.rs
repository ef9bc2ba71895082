//! Differentiable operations. Each op computes its forward value eagerly and
//! attaches a closure mapping the output gradient to per-input gradients.

mod kernels;
mod pool;

pub use kernels::{conv_dims, ConvDims};
pub use pool::{max_unpool2d, maxpool2d, PoolIndices};

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn same_shape<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>, op: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Dimension(format!(
            "{op}: shape mismatch {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    Ok(())
}

pub fn add<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    add_scaled(a, S::ONE, b, S::ONE)
}

pub fn sub<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    add_scaled(a, S::ONE, b, -S::ONE)
}

/// `wa * a + wb * b`, elementwise.
pub fn add_scaled<S: Scalar>(a: &Tensor<S>, wa: S, b: &Tensor<S>, wb: S) -> Result<Tensor<S>> {
    same_shape(a, b, "add")?;
    let data: Vec<S> = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| wa * x + wb * y)
        .collect();
    let shape = a.shape().clone();
    Tensor::from_op(
        data,
        shape,
        vec![a.clone(), b.clone()],
        Box::new(move |g| {
            vec![
                Some(g.iter().map(|&v| wa * v).collect()),
                Some(g.iter().map(|&v| wb * v).collect()),
            ]
        }),
        "add",
    )
}

pub fn mul<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    same_shape(a, b, "mul")?;
    let data: Vec<S> = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| x * y)
        .collect();
    let shape = a.shape().clone();
    let (ac, bc) = (a.clone(), b.clone());
    Tensor::from_op(
        data,
        shape,
        vec![a.clone(), b.clone()],
        Box::new(move |g| {
            let da = g.iter().zip(bc.data()).map(|(&v, &y)| v * y).collect();
            let db = g.iter().zip(ac.data()).map(|(&v, &x)| v * x).collect();
            vec![Some(da), Some(db)]
        }),
        "mul",
    )
}

pub fn scale<S: Scalar>(x: &Tensor<S>, c: S) -> Result<Tensor<S>> {
    let data: Vec<S> = x.data().iter().map(|&v| v * c).collect();
    let shape = x.shape().clone();
    Tensor::from_op(
        data,
        shape,
        vec![x.clone()],
        Box::new(move |g| vec![Some(g.iter().map(|&v| v * c).collect())]),
        "scale",
    )
}

/// Reduce to a scalar by summation.
pub fn sum<S: Scalar>(x: &Tensor<S>) -> Result<Tensor<S>> {
    let total: S = x.data().iter().copied().sum();
    let n = x.numel();
    Tensor::from_op(
        vec![total],
        [1],
        vec![x.clone()],
        Box::new(move |g| vec![Some(vec![g[0]; n])]),
        "sum",
    )
}

/// Reduce to a scalar by arithmetic mean.
pub fn mean<S: Scalar>(x: &Tensor<S>) -> Result<Tensor<S>> {
    let n = x.numel();
    if n == 0 {
        return Err(Error::Contract("mean of empty tensor".into()));
    }
    let inv = S::ONE / S::from_f64(n as f64);
    let total: S = x.data().iter().copied().sum();
    Tensor::from_op(
        vec![total * inv],
        [1],
        vec![x.clone()],
        Box::new(move |g| vec![Some(vec![g[0] * inv; n])]),
        "mean",
    )
}

pub fn relu<S: Scalar>(x: &Tensor<S>) -> Result<Tensor<S>> {
    let data: Vec<S> = x
        .data()
        .iter()
        .map(|&v| if v > S::ZERO { v } else { S::ZERO })
        .collect();
    let shape = x.shape().clone();
    let xc = x.clone();
    Tensor::from_op(
        data,
        shape,
        vec![x.clone()],
        Box::new(move |g| {
            let dx = g
                .iter()
                .zip(xc.data())
                .map(|(&v, &xi)| if xi > S::ZERO { v } else { S::ZERO })
                .collect();
            vec![Some(dx)]
        }),
        "relu",
    )
}

pub fn sigmoid<S: Scalar>(x: &Tensor<S>) -> Result<Tensor<S>> {
    let data: Vec<S> = x
        .data()
        .iter()
        .map(|&v| S::ONE / (S::ONE + (-v).exp()))
        .collect();
    // d/dx sigmoid = y (1 - y)
    let deriv: Vec<S> = data.iter().map(|&y| y * (S::ONE - y)).collect();
    let shape = x.shape().clone();
    Tensor::from_op(
        data,
        shape,
        vec![x.clone()],
        Box::new(move |g| {
            vec![Some(
                g.iter().zip(&deriv).map(|(&v, &d)| v * d).collect(),
            )]
        }),
        "sigmoid",
    )
}

/// Inverted-scaling dropout: kept activations are divided by `1 - rate`, so
/// inference (`training = false`) is the identity.
pub fn dropout<S: Scalar, R: Rng>(
    x: &Tensor<S>,
    rate: f64,
    training: bool,
    rng: &mut R,
) -> Result<Tensor<S>> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!(
            "dropout rate must be in [0, 1), got {rate}"
        )));
    }
    if !training || rate == 0.0 {
        let shape = x.shape().clone();
        return Tensor::from_op(
            x.data().to_vec(),
            shape,
            vec![x.clone()],
            Box::new(|g| vec![Some(g.to_vec())]),
            "dropout",
        );
    }
    let keep = 1.0 - rate;
    let scale = S::from_f64(1.0 / keep);
    let mask: Vec<S> = (0..x.numel())
        .map(|_| {
            if rng.random::<f64>() < keep {
                scale
            } else {
                S::ZERO
            }
        })
        .collect();
    let data: Vec<S> = x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
    let shape = x.shape().clone();
    Tensor::from_op(
        data,
        shape,
        vec![x.clone()],
        Box::new(move |g| {
            vec![Some(
                g.iter().zip(&mask).map(|(&v, &m)| v * m).collect(),
            )]
        }),
        "dropout",
    )
}

/// Concatenate along the channel axis; batch and spatial extents must match.
pub fn concat_channels<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    let (n, ca, h, w) = a.shape().nchw()?;
    let (nb, cb, hb, wb) = b.shape().nchw()?;
    if (n, h, w) != (nb, hb, wb) {
        return Err(Error::Dimension(format!(
            "concat: incompatible shapes {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    let plane = h * w;
    let mut data = Vec::with_capacity(n * (ca + cb) * plane);
    for i in 0..n {
        data.extend_from_slice(&a.data()[i * ca * plane..(i + 1) * ca * plane]);
        data.extend_from_slice(&b.data()[i * cb * plane..(i + 1) * cb * plane]);
    }
    Tensor::from_op(
        data,
        [n, ca + cb, h, w],
        vec![a.clone(), b.clone()],
        Box::new(move |g| {
            let mut da = Vec::with_capacity(n * ca * plane);
            let mut db = Vec::with_capacity(n * cb * plane);
            for i in 0..n {
                let base = i * (ca + cb) * plane;
                da.extend_from_slice(&g[base..base + ca * plane]);
                db.extend_from_slice(&g[base + ca * plane..base + (ca + cb) * plane]);
            }
            vec![Some(da), Some(db)]
        }),
        "concat",
    )
}

/// 2-d cross-correlation with zero padding.
pub fn conv2d<S: Scalar>(
    x: &Tensor<S>,
    weight: &Tensor<S>,
    bias: &Tensor<S>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<S>> {
    let d = conv_dims(x.dims(), weight.dims(), stride, pad)?;
    if bias.numel() != d.cout {
        return Err(Error::Dimension(format!(
            "conv2d bias has {} elements, expected {}",
            bias.numel(),
            d.cout
        )));
    }
    let data = kernels::conv_forward(x.data(), weight.data(), Some(bias.data()), &d);
    let (xc, wc) = (x.clone(), weight.clone());
    let (xg, wg, bg) = (x.requires_grad(), weight.requires_grad(), bias.requires_grad());
    Tensor::from_op(
        data,
        [d.n, d.cout, d.oh, d.ow],
        vec![x.clone(), weight.clone(), bias.clone()],
        Box::new(move |g| {
            let (dx, (dw, db)) = rayon::join(
                || xg.then(|| kernels::conv_backward_input(g, wc.data(), &d)),
                || {
                    (
                        wg.then(|| kernels::conv_backward_weight(xc.data(), g, &d)),
                        bg.then(|| kernels::sum_per_channel(g, d.cout, d.oh * d.ow)),
                    )
                },
            );
            vec![dx, dw, db]
        }),
        "conv2d",
    )
}

/// Transposed convolution (adjoint of [`conv2d`] in its input). The weight is
/// laid out `[cin, cout, kh, kw]`, so a conv2d weight buffer applied here maps
/// the conv's output channels back to its input channels.
pub fn conv_transpose2d<S: Scalar>(
    x: &Tensor<S>,
    weight: &Tensor<S>,
    bias: &Tensor<S>,
    stride: usize,
) -> Result<Tensor<S>> {
    let (n, cin, h, w) = x.shape().nchw()?;
    let (wcin, cout, kh, kw) = weight.shape().nchw()?;
    if wcin != cin {
        return Err(Error::Dimension(format!(
            "conv_transpose2d channel mismatch: input has {cin}, weight expects {wcin}"
        )));
    }
    if stride == 0 {
        return Err(Error::Dimension("conv_transpose2d stride must be >= 1".into()));
    }
    let oh = stride * (h - 1) + kh;
    let ow = stride * (w - 1) + kw;
    // The underlying conv maps [n, cout, oh, ow] -> [n, cin, h, w]; this op
    // runs it adjoint-wise.
    let d = conv_dims(&[n, cout, oh, ow], &[cin, cout, kh, kw], stride, 0)?;
    debug_assert_eq!((d.oh, d.ow), (h, w));
    if bias.numel() != cout {
        return Err(Error::Dimension(format!(
            "conv_transpose2d bias has {} elements, expected {cout}",
            bias.numel()
        )));
    }
    let mut data = kernels::conv_backward_input(x.data(), weight.data(), &d);
    let plane = oh * ow;
    for sample in data.chunks_mut(cout * plane) {
        for (c, chunk) in sample.chunks_mut(plane).enumerate() {
            let bv = bias.data()[c];
            for v in chunk {
                *v += bv;
            }
        }
    }
    let (xc, wc) = (x.clone(), weight.clone());
    let (xg, wg, bg) = (x.requires_grad(), weight.requires_grad(), bias.requires_grad());
    Tensor::from_op(
        data,
        [n, cout, oh, ow],
        vec![x.clone(), weight.clone(), bias.clone()],
        Box::new(move |g| {
            let (dx, (dw, db)) = rayon::join(
                || xg.then(|| kernels::conv_forward(g, wc.data(), None, &d)),
                || {
                    (
                        wg.then(|| kernels::conv_backward_weight(g, xc.data(), &d)),
                        bg.then(|| kernels::sum_per_channel(g, cout, plane)),
                    )
                },
            );
            vec![dx, dw, db]
        }),
        "conv_transpose2d",
    )
}
