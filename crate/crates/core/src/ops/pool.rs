//! 2×2/stride-2 max pooling with remembered arg-max positions, and the
//! index-driven unpooling that mirrors it in the decoder.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// Arg-max positions captured by a pooling pass: for every pooled output
/// element, the flat index of the winning input element. Ties go to the
/// first element in row-major window order.
#[derive(Clone, Debug)]
pub struct PoolIndices {
    pub input_shape: Shape,
    pub output_shape: Shape,
    pub indices: Arc<Vec<u32>>,
}

/// 2×2 max pooling with stride 2. Spatial extents must be even.
pub fn maxpool2d<S: Scalar>(x: &Tensor<S>) -> Result<(Tensor<S>, PoolIndices)> {
    let (n, c, h, w) = x.shape().nchw()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Dimension(format!(
            "maxpool2d needs even spatial extents, got {h}x{w}"
        )));
    }
    let (oh, ow) = (h / 2, w / 2);
    let xd = x.data();
    let mut out = vec![S::ZERO; n * c * oh * ow];
    let mut indices = vec![0u32; n * c * oh * ow];
    for plane in 0..n * c {
        let in_base = plane * h * w;
        let out_base = plane * oh * ow;
        for or in 0..oh {
            for oc in 0..ow {
                let mut best_idx = in_base + (2 * or) * w + 2 * oc;
                let mut best = xd[best_idx];
                for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = in_base + (2 * or + di) * w + (2 * oc + dj);
                    if xd[idx] > best {
                        best = xd[idx];
                        best_idx = idx;
                    }
                }
                out[out_base + or * ow + oc] = best;
                indices[out_base + or * ow + oc] = best_idx as u32;
            }
        }
    }
    let indices = Arc::new(indices);
    let pool = PoolIndices {
        input_shape: x.shape().clone(),
        output_shape: Shape::from([n, c, oh, ow]),
        indices: Arc::clone(&indices),
    };
    let in_len = x.numel();
    let y = Tensor::from_op(
        out,
        [n, c, oh, ow],
        vec![x.clone()],
        Box::new(move |g| {
            let mut dx = vec![S::ZERO; in_len];
            for (gi, &idx) in g.iter().zip(indices.iter()) {
                dx[idx as usize] += *gi;
            }
            vec![Some(dx)]
        }),
        "maxpool2d",
    )?;
    Ok((y, pool))
}

/// Scatter pooled values back to their remembered positions; everything else
/// is zero.
pub fn max_unpool2d<S: Scalar>(x: &Tensor<S>, pool: &PoolIndices) -> Result<Tensor<S>> {
    if x.shape() != &pool.output_shape {
        return Err(Error::Dimension(format!(
            "max_unpool2d: input shape {:?} does not match pooled shape {:?}",
            x.dims(),
            pool.output_shape.0
        )));
    }
    let out_len = pool.input_shape.numel();
    if let Some(&bad) = pool.indices.iter().find(|&&i| i as usize >= out_len) {
        return Err(Error::Dimension(format!(
            "max_unpool2d: index {bad} outside target of {out_len} elements"
        )));
    }
    let mut out = vec![S::ZERO; out_len];
    for (&v, &idx) in x.data().iter().zip(pool.indices.iter()) {
        out[idx as usize] += v;
    }
    let indices = Arc::clone(&pool.indices);
    let shape = pool.input_shape.clone();
    Tensor::from_op(
        out,
        shape,
        vec![x.clone()],
        Box::new(move |g| {
            let dx = indices.iter().map(|&idx| g[idx as usize]).collect();
            vec![Some(dx)]
        }),
        "max_unpool2d",
    )
}
