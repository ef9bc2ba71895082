//! Dense convolution kernels: im2col / col2im plus gemm-backed forward and
//! backward passes. Transposed convolution reuses these with input/output
//! roles swapped. Parallel sections split over independent output slices
//! only, so results do not depend on the thread count.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Validated geometry of a conv2d application.
#[derive(Clone, Copy, Debug)]
pub struct ConvDims {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

pub fn conv_dims(
    x_shape: &[usize],
    w_shape: &[usize],
    stride: usize,
    pad: usize,
) -> Result<ConvDims> {
    let [n, cin, h, w]: [usize; 4] = x_shape
        .try_into()
        .map_err(|_| Error::Dimension(format!("conv2d input must be 4-d, got {x_shape:?}")))?;
    let [cout, wcin, kh, kw]: [usize; 4] = w_shape
        .try_into()
        .map_err(|_| Error::Dimension(format!("conv2d weight must be 4-d, got {w_shape:?}")))?;
    if wcin != cin {
        return Err(Error::Dimension(format!(
            "conv2d channel mismatch: input has {cin}, weight expects {wcin}"
        )));
    }
    if kh == 0 || kw == 0 || stride == 0 {
        return Err(Error::Dimension(
            "conv2d kernel extents and stride must be >= 1".into(),
        ));
    }
    if h + 2 * pad < kh || w + 2 * pad < kw {
        return Err(Error::Dimension(format!(
            "conv2d kernel {kh}x{kw} exceeds padded input {}x{}",
            h + 2 * pad,
            w + 2 * pad
        )));
    }
    Ok(ConvDims {
        n,
        cin,
        h,
        w,
        cout,
        kh,
        kw,
        stride,
        pad,
        oh: (h + 2 * pad - kh) / stride + 1,
        ow: (w + 2 * pad - kw) / stride + 1,
    })
}

/// Unfold one sample `[cin, h, w]` into `col[cin*kh*kw, oh*ow]`.
fn im2col<S: Scalar>(x: &[S], d: &ConvDims, col: &mut [S]) {
    let (h, w, oh, ow) = (d.h, d.w, d.oh, d.ow);
    debug_assert_eq!(x.len(), d.cin * h * w);
    debug_assert_eq!(col.len(), d.cin * d.kh * d.kw * oh * ow);
    for c in 0..d.cin {
        let plane = &x[c * h * w..(c + 1) * h * w];
        for ki in 0..d.kh {
            for kj in 0..d.kw {
                let row = ((c * d.kh + ki) * d.kw + kj) * (oh * ow);
                for o_r in 0..oh {
                    let ih = (o_r * d.stride + ki) as isize - d.pad as isize;
                    let dst = &mut col[row + o_r * ow..row + (o_r + 1) * ow];
                    if ih < 0 || ih as usize >= h {
                        dst.fill(S::ZERO);
                        continue;
                    }
                    let src_row = &plane[ih as usize * w..(ih as usize + 1) * w];
                    for (o_c, out) in dst.iter_mut().enumerate() {
                        let iw = (o_c * d.stride + kj) as isize - d.pad as isize;
                        *out = if iw >= 0 && (iw as usize) < w {
                            src_row[iw as usize]
                        } else {
                            S::ZERO
                        };
                    }
                }
            }
        }
    }
}

/// Fold `col[cin*kh*kw, oh*ow]` back into one sample, accumulating overlaps.
fn col2im<S: Scalar>(col: &[S], d: &ConvDims, x: &mut [S]) {
    let (h, w, oh, ow) = (d.h, d.w, d.oh, d.ow);
    for c in 0..d.cin {
        let plane = &mut x[c * h * w..(c + 1) * h * w];
        for ki in 0..d.kh {
            for kj in 0..d.kw {
                let row = ((c * d.kh + ki) * d.kw + kj) * (oh * ow);
                for o_r in 0..oh {
                    let ih = (o_r * d.stride + ki) as isize - d.pad as isize;
                    if ih < 0 || ih as usize >= h {
                        continue;
                    }
                    let src = &col[row + o_r * ow..row + (o_r + 1) * ow];
                    let dst_row = &mut plane[ih as usize * w..(ih as usize + 1) * w];
                    for (o_c, v) in src.iter().enumerate() {
                        let iw = (o_c * d.stride + kj) as isize - d.pad as isize;
                        if iw >= 0 && (iw as usize) < w {
                            dst_row[iw as usize] += *v;
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation forward: `out[n, cout, oh, ow]`.
pub fn conv_forward<S: Scalar>(x: &[S], weight: &[S], bias: Option<&[S]>, d: &ConvDims) -> Vec<S> {
    let k = d.cin * d.kh * d.kw;
    let out_plane = d.oh * d.ow;
    let mut out = vec![S::ZERO; d.n * d.cout * out_plane];
    out.par_chunks_mut(d.cout * out_plane)
        .zip(x.par_chunks(d.cin * d.h * d.w))
        .for_each_init(
            || vec![S::ZERO; k * out_plane],
            |col, (out_n, x_n)| {
                im2col(x_n, d, col);
                S::gemm(d.cout, k, out_plane, S::ONE, weight, false, col, false, out_n);
                if let Some(b) = bias {
                    for (co, row) in out_n.chunks_mut(out_plane).enumerate() {
                        let bv = b[co];
                        for v in row {
                            *v += bv;
                        }
                    }
                }
            },
        );
    out
}

/// Gradient w.r.t. the input: `dx[n, cin, h, w]`.
pub fn conv_backward_input<S: Scalar>(dout: &[S], weight: &[S], d: &ConvDims) -> Vec<S> {
    let k = d.cin * d.kh * d.kw;
    let out_plane = d.oh * d.ow;
    let mut dx = vec![S::ZERO; d.n * d.cin * d.h * d.w];
    dx.par_chunks_mut(d.cin * d.h * d.w)
        .zip(dout.par_chunks(d.cout * out_plane))
        .for_each_init(
            || vec![S::ZERO; k * out_plane],
            |dcol, (dx_n, dout_n)| {
                dcol.fill(S::ZERO);
                S::gemm(k, d.cout, out_plane, S::ONE, weight, true, dout_n, false, dcol);
                col2im(dcol, d, dx_n);
            },
        );
    dx
}

/// Gradient w.r.t. the weights: `dw[cout, cin, kh, kw]`.
pub fn conv_backward_weight<S: Scalar>(x: &[S], dout: &[S], d: &ConvDims) -> Vec<S> {
    let k = d.cin * d.kh * d.kw;
    let out_plane = d.oh * d.ow;
    let mut dw = vec![S::ZERO; d.cout * k];
    let mut col = vec![S::ZERO; k * out_plane];
    for n in 0..d.n {
        let x_n = &x[n * d.cin * d.h * d.w..(n + 1) * d.cin * d.h * d.w];
        let dout_n = &dout[n * d.cout * out_plane..(n + 1) * d.cout * out_plane];
        im2col(x_n, d, &mut col);
        S::gemm(d.cout, out_plane, k, S::ONE, dout_n, false, &col, true, &mut dw);
    }
    dw
}

/// Per-channel sum over batch and spatial axes: `db[c]` for `g[n, c, h, w]`.
pub fn sum_per_channel<S: Scalar>(g: &[S], channels: usize, plane: usize) -> Vec<S> {
    let mut db = vec![S::ZERO; channels];
    for sample in g.chunks(channels * plane) {
        for (c, chunk) in sample.chunks(plane).enumerate() {
            let mut acc = S::ZERO;
            for v in chunk {
                acc += *v;
            }
            db[c] += acc;
        }
    }
    db
}

#[cfg(test)]
mod tests {
    use super::*;

    // Direct six-nested-loop cross-correlation, the shape the gemm path must match.
    fn conv_loops(x: &[f64], w: &[f64], b: &[f64], d: &ConvDims) -> Vec<f64> {
        let mut out = vec![0.0; d.n * d.cout * d.oh * d.ow];
        for n in 0..d.n {
            for co in 0..d.cout {
                for or in 0..d.oh {
                    for oc in 0..d.ow {
                        let mut acc = b[co];
                        for ci in 0..d.cin {
                            for ki in 0..d.kh {
                                for kj in 0..d.kw {
                                    let ih = (or * d.stride + ki) as isize - d.pad as isize;
                                    let iw = (oc * d.stride + kj) as isize - d.pad as isize;
                                    if ih >= 0
                                        && (ih as usize) < d.h
                                        && iw >= 0
                                        && (iw as usize) < d.w
                                    {
                                        acc += x[((n * d.cin + ci) * d.h + ih as usize) * d.w
                                            + iw as usize]
                                            * w[((co * d.cin + ci) * d.kh + ki) * d.kw + kj];
                                    }
                                }
                            }
                        }
                        out[((n * d.cout + co) * d.oh + or) * d.ow + oc] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn gemm_path_matches_loop_reference() {
        let d = conv_dims(&[2, 3, 5, 6], &[4, 3, 3, 3], 1, 1).unwrap();
        let x: Vec<f64> = (0..d.n * d.cin * d.h * d.w)
            .map(|i| ((i * 37 + 11) % 17) as f64 * 0.25 - 2.0)
            .collect();
        let w: Vec<f64> = (0..d.cout * d.cin * d.kh * d.kw)
            .map(|i| ((i * 23 + 5) % 13) as f64 * 0.5 - 3.0)
            .collect();
        let b = vec![0.5, -1.0, 0.0, 2.0];
        let fast = conv_forward(&x, &w, Some(&b), &d);
        let slow = conv_loops(&x, &w, &b, &d);
        for (a, r) in fast.iter().zip(&slow) {
            assert!((a - r).abs() < 1e-12, "{a} vs {r}");
        }
    }

    #[test]
    fn strided_geometry() {
        let d = conv_dims(&[1, 1, 5, 5], &[1, 1, 3, 3], 2, 0).unwrap();
        assert_eq!((d.oh, d.ow), (2, 2));
        let d = conv_dims(&[1, 1, 4, 4], &[1, 1, 2, 2], 2, 0).unwrap();
        assert_eq!((d.oh, d.ow), (2, 2));
    }

    #[test]
    fn channel_mismatch_rejected() {
        assert!(conv_dims(&[1, 2, 4, 4], &[1, 3, 3, 3], 1, 0).is_err());
    }

    #[test]
    fn kernel_larger_than_padded_input_rejected() {
        assert!(conv_dims(&[1, 1, 2, 2], &[1, 1, 5, 5], 1, 1).is_err());
    }
}
