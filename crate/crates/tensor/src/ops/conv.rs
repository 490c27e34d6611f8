//! 2-D and 3-D cross-correlation via im2col + GEMM.
//!
//! 2-D convolution is the 3-D kernel with a unit depth axis; both share the
//! same lowering. Column buffers are rebuilt during backward rather than
//! kept alive with the graph.

use crate::error::{Result, TensorError};
use crate::graph::Var;
use crate::ops::linalg::{gemm_into, gemm_view};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Output extent along one axis: `floor((n + 2p - k) / s) + 1`.
pub fn conv_out_extent(n: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    if stride == 0 || k == 0 || n + 2 * pad < k {
        return None;
    }
    Some((n + 2 * pad - k) / stride + 1)
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Geometry {
    pub channels: usize,
    pub input: [usize; 3],
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub pad: [usize; 3],
    pub output: [usize; 3],
}

impl Geometry {
    pub(crate) fn new(
        op: &'static str,
        channels: usize,
        input: [usize; 3],
        kernel: [usize; 3],
        stride: [usize; 3],
        pad: [usize; 3],
    ) -> Result<Self> {
        let mut output = [0; 3];
        for axis in 0..3 {
            output[axis] = conv_out_extent(input[axis], kernel[axis], stride[axis], pad[axis])
                .ok_or_else(|| TensorError::InvalidShape {
                    op,
                    detail: format!(
                        "kernel {:?} (stride {:?}, pad {:?}) does not fit input {:?}",
                        kernel, stride, pad, input
                    ),
                })?;
        }
        Ok(Self {
            channels,
            input,
            kernel,
            stride,
            pad,
            output,
        })
    }

    fn in_vol(&self) -> usize {
        self.input.iter().product()
    }

    fn out_vol(&self) -> usize {
        self.output.iter().product()
    }

    fn patch(&self) -> usize {
        self.channels * self.kernel.iter().product::<usize>()
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == [1, 1, 1] && self.stride == [1, 1, 1] && self.pad == [0, 0, 0]
    }
}

/// Valid output positions `[lo, hi)` along one axis for kernel offset `k`.
fn valid_range(out: usize, input: usize, k: usize, stride: usize, pad: usize) -> (usize, usize) {
    // need 0 <= o*stride + k - pad < input
    let lo = if k >= pad { 0 } else { (pad - k).div_ceil(stride) };
    let hi = if input + pad > k {
        ((input + pad - k).div_ceil(stride)).min(out)
    } else {
        0
    };
    (lo.min(hi), hi)
}

/// Target column-buffer size (elements) for one lowering chunk.
const CHUNK_ELEMS: usize = 1 << 16;

/// Output rows (one row = `ow` positions at fixed depth and height) per chunk.
fn rows_per_chunk(g: &Geometry) -> usize {
    let per_row = g.patch() * g.output[2];
    (CHUNK_ELEMS / per_row.max(1)).max(1)
}

/// Lowers output rows `[r0, r1)` (row index `z * oh + y`) into `cols`
/// laid out as `[patch × (r1 - r0) * ow]`.
fn im2col_rows<T: Scalar>(x: &[T], g: &Geometry, r0: usize, r1: usize, cols: &mut [T]) {
    let [id, ih, iw] = g.input;
    let [kd, kh, kw] = g.kernel;
    let [sd, sh, sw] = g.stride;
    let [pd, ph, pw] = g.pad;
    let [_, oh, ow] = g.output;
    let nc = (r1 - r0) * ow;
    let mut row = 0;
    for c in 0..g.channels {
        let xc = &x[c * id * ih * iw..(c + 1) * id * ih * iw];
        for a in 0..kd {
            for b in 0..kh {
                for e in 0..kw {
                    let (w_lo, w_hi) = valid_range(ow, iw, e, sw, pw);
                    let dst = &mut cols[row * nc..(row + 1) * nc];
                    for r in r0..r1 {
                        let (z, y) = (r / oh, r % oh);
                        let out = &mut dst[(r - r0) * ow..(r - r0 + 1) * ow];
                        let zi = (z * sd + a) as isize - pd as isize;
                        let yi = (y * sh + b) as isize - ph as isize;
                        if zi < 0 || yi < 0 || zi as usize >= id || yi as usize >= ih || w_lo >= w_hi {
                            out.fill(T::zero());
                            continue;
                        }
                        let base = (zi as usize * ih + yi as usize) * iw;
                        let src = &xc[base..base + iw];
                        out[..w_lo].fill(T::zero());
                        out[w_hi..].fill(T::zero());
                        if sw == 1 {
                            let off = w_lo + e - pw;
                            out[w_lo..w_hi].copy_from_slice(&src[off..off + (w_hi - w_lo)]);
                        } else {
                            for (xo, o) in out.iter_mut().enumerate().take(w_hi).skip(w_lo) {
                                *o = src[xo * sw + e - pw];
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// Adjoint of [`im2col_rows`]: scatters-adds `cols` back into `dx`.
fn col2im_rows<T: Scalar>(cols: &[T], g: &Geometry, r0: usize, r1: usize, dx: &mut [T]) {
    let [id, ih, iw] = g.input;
    let [kd, kh, kw] = g.kernel;
    let [sd, sh, sw] = g.stride;
    let [pd, ph, pw] = g.pad;
    let [_, oh, ow] = g.output;
    let nc = (r1 - r0) * ow;
    let mut row = 0;
    for c in 0..g.channels {
        let xc = &mut dx[c * id * ih * iw..(c + 1) * id * ih * iw];
        for a in 0..kd {
            for b in 0..kh {
                for e in 0..kw {
                    let (w_lo, w_hi) = valid_range(ow, iw, e, sw, pw);
                    let src = &cols[row * nc..(row + 1) * nc];
                    for r in r0..r1 {
                        let (z, y) = (r / oh, r % oh);
                        let zi = (z * sd + a) as isize - pd as isize;
                        let yi = (y * sh + b) as isize - ph as isize;
                        if zi < 0 || yi < 0 || zi as usize >= id || yi as usize >= ih {
                            continue;
                        }
                        let base = (zi as usize * ih + yi as usize) * iw;
                        let dst = &mut xc[base..base + iw];
                        let seg = &src[(r - r0) * ow..(r - r0 + 1) * ow];
                        for xo in w_lo..w_hi {
                            let xi = xo * sw + e - pw;
                            dst[xi] = dst[xi] + seg[xo];
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

fn conv_forward<T: Scalar>(x: &[T], w: &[T], batch: usize, filters: usize, g: &Geometry) -> Vec<T> {
    let (k, n, in_vol) = (g.patch(), g.out_vol(), g.in_vol());
    let rows = g.output[0] * g.output[1];
    let ow = g.output[2];
    let step = rows_per_chunk(g);
    let mut out = vec![T::zero(); batch * filters * n];
    let mut cols = vec![T::zero(); if g.is_pointwise() { 0 } else { k * step * ow }];
    for b in 0..batch {
        let xb = &x[b * g.channels * in_vol..(b + 1) * g.channels * in_vol];
        let ob = &mut out[b * filters * n..(b + 1) * filters * n];
        if g.is_pointwise() {
            gemm_into(w, false, xb, false, filters, k, n, T::zero(), ob);
            continue;
        }
        for r0 in (0..rows).step_by(step) {
            let r1 = (r0 + step).min(rows);
            let nc = (r1 - r0) * ow;
            im2col_rows(xb, g, r0, r1, &mut cols);
            gemm_view(
                filters,
                k,
                nc,
                (w, k as isize, 1),
                (&cols, nc as isize, 1),
                T::zero(),
                &mut ob[r0 * ow..],
                n,
            );
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn conv_backward<T: Scalar>(
    grad: &[T],
    x: &[T],
    w: &[T],
    batch: usize,
    filters: usize,
    g: &Geometry,
    need_x: bool,
    need_w: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>) {
    let (k, n, in_vol) = (g.patch(), g.out_vol(), g.in_vol());
    let rows = g.output[0] * g.output[1];
    let ow = g.output[2];
    let step = rows_per_chunk(g);
    let mut dx = need_x.then(|| vec![T::zero(); batch * g.channels * in_vol]);
    let mut dw = need_w.then(|| vec![T::zero(); filters * k]);
    let chunk = if g.is_pointwise() { 0 } else { k * step * ow };
    let mut cols = vec![T::zero(); chunk];
    let mut dcols = vec![T::zero(); if need_x { chunk } else { 0 }];
    for b in 0..batch {
        let gb = &grad[b * filters * n..(b + 1) * filters * n];
        let xb = &x[b * g.channels * in_vol..(b + 1) * g.channels * in_vol];
        if g.is_pointwise() {
            if let Some(dw) = dw.as_mut() {
                gemm_into(gb, false, xb, true, filters, n, k, T::one(), dw);
            }
            if let Some(dx) = dx.as_mut() {
                let dxb = &mut dx[b * g.channels * in_vol..(b + 1) * g.channels * in_vol];
                gemm_into(w, true, gb, false, k, filters, n, T::zero(), dxb);
            }
            continue;
        }
        for r0 in (0..rows).step_by(step) {
            let r1 = (r0 + step).min(rows);
            let nc = (r1 - r0) * ow;
            let g_chunk = &gb[r0 * ow..];
            if let Some(dw) = dw.as_mut() {
                im2col_rows(xb, g, r0, r1, &mut cols);
                // dW[F×K] += dY[F×nc] · colsᵀ[nc×K]
                gemm_view(
                    filters,
                    nc,
                    k,
                    (g_chunk, n as isize, 1),
                    (&cols, 1, nc as isize),
                    T::one(),
                    dw,
                    k,
                );
            }
            if let Some(dx) = dx.as_mut() {
                // dcols[K×nc] = Wᵀ[K×F] · dY[F×nc]
                gemm_view(
                    k,
                    filters,
                    nc,
                    (w, 1, k as isize),
                    (g_chunk, n as isize, 1),
                    T::zero(),
                    &mut dcols,
                    nc,
                );
                let dxb = &mut dx[b * g.channels * in_vol..(b + 1) * g.channels * in_vol];
                col2im_rows(&dcols, g, r0, r1, dxb);
            }
        }
    }
    (dx, dw)
}

fn build<T: Scalar>(
    op: &'static str,
    x: &Var<T>,
    w: &Var<T>,
    g: Geometry,
    batch: usize,
    filters: usize,
    out_shape: Vec<usize>,
) -> Result<Var<T>> {
    let out = conv_forward(x.data(), w.data(), batch, filters, &g);
    Var::from_op(
        op,
        Tensor::from_parts(out_shape, out),
        vec![x.clone(), w.clone()],
        Box::new(move |grad, p, need| {
            let (dx, dw) = conv_backward(
                grad.data(),
                p[0].data(),
                p[1].data(),
                batch,
                filters,
                &g,
                need[0],
                need[1],
            );
            vec![
                dx.map(|d| Tensor::from_parts(p[0].shape().to_vec(), d)),
                dw.map(|d| Tensor::from_parts(p[1].shape().to_vec(), d)),
            ]
        }),
    )
}

/// Cross-correlation of `x: [B, C, D, H, W]` with `w: [F, C, kd, kh, kw]`.
pub fn conv3d<T: Scalar>(
    x: &Var<T>,
    w: &Var<T>,
    stride: [usize; 3],
    padding: [usize; 3],
) -> Result<Var<T>> {
    let (&[batch, channels, d, h, wd], &[filters, wc, kd, kh, kw]) = (x.shape(), w.shape()) else {
        return Err(TensorError::ShapeMismatch {
            op: "conv3d",
            lhs: x.shape().to_vec(),
            rhs: w.shape().to_vec(),
        });
    };
    if channels != wc {
        return Err(TensorError::ShapeMismatch {
            op: "conv3d",
            lhs: x.shape().to_vec(),
            rhs: w.shape().to_vec(),
        });
    }
    let g = Geometry::new("conv3d", channels, [d, h, wd], [kd, kh, kw], stride, padding)?;
    let [od, oh, ow] = g.output;
    build("conv3d", x, w, g, batch, filters, vec![batch, filters, od, oh, ow])
}

/// Cross-correlation of `x: [B, C, H, W]` with `w: [F, C, kh, kw]`.
pub fn conv2d<T: Scalar>(
    x: &Var<T>,
    w: &Var<T>,
    stride: [usize; 2],
    padding: [usize; 2],
) -> Result<Var<T>> {
    let (&[batch, channels, h, wd], &[filters, wc, kh, kw]) = (x.shape(), w.shape()) else {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d",
            lhs: x.shape().to_vec(),
            rhs: w.shape().to_vec(),
        });
    };
    if channels != wc {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d",
            lhs: x.shape().to_vec(),
            rhs: w.shape().to_vec(),
        });
    }
    let g = Geometry::new(
        "conv2d",
        channels,
        [1, h, wd],
        [1, kh, kw],
        [1, stride[0], stride[1]],
        [0, padding[0], padding[1]],
    )?;
    let [_, oh, ow] = g.output;
    build("conv2d", x, w, g, batch, filters, vec![batch, filters, oh, ow])
}
