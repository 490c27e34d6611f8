use crate::error::{Result, TensorError};
use crate::graph::Var;
use crate::ops::conv::conv_out_extent;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Splits `[B, C, spatial...]` into (planes, spatial extents padded to 3-D).
fn planes_and_extents(op: &'static str, shape: &[usize], spatial_rank: usize) -> Result<(usize, [usize; 3])> {
    if shape.len() != spatial_rank + 2 {
        return Err(TensorError::InvalidShape {
            op,
            detail: format!("expected rank {}, got shape {shape:?}", spatial_rank + 2),
        });
    }
    let planes = shape[0] * shape[1];
    let mut ext = [1; 3];
    ext[3 - spatial_rank..].copy_from_slice(&shape[2..]);
    Ok((planes, ext))
}

fn max_pool_nd<T: Scalar>(
    op: &'static str,
    x: &Var<T>,
    spatial_rank: usize,
    kernel: [usize; 3],
    stride: [usize; 3],
    pad: [usize; 3],
) -> Result<Var<T>> {
    let (planes, ext) = planes_and_extents(op, x.shape(), spatial_rank)?;
    let mut out_ext = [0; 3];
    for a in 0..3 {
        if kernel[a] > ext[a] + 2 * pad[a] || 2 * pad[a] > kernel[a] {
            return Err(TensorError::InvalidShape {
                op,
                detail: format!("window {kernel:?} with padding {pad:?} exceeds extents {ext:?}"),
            });
        }
        out_ext[a] = conv_out_extent(ext[a], kernel[a], stride[a], pad[a]).ok_or_else(|| {
            TensorError::InvalidShape {
                op,
                detail: format!("window {kernel:?} exceeds extents {ext:?}"),
            }
        })?;
    }
    let in_vol: usize = ext.iter().product();
    let out_vol: usize = out_ext.iter().product();
    let xd = x.data();
    let mut out = Vec::with_capacity(planes * out_vol);
    let mut argmax = Vec::with_capacity(planes * out_vol);
    for pl in 0..planes {
        let base = pl * in_vol;
        for z in 0..out_ext[0] {
            for y in 0..out_ext[1] {
                for xo in 0..out_ext[2] {
                    let mut best = T::neg_infinity();
                    let mut best_idx = usize::MAX;
                    for a in 0..kernel[0] {
                        let zi = (z * stride[0] + a) as isize - pad[0] as isize;
                        if zi < 0 || zi as usize >= ext[0] {
                            continue;
                        }
                        for b in 0..kernel[1] {
                            let yi = (y * stride[1] + b) as isize - pad[1] as isize;
                            if yi < 0 || yi as usize >= ext[1] {
                                continue;
                            }
                            for e in 0..kernel[2] {
                                let xi = (xo * stride[2] + e) as isize - pad[2] as isize;
                                if xi < 0 || xi as usize >= ext[2] {
                                    continue;
                                }
                                let idx = base + (zi as usize * ext[1] + yi as usize) * ext[2] + xi as usize;
                                // strict > keeps the lowest flat index on ties
                                if best_idx == usize::MAX || xd[idx] > best {
                                    best = xd[idx];
                                    best_idx = idx;
                                }
                            }
                        }
                    }
                    out.push(best);
                    argmax.push(best_idx);
                }
            }
        }
    }
    let mut shape = x.shape()[..2].to_vec();
    shape.extend_from_slice(&out_ext[3 - spatial_rank..]);
    let in_shape = x.shape().to_vec();
    Var::from_op(
        op,
        Tensor::from_parts(shape, out),
        vec![x.clone()],
        Box::new(move |g, _, _| {
            let mut d = Tensor::zeros(&in_shape);
            let dd = d.data_mut();
            for (&i, &gv) in argmax.iter().zip(g.data()) {
                dd[i] = dd[i] + gv;
            }
            vec![Some(d)]
        }),
    )
}

/// Max pooling over `[B, C, H, W]`.
pub fn max_pool2d<T: Scalar>(x: &Var<T>, kernel: [usize; 2], stride: [usize; 2]) -> Result<Var<T>> {
    max_pool_nd(
        "max_pool2d",
        x,
        2,
        [1, kernel[0], kernel[1]],
        [1, stride[0], stride[1]],
        [0, 0, 0],
    )
}

/// Max pooling over `[B, C, D, H, W]`; padded cells never win.
pub fn max_pool3d<T: Scalar>(
    x: &Var<T>,
    kernel: [usize; 3],
    stride: [usize; 3],
    padding: [usize; 3],
) -> Result<Var<T>> {
    max_pool_nd("max_pool3d", x, 3, kernel, stride, padding)
}

/// Bin `i` of `out` over an axis of length `n`: `[floor(i·n/out), ceil((i+1)·n/out))`.
pub fn adaptive_bin(i: usize, n: usize, out: usize) -> (usize, usize) {
    ((i * n) / out, ((i + 1) * n).div_ceil(out))
}

fn adaptive_avg_nd<T: Scalar>(op: &'static str, x: &Var<T>, spatial_rank: usize, target: [usize; 3]) -> Result<Var<T>> {
    let (planes, ext) = planes_and_extents(op, x.shape(), spatial_rank)?;
    if target.iter().any(|&t| t == 0) {
        return Err(TensorError::InvalidParam {
            op,
            detail: format!("target {target:?} must be positive"),
        });
    }
    let in_vol: usize = ext.iter().product();
    let out_vol: usize = target.iter().product();
    // per output cell: flat input offsets inside one plane
    let mut cells: Vec<Vec<usize>> = Vec::with_capacity(out_vol);
    for z in 0..target[0] {
        let (z0, z1) = adaptive_bin(z, ext[0], target[0]);
        for y in 0..target[1] {
            let (y0, y1) = adaptive_bin(y, ext[1], target[1]);
            for xo in 0..target[2] {
                let (x0, x1) = adaptive_bin(xo, ext[2], target[2]);
                let mut idx = Vec::with_capacity((z1 - z0) * (y1 - y0) * (x1 - x0));
                for zi in z0..z1 {
                    for yi in y0..y1 {
                        for xi in x0..x1 {
                            idx.push((zi * ext[1] + yi) * ext[2] + xi);
                        }
                    }
                }
                cells.push(idx);
            }
        }
    }
    let xd = x.data();
    let mut out = Vec::with_capacity(planes * out_vol);
    for pl in 0..planes {
        let plane = &xd[pl * in_vol..(pl + 1) * in_vol];
        for idx in &cells {
            let s: T = idx.iter().map(|&i| plane[i]).sum();
            out.push(s / T::from_usize(idx.len()).expect("count"));
        }
    }
    let mut shape = x.shape()[..2].to_vec();
    shape.extend_from_slice(&target[3 - spatial_rank..]);
    let in_shape = x.shape().to_vec();
    Var::from_op(
        op,
        Tensor::from_parts(shape, out),
        vec![x.clone()],
        Box::new(move |g, _, _| {
            let mut d = Tensor::zeros(&in_shape);
            let dd = d.data_mut();
            for pl in 0..planes {
                for (c, idx) in cells.iter().enumerate() {
                    let share = g.data()[pl * out_vol + c] / T::from_usize(idx.len()).expect("count");
                    for &i in idx {
                        dd[pl * in_vol + i] = dd[pl * in_vol + i] + share;
                    }
                }
            }
            vec![Some(d)]
        }),
    )
}

pub fn adaptive_avg_pool2d<T: Scalar>(x: &Var<T>, target: [usize; 2]) -> Result<Var<T>> {
    adaptive_avg_nd("adaptive_avg_pool2d", x, 2, [1, target[0], target[1]])
}

pub fn adaptive_avg_pool3d<T: Scalar>(x: &Var<T>, target: [usize; 3]) -> Result<Var<T>> {
    adaptive_avg_nd("adaptive_avg_pool3d", x, 3, target)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(shape: &[usize], data: &[f64]) -> Var<f64> {
        Var::param(Tensor::from_f64(shape, data).unwrap())
    }

    #[test]
    fn single_window_max_and_global_mean() {
        let x = p(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(max_pool2d(&x, [2, 2], [2, 2]).unwrap().data(), &[4.0]);
        assert_eq!(adaptive_avg_pool2d(&x, [1, 1]).unwrap().data(), &[2.5]);
    }

    #[test]
    fn max_window_exceeding_extent_errors() {
        let x = p(&[1, 1, 2, 2], &[0.0; 4]);
        assert!(max_pool2d(&x, [3, 3], [1, 1]).is_err());
    }

    #[test]
    fn ties_route_to_lowest_index() {
        let x = p(&[1, 1, 2, 2], &[5.0, 5.0, 5.0, 5.0]);
        max_pool2d(&x, [2, 2], [2, 2]).unwrap().sum().unwrap().backward().unwrap();
        assert_eq!(x.grad().unwrap().data(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn adaptive_bins_from_mel_extent() {
        let x = Var::<f64>::constant(Tensor::from_f64(&[1, 1, 80, 601], &(0..80 * 601).map(|i| i as f64).collect::<Vec<_>>()).unwrap());
        let y = adaptive_avg_pool2d(&x, [4, 4]).unwrap();
        assert_eq!(y.shape(), &[1, 1, 4, 4]);
        // explicit index ranges: rows 20 each; columns [0,151) [150,301) [300,451) [450,601)
        let cols = [(0, 151), (150, 301), (300, 451), (450, 601)];
        for r in 0..4 {
            for (ci, &(c0, c1)) in cols.iter().enumerate() {
                let mut s = 0.0;
                let mut n = 0.0;
                for row in r * 20..(r + 1) * 20 {
                    for col in c0..c1 {
                        s += (row * 601 + col) as f64;
                        n += 1.0;
                    }
                }
                assert!((y.value().at(&[0, 0, r, ci]) - s / n).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn padded_max_pool_keeps_extent() {
        let x = p(&[1, 1, 2, 3, 3], &(0..18).map(|i| i as f64).collect::<Vec<_>>());
        let y = max_pool3d(&x, [3, 3, 3], [1, 1, 1], [1, 1, 1]).unwrap();
        assert_eq!(y.shape(), x.shape());
        assert_eq!(y.data()[0], 13.0);
    }
}
