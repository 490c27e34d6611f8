use crate::error::{Result, TensorError};
use crate::graph::Var;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Strided matrix view: (data, row stride, column stride).
pub(crate) type View<'a, T> = (&'a [T], isize, isize);

/// `c = a·b + beta·c` with `a: [m×k]`, `b: [k×n]` given as strided views and
/// `c` row-major with row stride `ldc`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm_view<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: View<'_, T>,
    b: View<'_, T>,
    beta: T,
    c: &mut [T],
    ldc: usize,
) {
    let span = |rows: usize, cols: usize, rs: isize, cs: isize| {
        if rows == 0 || cols == 0 {
            0
        } else {
            (rows - 1) * rs as usize + (cols - 1) * cs as usize + 1
        }
    };
    assert!(a.0.len() >= span(m, k, a.1, a.2), "gemm: lhs view out of bounds");
    assert!(b.0.len() >= span(k, n, b.1, b.2), "gemm: rhs view out of bounds");
    assert!(c.len() >= span(m, n, ldc as isize, 1), "gemm: output view out of bounds");
    // SAFETY: the asserts above bound every index reached by these strides.
    unsafe {
        T::gemm(
            m,
            k,
            n,
            T::one(),
            a.0.as_ptr(),
            a.1,
            a.2,
            b.0.as_ptr(),
            b.1,
            b.2,
            beta,
            c.as_mut_ptr(),
            ldc as isize,
            1,
        );
    }
}

/// Row-major `[m×k]·[k×n]`, optionally reading either operand transposed.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm_into<T: Scalar>(
    a: &[T],
    a_t: bool,
    b: &[T],
    b_t: bool,
    m: usize,
    k: usize,
    n: usize,
    beta: T,
    out: &mut [T],
) {
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    gemm_view(m, k, n, (a, rsa, csa), (b, rsb, csb), beta, out, n);
}

fn matrix_dims(op: &'static str, t: &Tensor<impl Scalar>) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(TensorError::InvalidShape {
            op,
            detail: format!("expected a matrix, got shape {s:?}"),
        }),
    }
}

/// Matrix product of `[m×k]` and `[k×n]`.
pub fn matmul<T: Scalar>(a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
    let (m, k) = matrix_dims("matmul", a.value())?;
    let (k2, n) = matrix_dims("matmul", b.value())?;
    if k != k2 {
        return Err(TensorError::ShapeMismatch {
            op: "matmul",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let mut out = vec![T::zero(); m * n];
    gemm_into(a.data(), false, b.data(), false, m, k, n, T::zero(), &mut out);
    Var::from_op(
        "matmul",
        Tensor::from_parts(vec![m, n], out),
        vec![a.clone(), b.clone()],
        Box::new(move |g, p, need| {
            let da = need[0].then(|| {
                let mut d = vec![T::zero(); m * k];
                gemm_into(g.data(), false, p[1].data(), true, m, n, k, T::zero(), &mut d);
                Tensor::from_parts(vec![m, k], d)
            });
            let db = need[1].then(|| {
                let mut d = vec![T::zero(); k * n];
                gemm_into(p[0].data(), true, g.data(), false, k, m, n, T::zero(), &mut d);
                Tensor::from_parts(vec![k, n], d)
            });
            vec![da, db]
        }),
    )
}

/// `x·w + b` with `x: [B, in]`, `w: [in, out]`, `b: [out]`.
pub fn linear<T: Scalar>(x: &Var<T>, w: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
    let (batch, fan_in) = matrix_dims("linear", x.value())?;
    let (w_in, fan_out) = matrix_dims("linear", w.value())?;
    if fan_in != w_in || b.shape() != [fan_out] {
        return Err(TensorError::ShapeMismatch {
            op: "linear",
            lhs: x.shape().to_vec(),
            rhs: [w.shape(), b.shape()].concat(),
        });
    }
    let mut out: Vec<T> = b.data().iter().copied().cycle().take(batch * fan_out).collect();
    gemm_into(x.data(), false, w.data(), false, batch, fan_in, fan_out, T::one(), &mut out);
    Var::from_op(
        "linear",
        Tensor::from_parts(vec![batch, fan_out], out),
        vec![x.clone(), w.clone(), b.clone()],
        Box::new(move |g, p, need| {
            let dx = need[0].then(|| {
                let mut d = vec![T::zero(); batch * fan_in];
                gemm_into(g.data(), false, p[1].data(), true, batch, fan_out, fan_in, T::zero(), &mut d);
                Tensor::from_parts(vec![batch, fan_in], d)
            });
            let dw = need[1].then(|| {
                let mut d = vec![T::zero(); fan_in * fan_out];
                gemm_into(p[0].data(), true, g.data(), false, fan_in, batch, fan_out, T::zero(), &mut d);
                Tensor::from_parts(vec![fan_in, fan_out], d)
            });
            let db = need[2].then(|| {
                let mut d = vec![T::zero(); fan_out];
                for row in g.data().chunks_exact(fan_out) {
                    for (acc, &v) in d.iter_mut().zip(row) {
                        *acc = *acc + v;
                    }
                }
                Tensor::from_parts(vec![fan_out], d)
            });
            vec![dx, dw, db]
        }),
    )
}

fn transpose_data<T: Scalar>(data: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = data[r * cols + c];
        }
    }
    out
}

pub fn transpose<T: Scalar>(x: &Var<T>) -> Result<Var<T>> {
    let (r, c) = matrix_dims("transpose", x.value())?;
    Var::from_op(
        "transpose",
        Tensor::from_parts(vec![c, r], transpose_data(x.data(), r, c)),
        vec![x.clone()],
        Box::new(move |g, _, _| {
            vec![Some(Tensor::from_parts(vec![r, c], transpose_data(g.data(), c, r)))]
        }),
    )
}

/// Splits a shape around `axis` into (outer, extent, inner) element counts.
pub(crate) fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn check_axis(op: &'static str, shape: &[usize], axis: usize) -> Result<()> {
    if axis >= shape.len() {
        return Err(TensorError::InvalidShape {
            op,
            detail: format!("axis {axis} out of range for shape {shape:?}"),
        });
    }
    Ok(())
}

/// Joins tensors along `axis`; all other extents must match.
pub fn concat<T: Scalar>(parts: &[Var<T>], axis: usize) -> Result<Var<T>> {
    let first = parts.first().ok_or_else(|| TensorError::InvalidShape {
        op: "concat",
        detail: "no parts".into(),
    })?;
    check_axis("concat", first.shape(), axis)?;
    for p in &parts[1..] {
        let ok = p.shape().len() == first.shape().len()
            && p.shape().iter().zip(first.shape()).enumerate().all(|(i, (a, b))| i == axis || a == b);
        if !ok {
            return Err(TensorError::ShapeMismatch {
                op: "concat",
                lhs: first.shape().to_vec(),
                rhs: p.shape().to_vec(),
            });
        }
    }
    let extents: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
    let total: usize = extents.iter().sum();
    let (outer, _, inner) = axis_split(first.shape(), axis);
    let mut shape = first.shape().to_vec();
    shape[axis] = total;
    let mut out = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for (p, &e) in parts.iter().zip(&extents) {
            out.extend_from_slice(&p.data()[o * e * inner..(o + 1) * e * inner]);
        }
    }
    Var::from_op(
        "concat",
        Tensor::from_parts(shape, out),
        parts.to_vec(),
        Box::new(move |g, p, need| {
            let mut grads: Vec<Vec<T>> = extents
                .iter()
                .zip(need)
                .map(|(&e, &n)| if n { Vec::with_capacity(outer * e * inner) } else { Vec::new() })
                .collect();
            let gd = g.data();
            let mut pos = 0;
            for _ in 0..outer {
                for (i, &e) in extents.iter().enumerate() {
                    if need[i] {
                        grads[i].extend_from_slice(&gd[pos..pos + e * inner]);
                    }
                    pos += e * inner;
                }
            }
            grads
                .into_iter()
                .zip(p)
                .zip(need)
                .map(|((d, part), &n)| n.then(|| Tensor::from_parts(part.shape().to_vec(), d)))
                .collect()
        }),
    )
}

/// Slice `[start, start + len)` along `axis`.
pub fn narrow<T: Scalar>(x: &Var<T>, axis: usize, start: usize, len: usize) -> Result<Var<T>> {
    check_axis("narrow", x.shape(), axis)?;
    let (outer, extent, inner) = axis_split(x.shape(), axis);
    if len == 0 || start + len > extent {
        return Err(TensorError::InvalidShape {
            op: "narrow",
            detail: format!("range {start}..{} outside extent {extent}", start + len),
        });
    }
    let mut shape = x.shape().to_vec();
    shape[axis] = len;
    let mut out = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = (o * extent + start) * inner;
        out.extend_from_slice(&x.data()[base..base + len * inner]);
    }
    let in_shape = x.shape().to_vec();
    Var::from_op(
        "narrow",
        Tensor::from_parts(shape, out),
        vec![x.clone()],
        Box::new(move |g, _, _| {
            let mut d = Tensor::zeros(&in_shape);
            let dd = d.data_mut();
            for o in 0..outer {
                let base = (o * extent + start) * inner;
                dd[base..base + len * inner]
                    .copy_from_slice(&g.data()[o * len * inner..(o + 1) * len * inner]);
            }
            vec![Some(d)]
        }),
    )
}

/// Softmax along `axis` with max subtraction.
pub fn softmax<T: Scalar>(x: &Var<T>, axis: usize) -> Result<Var<T>> {
    check_axis("softmax", x.shape(), axis)?;
    let (outer, extent, inner) = axis_split(x.shape(), axis);
    let xd = x.data();
    let mut out = vec![T::zero(); xd.len()];
    for o in 0..outer {
        for i in 0..inner {
            let idx = |j: usize| (o * extent + j) * inner + i;
            let max = (0..extent).map(|j| xd[idx(j)]).fold(T::neg_infinity(), T::max);
            let mut total = T::zero();
            for j in 0..extent {
                let e = (xd[idx(j)] - max).exp();
                out[idx(j)] = e;
                total = total + e;
            }
            for j in 0..extent {
                out[idx(j)] = out[idx(j)] / total;
            }
        }
    }
    let value = Tensor::from_parts(x.shape().to_vec(), out);
    let saved = value.clone();
    Var::from_op(
        "softmax",
        value,
        vec![x.clone()],
        Box::new(move |g, _, _| {
            let s = saved.data();
            let gd = g.data();
            let mut d = vec![T::zero(); s.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let idx = |j: usize| (o * extent + j) * inner + i;
                    let dot: T = (0..extent).map(|j| gd[idx(j)] * s[idx(j)]).sum();
                    for j in 0..extent {
                        d[idx(j)] = s[idx(j)] * (gd[idx(j)] - dot);
                    }
                }
            }
            vec![Some(Tensor::from_parts(saved.shape().to_vec(), d))]
        }),
    )
}
