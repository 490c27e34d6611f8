use crate::error::{Result, TensorError};
use crate::graph::Var;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn same_shape<T: Scalar>(op: &'static str, a: &Var<T>, b: &Var<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(TensorError::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

fn zip_map<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    Tensor::from_parts(
        a.shape().to_vec(),
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
    )
}

/// Numerically stable logistic function.
#[inline]
pub fn stable_sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl<T: Scalar> Var<T> {
    pub fn add(&self, other: &Var<T>) -> Result<Var<T>> {
        same_shape("add", self, other)?;
        let value = zip_map(self.value(), other.value(), |x, y| x + y);
        Var::from_op(
            "add",
            value,
            vec![self.clone(), other.clone()],
            Box::new(|g, _, need| {
                vec![need[0].then(|| g.clone()), need[1].then(|| g.clone())]
            }),
        )
    }

    pub fn sub(&self, other: &Var<T>) -> Result<Var<T>> {
        same_shape("sub", self, other)?;
        let value = zip_map(self.value(), other.value(), |x, y| x - y);
        Var::from_op(
            "sub",
            value,
            vec![self.clone(), other.clone()],
            Box::new(|g, _, need| {
                vec![need[0].then(|| g.clone()), need[1].then(|| g.map(|v| -v))]
            }),
        )
    }

    pub fn mul(&self, other: &Var<T>) -> Result<Var<T>> {
        same_shape("mul", self, other)?;
        let value = zip_map(self.value(), other.value(), |x, y| x * y);
        Var::from_op(
            "mul",
            value,
            vec![self.clone(), other.clone()],
            Box::new(|g, p, need| {
                vec![
                    need[0].then(|| zip_map(g, p[1].value(), |g, y| g * y)),
                    need[1].then(|| zip_map(g, p[0].value(), |g, x| g * x)),
                ]
            }),
        )
    }

    pub fn scale(&self, c: T) -> Result<Var<T>> {
        let value = self.value().map(|v| v * c);
        Var::from_op(
            "scale",
            value,
            vec![self.clone()],
            Box::new(move |g, _, _| vec![Some(g.map(|v| v * c))]),
        )
    }

    pub fn add_scalar(&self, c: T) -> Result<Var<T>> {
        let value = self.value().map(|v| v + c);
        Var::from_op(
            "add_scalar",
            value,
            vec![self.clone()],
            Box::new(|g, _, _| vec![Some(g.clone())]),
        )
    }

    pub fn relu(&self) -> Result<Var<T>> {
        let value = self.value().map(|v| if v > T::zero() { v } else { T::zero() });
        Var::from_op(
            "relu",
            value,
            vec![self.clone()],
            Box::new(|g, p, _| {
                vec![Some(zip_map(g, p[0].value(), |g, x| {
                    if x > T::zero() {
                        g
                    } else {
                        T::zero()
                    }
                }))]
            }),
        )
    }

    pub fn sigmoid(&self) -> Result<Var<T>> {
        let value = self.value().map(stable_sigmoid);
        let saved = value.clone();
        Var::from_op(
            "sigmoid",
            value,
            vec![self.clone()],
            Box::new(move |g, _, _| {
                vec![Some(zip_map(g, &saved, |g, s| g * s * (T::one() - s)))]
            }),
        )
    }

    pub fn exp(&self) -> Result<Var<T>> {
        let value = self.value().map(T::exp);
        let saved = value.clone();
        Var::from_op(
            "exp",
            value,
            vec![self.clone()],
            Box::new(move |g, _, _| vec![Some(zip_map(g, &saved, |g, e| g * e))]),
        )
    }

    /// Natural log; every input must be strictly positive.
    pub fn log(&self) -> Result<Var<T>> {
        if let Some(bad) = self.data().iter().find(|&&v| v <= T::zero()) {
            return Err(TensorError::Domain {
                op: "log",
                detail: format!("non-positive input {bad}"),
            });
        }
        let value = self.value().map(T::ln);
        Var::from_op(
            "log",
            value,
            vec![self.clone()],
            Box::new(|g, p, _| vec![Some(zip_map(g, p[0].value(), |g, x| g / x))]),
        )
    }

    /// Clamps into `[lo, hi]`; the gradient is zero where clamping applied.
    pub fn clamp(&self, lo: T, hi: T) -> Result<Var<T>> {
        if lo > hi {
            return Err(TensorError::InvalidParam {
                op: "clamp",
                detail: format!("lo {lo} > hi {hi}"),
            });
        }
        let value = self.value().map(|v| v.max(lo).min(hi));
        Var::from_op(
            "clamp",
            value,
            vec![self.clone()],
            Box::new(move |g, p, _| {
                vec![Some(zip_map(g, p[0].value(), |g, x| {
                    if x < lo || x > hi {
                        T::zero()
                    } else {
                        g
                    }
                }))]
            }),
        )
    }

    /// Sum of all elements as a shape-`[1]` tensor.
    pub fn sum(&self) -> Result<Var<T>> {
        let value = Tensor::scalar(self.value().sum());
        let shape = self.shape().to_vec();
        Var::from_op(
            "sum",
            value,
            vec![self.clone()],
            Box::new(move |g, _, _| vec![Some(Tensor::full(&shape, g.item()))]),
        )
    }

    pub fn mean(&self) -> Result<Var<T>> {
        let n = T::from_usize(self.value().len()).expect("length fits");
        self.sum()?.scale(T::one() / n)
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<T>> {
        let value = self.value().clone().reshape(shape)?;
        let orig = self.shape().to_vec();
        Var::from_op(
            "reshape",
            value,
            vec![self.clone()],
            Box::new(move |g, _, _| {
                vec![Some(g.clone().reshape(&orig).expect("same element count"))]
            }),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(shape: &[usize], data: &[f64]) -> Var<f64> {
        Var::param(Tensor::from_f64(shape, data).unwrap())
    }

    #[test]
    fn relu_sign_cases() {
        let x = v(&[3], &[-1.0, 0.0, 2.0]);
        assert_eq!(x.relu().unwrap().data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn sigmoid_at_zero_and_extremes() {
        let x = v(&[3], &[0.0, 500.0, -500.0]);
        let s = x.sigmoid().unwrap();
        assert_eq!(s.data()[0], 0.5);
        assert!((s.data()[1] - 1.0).abs() < 1e-12);
        assert!(s.data()[2].abs() < 1e-12);
        let xf = Var::<f32>::constant(Tensor::from_f64(&[2], &[500.0, -500.0]).unwrap());
        let sf = xf.sigmoid().unwrap();
        assert_eq!(sf.data()[0], 1.0);
        assert!(sf.data()[1] >= 0.0);
    }

    #[test]
    fn log_rejects_non_positive() {
        let x = v(&[2], &[1.0, 0.0]);
        assert!(matches!(x.log(), Err(TensorError::Domain { .. })));
    }

    #[test]
    fn square_gradient() {
        let x = v(&[1], &[3.0]);
        let loss = x.mul(&x).unwrap();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap().data(), &[6.0]);
    }

    #[test]
    fn sigmoid_sum_gradient_at_zero() {
        let x = v(&[4], &[0.0; 4]);
        x.sigmoid().unwrap().sum().unwrap().backward().unwrap();
        assert_eq!(x.grad().unwrap().data(), &[0.25; 4]);
    }

    #[test]
    fn repeated_backward_accumulates() {
        let x = v(&[1], &[2.0]);
        let loss = x.scale(3.0).unwrap();
        loss.backward().unwrap();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap().data(), &[6.0]);
        x.zero_grad();
        assert!(x.grad().is_none());
    }

    #[test]
    fn non_scalar_backward_is_rejected() {
        let x = v(&[2], &[1.0, 2.0]);
        assert!(matches!(x.relu().unwrap().backward(), Err(TensorError::NotScalar(_))));
    }

    #[test]
    fn overflow_is_surfaced() {
        let x = v(&[1], &[1000.0]);
        assert!(matches!(x.exp(), Err(TensorError::NonFinite { op: "exp" })));
    }

    #[test]
    fn shared_input_gets_both_paths() {
        // loss = x*x + 2x at x = 1.5 -> 2x + 2 = 5
        let x = v(&[1], &[1.5]);
        let loss = x.mul(&x).unwrap().add(&x.scale(2.0).unwrap()).unwrap();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap().data(), &[5.0]);
    }
}
