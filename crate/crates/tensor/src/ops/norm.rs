use crate::error::{Result, TensorError};
use crate::graph::Var;
use crate::rng::Rng;
use crate::scalar::{lit, Scalar};
use crate::tensor::Tensor;

/// Whether layers use batch statistics and stochastic regularization.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Running statistics owned by one batch-norm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Tensor<T>,
    pub var: Tensor<T>,
}

impl<T: Scalar> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: Tensor::zeros(&[channels]),
            var: Tensor::ones(&[channels]),
        }
    }
}

/// Batch normalization over the channel axis (axis 1) of `[B, C, ...]`.
///
/// Train mode normalizes with biased batch statistics and folds the
/// unbiased variance into `running`; eval mode reads `running` only.
pub fn batch_norm<T: Scalar>(
    x: &Var<T>,
    gamma: &Var<T>,
    beta: &Var<T>,
    running: &mut RunningStats<T>,
    mode: Mode,
    eps: f64,
    momentum: f64,
) -> Result<Var<T>> {
    let shape = x.shape().to_vec();
    if shape.len() < 2 {
        return Err(TensorError::InvalidShape {
            op: "batch_norm",
            detail: format!("expected [B, C, ...], got {shape:?}"),
        });
    }
    let (batch, channels) = (shape[0], shape[1]);
    let spatial: usize = shape[2..].iter().product();
    if gamma.shape() != [channels] || beta.shape() != [channels] || running.mean.shape() != [channels] {
        return Err(TensorError::ShapeMismatch {
            op: "batch_norm",
            lhs: shape,
            rhs: gamma.shape().to_vec(),
        });
    }
    let count = batch * spatial;
    let eps_t: T = lit(eps);
    let xd = x.data();
    let at = move |b: usize, c: usize| (b * channels + c) * spatial;

    let (mean, var) = match mode {
        Mode::Train => {
            let mut mean = vec![T::zero(); channels];
            let mut var = vec![T::zero(); channels];
            for c in 0..channels {
                let mut s = 0.0f64;
                for b in 0..batch {
                    s += xd[at(b, c)..at(b, c) + spatial].iter().map(|v| v.to_f64().unwrap()).sum::<f64>();
                }
                let m = s / count as f64;
                let mut ss = 0.0f64;
                for b in 0..batch {
                    ss += xd[at(b, c)..at(b, c) + spatial]
                        .iter()
                        .map(|v| {
                            let d = v.to_f64().unwrap() - m;
                            d * d
                        })
                        .sum::<f64>();
                }
                let v = ss / count as f64;
                mean[c] = lit(m);
                var[c] = lit(v);
                let unbiased = if count > 1 { ss / (count - 1) as f64 } else { v };
                let rm = &mut running.mean.data_mut()[c];
                *rm = lit::<T>(1.0 - momentum) * *rm + lit::<T>(momentum * m);
                let rv = &mut running.var.data_mut()[c];
                *rv = lit::<T>(1.0 - momentum) * *rv + lit::<T>(momentum * unbiased);
            }
            (mean, var)
        }
        Mode::Eval => (running.mean.data().to_vec(), running.var.data().to_vec()),
    };
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps_t).sqrt()).collect();

    let mut xhat = vec![T::zero(); xd.len()];
    let mut out = vec![T::zero(); xd.len()];
    let (gd, bd) = (gamma.data(), beta.data());
    for b in 0..batch {
        for c in 0..channels {
            let r = at(b, c)..at(b, c) + spatial;
            for ((h, o), &v) in xhat[r.clone()].iter_mut().zip(&mut out[r.clone()]).zip(&xd[r]) {
                *h = (v - mean[c]) * inv_std[c];
                *o = gd[c] * *h + bd[c];
            }
        }
    }

    Var::from_op(
        "batch_norm",
        Tensor::from_parts(shape.clone(), out),
        vec![x.clone(), gamma.clone(), beta.clone()],
        Box::new(move |g, p, need| {
            let gdat = g.data();
            let gamma = p[1].data();
            let mut dgamma = vec![T::zero(); channels];
            let mut dbeta = vec![T::zero(); channels];
            for b in 0..batch {
                for c in 0..channels {
                    let r = at(b, c)..at(b, c) + spatial;
                    for (&dy, &h) in gdat[r.clone()].iter().zip(&xhat[r]) {
                        dgamma[c] = dgamma[c] + dy * h;
                        dbeta[c] = dbeta[c] + dy;
                    }
                }
            }
            let dx = need[0].then(|| {
                let mut dx = vec![T::zero(); gdat.len()];
                let m = T::from_usize(count).expect("count");
                for c in 0..channels {
                    let k = gamma[c] * inv_std[c];
                    for b in 0..batch {
                        let r = at(b, c)..at(b, c) + spatial;
                        for ((d, &dy), &h) in dx[r.clone()].iter_mut().zip(&gdat[r.clone()]).zip(&xhat[r]) {
                            *d = match mode {
                                // dxhat = dy·γ; dx = invstd/m · (m·dxhat − Σdxhat − xhat·Σ(dxhat·xhat))
                                Mode::Train => k * (dy - dbeta[c] / m - h * dgamma[c] / m),
                                Mode::Eval => k * dy,
                            };
                        }
                    }
                }
                Tensor::from_parts(shape.clone(), dx)
            });
            vec![
                dx,
                need[1].then(|| Tensor::from_parts(vec![channels], dgamma)),
                need[2].then(|| Tensor::from_parts(vec![channels], dbeta)),
            ]
        }),
    )
}

/// Inverted dropout: in train mode each element is zeroed with probability
/// `p` and survivors are scaled by `1/(1-p)`; eval mode is the identity.
pub fn dropout<T: Scalar>(x: &Var<T>, p: f64, mode: Mode, rng: &mut Rng) -> Result<Var<T>> {
    if !(0.0..1.0).contains(&p) {
        return Err(TensorError::InvalidParam {
            op: "dropout",
            detail: format!("probability {p} outside [0, 1)"),
        });
    }
    if mode == Mode::Eval || p == 0.0 {
        return Ok(x.clone());
    }
    let keep_scale: T = lit(1.0 / (1.0 - p));
    let mask: Vec<T> = (0..x.value().len())
        .map(|_| if rng.uniform() < p { T::zero() } else { keep_scale })
        .collect();
    let out = x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
    Var::from_op(
        "dropout",
        Tensor::from_parts(x.shape().to_vec(), out),
        vec![x.clone()],
        Box::new(move |g, _, _| {
            vec![Some(Tensor::from_parts(
                g.shape().to_vec(),
                g.data().iter().zip(&mask).map(|(&d, &m)| d * m).collect(),
            ))]
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn affine(c: usize) -> (Var<f64>, Var<f64>) {
        (Var::param(Tensor::ones(&[c])), Var::param(Tensor::zeros(&[c])))
    }

    #[test]
    fn constant_input_normalizes_to_zero() {
        let x = Var::constant(Tensor::full(&[1, 2, 3], 4.0));
        let (g, b) = affine(2);
        let mut rs = RunningStats::new(2);
        let y = batch_norm(&x, &g, &b, &mut rs, Mode::Train, BN_EPS, BN_MOMENTUM).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
        // momentum 0.1 toward mean 4, unbiased var 0
        assert!((rs.mean.data()[0] - 0.4).abs() < 1e-12);
        assert!((rs.var.data()[0] - 0.9).abs() < 1e-12);
    }

    #[test]
    fn standardized_input_is_unchanged() {
        // channel values with mean 0 and biased variance 1
        let x = Var::constant(Tensor::from_f64(&[4, 1], &[1.0, -1.0, 1.0, -1.0]).unwrap());
        let (g, b) = affine(1);
        let mut rs = RunningStats::new(1);
        let y = batch_norm(&x, &g, &b, &mut rs, Mode::Train, BN_EPS, BN_MOMENTUM).unwrap();
        let k = 1.0 / (1.0 + BN_EPS).sqrt();
        for (o, i) in y.data().iter().zip(x.data()) {
            assert!((o - i * k).abs() < 1e-12);
            assert!((o - i).abs() < 1e-5);
        }
    }

    #[test]
    fn eval_with_identity_stats_is_affine() {
        let x = Var::<f64>::constant(Tensor::from_f64(&[2, 1, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap());
        let g = Var::constant(Tensor::from_f64(&[1], &[2.0]).unwrap());
        let b = Var::constant(Tensor::from_f64(&[1], &[0.5]).unwrap());
        let mut rs = RunningStats::new(1);
        let before = rs.clone();
        let y = batch_norm(&x, &g, &b, &mut rs, Mode::Eval, BN_EPS, BN_MOMENTUM).unwrap();
        let k = 1.0 / (1.0 + BN_EPS).sqrt();
        for (o, i) in y.data().iter().zip(x.data()) {
            assert!((o - (2.0 * i * k + 0.5)).abs() < 1e-12);
        }
        assert_eq!(rs, before);
    }

    #[test]
    fn dropout_degenerate_cases() {
        let x = Var::<f64>::constant(Tensor::from_f64(&[3], &[1.0, 2.0, 3.0]).unwrap());
        let mut rng = Rng::new(0);
        assert_eq!(dropout(&x, 0.0, Mode::Train, &mut rng).unwrap().data(), x.data());
        assert_eq!(dropout(&x, 0.5, Mode::Eval, &mut rng).unwrap().data(), x.data());
        assert!(dropout(&x, 1.0, Mode::Train, &mut rng).is_err());
    }

    #[test]
    fn dropout_monte_carlo() {
        let n = 100_000;
        let x = Var::constant(Tensor::<f64>::ones(&[n]));
        let mut rng = Rng::new(2024);
        let y = dropout(&x, 0.5, Mode::Train, &mut rng).unwrap();
        let kept = y.data().iter().filter(|&&v| v != 0.0).count() as f64 / n as f64;
        assert!((0.49..=0.51).contains(&kept), "{kept}");
        let mean = y.data().iter().sum::<f64>() / n as f64;
        assert!((mean - 1.0).abs() < 0.02, "{mean}");
    }

    #[test]
    fn dropout_mask_is_seed_deterministic() {
        let x = Var::constant(Tensor::<f32>::ones(&[257]));
        let a = dropout(&x, 0.3, Mode::Train, &mut Rng::new(9)).unwrap();
        let b = dropout(&x, 0.3, Mode::Train, &mut Rng::new(9)).unwrap();
        assert_eq!(a.data(), b.data());
    }
}
