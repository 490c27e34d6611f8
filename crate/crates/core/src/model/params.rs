use std::collections::BTreeMap;

use mm_tensor::{batch_norm, dropout, Mode, Rng, RunningStats, Scalar, Tensor, Var, BN_EPS, BN_MOMENTUM};

use crate::error::{Error, Result};

/// Named parameters and batch-norm buffers, keyed by canonical path.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T: Scalar> {
    pub params: BTreeMap<String, Tensor<T>>,
    pub stats: BTreeMap<String, RunningStats<T>>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self {
            params: BTreeMap::new(),
            stats: BTreeMap::new(),
        }
    }
}

/// FNV-1a, used to give every parameter its own init stream.
fn name_tag(name: &str) -> u64 {
    name.bytes()
        .fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

#[derive(Clone, Copy, Debug)]
pub(crate) enum Init {
    /// He-uniform, bound `sqrt(6 / fan_in)`.
    He(usize),
    /// Glorot-uniform, bound `sqrt(6 / (fan_in + fan_out))`.
    Glorot(usize, usize),
    Const(f64),
}

impl<T: Scalar> ParamStore<T> {
    pub(crate) fn add(&mut self, name: String, shape: &[usize], init: Init, rng: &Rng) {
        let mut r = rng.split(name_tag(&name));
        let n: usize = shape.iter().product();
        let data: Vec<T> = match init {
            Init::Const(c) => vec![T::from_f64_lossy(c); n],
            Init::He(fan_in) => {
                let bound = (6.0 / fan_in as f64).sqrt();
                (0..n).map(|_| T::from_f64_lossy(r.uniform_range(-bound, bound))).collect()
            }
            Init::Glorot(fan_in, fan_out) => {
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                (0..n).map(|_| T::from_f64_lossy(r.uniform_range(-bound, bound))).collect()
            }
        };
        let t = Tensor::new(shape.to_vec(), data).expect("positive parameter extents");
        self.params.insert(name, t);
    }

    pub(crate) fn add_bn(&mut self, prefix: &str, channels: usize, rng: &Rng) {
        self.add(format!("{prefix}.gamma"), &[channels], Init::Const(1.0), rng);
        self.add(format!("{prefix}.beta"), &[channels], Init::Const(0.0), rng);
        self.stats.insert(prefix.to_string(), RunningStats::new(channels));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.get(name)
    }

    /// Total number of trainable scalars.
    pub fn count(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            params: self.params.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
            stats: self
                .stats
                .iter()
                .map(|(k, s)| {
                    (
                        k.clone(),
                        RunningStats {
                            mean: s.mean.cast(),
                            var: s.var.cast(),
                        },
                    )
                })
                .collect(),
        }
    }
}

/// One forward pass over a store: hands out a leaf per parameter and
/// collects their gradients afterwards.
pub struct Session<'a, T: Scalar> {
    store: &'a mut ParamStore<T>,
    vars: BTreeMap<String, Var<T>>,
    pub mode: Mode,
    rng: Rng,
    trainable: bool,
}

impl<'a, T: Scalar> Session<'a, T> {
    /// `trainable` leaves record gradients; `rng` drives dropout.
    pub fn new(store: &'a mut ParamStore<T>, mode: Mode, rng: Rng, trainable: bool) -> Self {
        Self {
            store,
            vars: BTreeMap::new(),
            mode,
            rng,
            trainable,
        }
    }

    pub fn p(&mut self, name: &str) -> Result<Var<T>> {
        if let Some(v) = self.vars.get(name) {
            return Ok(v.clone());
        }
        let t = self
            .store
            .params
            .get(name)
            .ok_or_else(|| Error::InvalidInput(format!("unknown parameter {name}")))?
            .clone();
        let v = if self.trainable { Var::param(t) } else { Var::constant(t) };
        self.vars.insert(name.to_string(), v.clone());
        Ok(v)
    }

    pub fn bn(&mut self, prefix: &str, x: &Var<T>) -> Result<Var<T>> {
        let gamma = self.p(&format!("{prefix}.gamma"))?;
        let beta = self.p(&format!("{prefix}.beta"))?;
        let mode = self.mode;
        let stats = self
            .store
            .stats
            .get_mut(prefix)
            .ok_or_else(|| Error::InvalidInput(format!("unknown batch-norm buffer {prefix}")))?;
        Ok(batch_norm(x, &gamma, &beta, stats, mode, BN_EPS, BN_MOMENTUM)?)
    }

    pub fn dropout(&mut self, x: &Var<T>, p: f64) -> Result<Var<T>> {
        Ok(dropout(x, p, self.mode, &mut self.rng)?)
    }

    /// Leaves handed out so far.
    pub fn vars(&self) -> &BTreeMap<String, Var<T>> {
        &self.vars
    }

    /// Gradient per parameter of the store; an error names every parameter
    /// that received none.
    pub fn grads(&self) -> Result<BTreeMap<String, Tensor<T>>> {
        let mut out = BTreeMap::new();
        let mut missing = Vec::new();
        for name in self.store.params.keys() {
            match self.vars.get(name).and_then(|v| v.take_grad()) {
                Some(g) => {
                    out.insert(name.clone(), g);
                }
                None => missing.push(name.clone()),
            }
        }
        if missing.is_empty() {
            Ok(out)
        } else {
            Err(Error::MissingGrad(missing.join(", ")))
        }
    }
}
