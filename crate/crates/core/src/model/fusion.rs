//! Cross-modal multihead attention and the multitask heads.

use mm_tensor::{concat, linear, matmul, narrow, softmax, transpose, Rng, Scalar, Tensor, Var};

use super::config::ModelConfig;
use super::params::{Init, ParamStore, Session};
use crate::error::{invalid, Result};

/// Task order of every output triple.
pub const TASKS: [&str; 3] = ["mental_demand", "effort", "temporal_demand"];

pub(crate) fn init_attention<T: Scalar>(s: &mut ParamStore<T>, prefix: &str, d: usize, rng: &Rng) {
    for m in ["wq", "wk", "wv", "wo"] {
        s.add(format!("{prefix}.{m}"), &[d, d], Init::Glorot(d, d), rng);
    }
}

pub(crate) fn init_heads<T: Scalar>(s: &mut ParamStore<T>, cfg: &ModelConfig, rng: &Rng) {
    let (d, h) = (cfg.d_model, cfg.branch_hidden);
    s.add("shared.weight".into(), &[d, d], Init::He(d), rng);
    s.add("shared.bias".into(), &[d], Init::Const(0.0), rng);
    for task in TASKS {
        s.add(format!("head.{task}.fc1.weight"), &[d, h], Init::He(d), rng);
        s.add(format!("head.{task}.fc1.bias"), &[h], Init::Const(0.0), rng);
        s.add(format!("head.{task}.fc2.weight"), &[h, 1], Init::Glorot(h, 1), rng);
        s.add(format!("head.{task}.fc2.bias"), &[1], Init::Const(0.0), rng);
    }
}

pub struct AttentionOutput<T: Scalar> {
    /// `[B, d_model]`, averaged over query tokens.
    pub output: Var<T>,
    /// Softmax weights `[Lq, Lk]`, indexed `[sample][head]`.
    pub weights: Vec<Vec<Tensor<T>>>,
}

/// Multihead attention with queries from `query` (`[B·Lq, d]`) and keys and
/// values from `context` (`[B·Lk, d]`); tokens never attend across samples.
///
/// Head `h` uses columns `h·d_k .. (h+1)·d_k` of `W^Q`, `W^K` and `W^V`.
pub fn crossmodal_attention<T: Scalar>(
    sess: &mut Session<T>,
    prefix: &str,
    heads: usize,
    batch: usize,
    query: &Var<T>,
    context: &Var<T>,
) -> Result<AttentionOutput<T>> {
    let wq = sess.p(&format!("{prefix}.wq"))?;
    let d = wq.shape()[0];
    for (what, x) in [("query", query), ("context", context)] {
        if x.shape().len() != 2 || x.shape()[1] != d || x.shape()[0] % batch.max(1) != 0 || batch == 0 {
            return Err(invalid(format!(
                "attention {what} must be [B·L, {d}] with B = {batch}, got {:?}",
                x.shape()
            )));
        }
    }
    if heads == 0 || d % heads != 0 {
        return Err(invalid(format!("{heads} heads do not divide width {d}")));
    }
    let (lq, lk, dk) = (query.shape()[0] / batch, context.shape()[0] / batch, d / heads);
    let q = matmul(query, &wq)?;
    let k = matmul(context, &sess.p(&format!("{prefix}.wk"))?)?;
    let v = matmul(context, &sess.p(&format!("{prefix}.wv"))?)?;
    let scale = T::from_f64_lossy(1.0 / (dk as f64).sqrt());
    let mut rows = Vec::with_capacity(batch);
    let mut weights = Vec::with_capacity(batch);
    for b in 0..batch {
        let (qb, kb, vb) = (narrow(&q, 0, b * lq, lq)?, narrow(&k, 0, b * lk, lk)?, narrow(&v, 0, b * lk, lk)?);
        let mut per_head = Vec::with_capacity(heads);
        let mut sample_weights = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = narrow(&qb, 1, h * dk, dk)?;
            let kh = narrow(&kb, 1, h * dk, dk)?;
            let vh = narrow(&vb, 1, h * dk, dk)?;
            let scores = matmul(&qh, &transpose(&kh)?)?.scale(scale)?;
            let a = softmax(&scores, 1)?;
            sample_weights.push(a.value().clone());
            per_head.push(matmul(&a, &vh)?);
        }
        rows.push(concat(&per_head, 1)?);
        weights.push(sample_weights);
    }
    let heads_cat = concat(&rows, 0)?;
    let mut out = matmul(&heads_cat, &sess.p(&format!("{prefix}.wo"))?)?;
    if lq > 1 {
        let mut avg = vec![T::zero(); batch * batch * lq];
        let w = T::from_f64_lossy(1.0 / lq as f64);
        for b in 0..batch {
            avg[b * batch * lq + b * lq..b * batch * lq + (b + 1) * lq].fill(w);
        }
        let avg = Var::constant(Tensor::new(vec![batch, batch * lq], avg)?);
        out = matmul(&avg, &out)?;
    }
    Ok(AttentionOutput { output: out, weights })
}

/// Shared layer and the three task branches; returns probabilities `[B]`
/// in [`TASKS`] order.
pub fn heads_forward<T: Scalar>(sess: &mut Session<T>, cfg: &ModelConfig, fused: &Var<T>) -> Result<[Var<T>; 3]> {
    let b = fused.shape()[0];
    let shared = linear(fused, &sess.p("shared.weight")?, &sess.p("shared.bias")?)?.relu()?;
    let mut out = Vec::with_capacity(3);
    for task in TASKS {
        let (w1, b1) = (sess.p(&format!("head.{task}.fc1.weight"))?, sess.p(&format!("head.{task}.fc1.bias"))?);
        let h = linear(&shared, &w1, &b1)?.relu()?;
        let h = sess.dropout(&h, cfg.dropout)?;
        let (w2, b2) = (sess.p(&format!("head.{task}.fc2.weight"))?, sess.p(&format!("head.{task}.fc2.bias"))?);
        out.push(linear(&h, &w2, &b2)?.sigmoid()?.reshape(&[b])?);
    }
    Ok([out[0].clone(), out[1].clone(), out[2].clone()])
}
