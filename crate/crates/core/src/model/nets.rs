//! AudioNet and VideoNet encoders.

use mm_tensor::{
    adaptive_avg_pool2d, adaptive_avg_pool3d, concat, conv2d, conv3d, linear, max_pool2d, max_pool3d, Rng, Scalar,
    Var,
};

use super::config::ModelConfig;
use super::params::{Init, ParamStore, Session};
use crate::error::{invalid, Result};

pub(crate) fn init_audio<T: Scalar>(s: &mut ParamStore<T>, cfg: &ModelConfig, rng: &Rng) {
    let mut cin = 1;
    for (i, &c) in cfg.audio_channels.iter().enumerate() {
        s.add(format!("audio.block{i}.conv.weight"), &[c, cin, 3, 3], Init::He(cin * 9), rng);
        s.add_bn(&format!("audio.block{i}.bn"), c, rng);
        cin = c;
    }
}

pub(crate) fn init_audio_fc<T: Scalar>(s: &mut ParamStore<T>, cfg: &ModelConfig, rng: &Rng) {
    let fan_in = cfg.audio_out_channels() * cfg.audio_pool[0] * cfg.audio_pool[1];
    s.add("audio.fc.weight".into(), &[fan_in, cfg.d_model], Init::He(fan_in), rng);
    s.add("audio.fc.bias".into(), &[cfg.d_model], Init::Const(0.0), rng);
}

fn init_unit<T: Scalar>(s: &mut ParamStore<T>, name: &str, cin: usize, cout: usize, k: usize, rng: &Rng) {
    s.add(format!("{name}.conv.weight"), &[cout, cin, k, k, k], Init::He(cin * k * k * k), rng);
    s.add_bn(&format!("{name}.bn"), cout, rng);
}

pub(crate) fn init_video<T: Scalar>(s: &mut ParamStore<T>, cfg: &ModelConfig, rng: &Rng) {
    init_unit(s, "video.stem", 1, cfg.video_stem, 7, rng);
    let mut cin = cfg.video_stem;
    for (j, w) in cfg.inception.iter().enumerate() {
        let p = format!("video.inc{j}");
        init_unit(s, &format!("{p}.b0"), cin, w.b0, 1, rng);
        init_unit(s, &format!("{p}.b1_reduce"), cin, w.b1_reduce, 1, rng);
        init_unit(s, &format!("{p}.b1"), w.b1_reduce, w.b1, 3, rng);
        init_unit(s, &format!("{p}.b2_reduce"), cin, w.b2_reduce, 1, rng);
        init_unit(s, &format!("{p}.b2"), w.b2_reduce, w.b2, 3, rng);
        init_unit(s, &format!("{p}.pool_proj"), cin, w.pool_proj, 1, rng);
        cin = w.out_channels();
    }
}

pub(crate) fn init_video_fc<T: Scalar>(s: &mut ParamStore<T>, cfg: &ModelConfig, rng: &Rng) {
    let c = cfg.video_out_channels();
    s.add("video.fc.weight".into(), &[c, cfg.d_model], Init::He(c), rng);
    s.add("video.fc.bias".into(), &[cfg.d_model], Init::Const(0.0), rng);
}

fn check_shape(what: &str, got: &[usize], want: &[usize]) -> Result<()> {
    if got.len() != want.len() || got[1..] != want[1..] || got[0] == 0 {
        return Err(invalid(format!(
            "{what} expects input [B, {}], got {got:?}",
            want[1..].iter().map(usize::to_string).collect::<Vec<_>>().join(", ")
        )));
    }
    Ok(())
}

/// Conv blocks and adaptive pooling: `[B, 1, mels, frames]` to `[B, C, 4, 4]`.
pub fn audio_trunk<T: Scalar>(sess: &mut Session<T>, cfg: &ModelConfig, mel: &Var<T>) -> Result<Var<T>> {
    let g = cfg.input;
    check_shape("audionet", mel.shape(), &[0, 1, g.n_mels, g.frames])?;
    let mut x = mel.clone();
    for i in 0..cfg.audio_channels.len() {
        let w = sess.p(&format!("audio.block{i}.conv.weight"))?;
        x = conv2d(&x, &w, [1, 1], [1, 1])?;
        x = sess.bn(&format!("audio.block{i}.bn"), &x)?.relu()?;
        x = max_pool2d(&x, [2, 2], [2, 2])?;
    }
    Ok(adaptive_avg_pool2d(&x, cfg.audio_pool)?)
}

/// `[B, 1, mels, frames]` to `[B, d_model]`.
pub fn audionet_forward<T: Scalar>(sess: &mut Session<T>, cfg: &ModelConfig, mel: &Var<T>) -> Result<Var<T>> {
    let x = audio_trunk(sess, cfg, mel)?;
    let b = x.shape()[0];
    let x = x.reshape(&[b, x.len_per_sample()])?;
    let x = sess.dropout(&x, cfg.dropout)?;
    let (w, bias) = (sess.p("audio.fc.weight")?, sess.p("audio.fc.bias")?);
    Ok(linear(&x, &w, &bias)?)
}

trait PerSample {
    fn len_per_sample(&self) -> usize;
}

impl<T: Scalar> PerSample for Var<T> {
    fn len_per_sample(&self) -> usize {
        self.shape()[1..].iter().product()
    }
}

fn unit<T: Scalar>(sess: &mut Session<T>, name: &str, x: &Var<T>, k: usize, stride: usize) -> Result<Var<T>> {
    let w = sess.p(&format!("{name}.conv.weight"))?;
    let pad = k / 2;
    let y = conv3d(x, &w, [stride; 3], [pad; 3])?;
    Ok(sess.bn(&format!("{name}.bn"), &y)?.relu()?)
}

/// Four parallel branches concatenated along channels.
pub fn inception<T: Scalar>(sess: &mut Session<T>, prefix: &str, x: &Var<T>) -> Result<Var<T>> {
    let b0 = unit(sess, &format!("{prefix}.b0"), x, 1, 1)?;
    let b1 = unit(sess, &format!("{prefix}.b1_reduce"), x, 1, 1)?;
    let b1 = unit(sess, &format!("{prefix}.b1"), &b1, 3, 1)?;
    let b2 = unit(sess, &format!("{prefix}.b2_reduce"), x, 1, 1)?;
    let b2 = unit(sess, &format!("{prefix}.b2"), &b2, 3, 1)?;
    let b3 = max_pool3d(x, [3; 3], [1; 3], [1; 3])?;
    let b3 = unit(sess, &format!("{prefix}.pool_proj"), &b3, 1, 1)?;
    Ok(concat(&[b0, b1, b2, b3], 1)?)
}

/// Stem and inception modules: `[B, 1, D, H, W]` to `[B, C, d, h, w]`.
pub fn video_trunk<T: Scalar>(sess: &mut Session<T>, cfg: &ModelConfig, vol: &Var<T>) -> Result<Var<T>> {
    let g = cfg.input;
    check_shape("videonet", vol.shape(), &[0, 1, g.depth, g.height, g.width])?;
    let mut x = unit(sess, "video.stem", vol, 7, 2)?;
    x = max_pool3d(&x, [1, 2, 2], [1, 2, 2], [0; 3])?;
    for j in 0..cfg.inception.len() {
        if j > 0 {
            x = max_pool3d(&x, [3; 3], [2; 3], [1; 3])?;
        }
        x = inception(sess, &format!("video.inc{j}"), &x)?;
    }
    Ok(x)
}

/// `[B, 1, D, H, W]` to `[B, d_model]`.
pub fn videonet_forward<T: Scalar>(sess: &mut Session<T>, cfg: &ModelConfig, vol: &Var<T>) -> Result<Var<T>> {
    let x = video_trunk(sess, cfg, vol)?;
    let x = adaptive_avg_pool3d(&x, [1, 1, 1])?;
    let b = x.shape()[0];
    let x = x.reshape(&[b, x.len_per_sample()])?;
    let x = sess.dropout(&x, cfg.dropout)?;
    let (w, bias) = (sess.p("video.fc.weight")?, sess.p("video.fc.bias")?);
    Ok(linear(&x, &w, &bias)?)
}
