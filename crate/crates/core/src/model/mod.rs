//! The two-stream network: AudioNet and VideoNet encoders, cross-modal
//! attention, a shared layer and three sigmoid task branches.

mod checkpoint;
mod config;
mod fusion;
mod nets;
mod params;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use config::{AttentionMode, InceptionWidths, InputGeometry, Modality, ModelConfig, QueryFrom};
pub use fusion::{crossmodal_attention, heads_forward, AttentionOutput, TASKS};
pub use nets::{audio_trunk, audionet_forward, inception, video_trunk, videonet_forward};
pub use params::{ParamStore, Session};

use mm_tensor::{adaptive_avg_pool3d, concat, linear, narrow, transpose, Mode, Rng, Scalar, Tensor, Var};

use crate::error::{invalid, Result};
use params::Init;

/// Attention parameter prefix for a query modality.
pub fn attention_prefix(query_audio: bool) -> &'static str {
    if query_audio {
        "attn.query_audio"
    } else {
        "attn.query_video"
    }
}

/// Fresh parameters for `cfg`, deterministic in `seed`.
pub fn init_params<T: Scalar>(cfg: &ModelConfig, seed: u64) -> ParamStore<T> {
    let rng = Rng::new(seed);
    let mut s = ParamStore::default();
    let fused = cfg.modality == Modality::AudioVideo;
    let sequence = fused && cfg.attention == AttentionMode::Sequence;
    if cfg.modality.uses_audio() {
        nets::init_audio(&mut s, cfg, &rng);
        if sequence {
            let width = cfg.audio_out_channels() * cfg.audio_pool[0];
            s.add("audio.token.weight".into(), &[width, cfg.d_model], Init::He(width), &rng);
            s.add("audio.token.bias".into(), &[cfg.d_model], Init::Const(0.0), &rng);
        } else {
            nets::init_audio_fc(&mut s, cfg, &rng);
        }
    }
    if cfg.modality.uses_video() {
        nets::init_video(&mut s, cfg, &rng);
        if sequence {
            let width = cfg.video_out_channels();
            s.add("video.token.weight".into(), &[width, cfg.d_model], Init::He(width), &rng);
            s.add("video.token.bias".into(), &[cfg.d_model], Init::Const(0.0), &rng);
        } else {
            nets::init_video_fc(&mut s, cfg, &rng);
        }
    }
    if fused {
        if cfg.query_from != QueryFrom::Video {
            fusion::init_attention(&mut s, attention_prefix(true), cfg.d_model, &rng);
        }
        if cfg.query_from != QueryFrom::Audio {
            fusion::init_attention(&mut s, attention_prefix(false), cfg.d_model, &rng);
        }
    }
    fusion::init_heads(&mut s, cfg, &rng);
    s
}

/// Everything a forward pass produces.
pub struct Forward<T: Scalar> {
    /// Probabilities `[B]` in [`TASKS`] order.
    pub probs: [Var<T>; 3],
    /// Encoder outputs: `[B, d]` pooled, `[B·L, d]` tokens in sequence mode.
    pub audio: Option<Var<T>>,
    pub video: Option<Var<T>>,
    /// Input of the shared layer, `[B, d]`.
    pub fused: Var<T>,
    /// Attention weights per direction, `[sample][head]`.
    pub attention: Vec<Vec<Vec<Tensor<T>>>>,
}

/// Per-sample `[C·rows, L]` maps turned into `[B·L, C·rows]` token rows.
fn to_tokens<T: Scalar>(x: &Var<T>, tokens: usize) -> Result<Var<T>> {
    let b = x.shape()[0];
    let per = x.shape()[1..].iter().product::<usize>();
    let rows = (0..b)
        .map(|i| transpose(&narrow(x, 0, i, 1)?.reshape(&[per / tokens, tokens])?))
        .collect::<mm_tensor::Result<Vec<_>>>()?;
    Ok(concat(&rows, 0)?)
}

fn audio_tokens<T: Scalar>(sess: &mut Session<T>, cfg: &ModelConfig, mel: &Var<T>) -> Result<Var<T>> {
    let x = audio_trunk(sess, cfg, mel)?;
    let t = to_tokens(&x, cfg.audio_pool[1])?;
    let t = linear(&t, &sess.p("audio.token.weight")?, &sess.p("audio.token.bias")?)?;
    sess.dropout(&t, cfg.dropout)
}

fn video_tokens<T: Scalar>(sess: &mut Session<T>, cfg: &ModelConfig, vol: &Var<T>) -> Result<Var<T>> {
    let x = video_trunk(sess, cfg, vol)?;
    let x = adaptive_avg_pool3d(&x, [cfg.seq_tokens, 1, 1])?;
    let t = to_tokens(&x, cfg.seq_tokens)?;
    let t = linear(&t, &sess.p("video.token.weight")?, &sess.p("video.token.bias")?)?;
    sess.dropout(&t, cfg.dropout)
}

/// Full forward: encoders, fusion, shared layer and task branches.
pub fn mm_forward<T: Scalar>(
    sess: &mut Session<T>,
    cfg: &ModelConfig,
    mel: Option<&Var<T>>,
    vol: Option<&Var<T>>,
) -> Result<Forward<T>> {
    let need = |x: Option<&Var<T>>, what: &str| x.cloned().ok_or_else(|| invalid(format!("model needs {what} input")));
    let sequence = cfg.attention == AttentionMode::Sequence;
    let (audio, video, fused, attention) = match cfg.modality {
        Modality::AudioOnly => {
            let a = audionet_forward(sess, cfg, &need(mel, "audio")?)?;
            (Some(a.clone()), None, a, Vec::new())
        }
        Modality::VideoOnly => {
            let v = videonet_forward(sess, cfg, &need(vol, "video")?)?;
            (None, Some(v.clone()), v, Vec::new())
        }
        Modality::AudioVideo => {
            let (mel, vol) = (need(mel, "audio")?, need(vol, "video")?);
            let batch = mel.shape()[0];
            if vol.shape().first() != Some(&batch) {
                return Err(invalid("audio and video batches differ"));
            }
            let (a, v) = if sequence {
                (audio_tokens(sess, cfg, &mel)?, video_tokens(sess, cfg, &vol)?)
            } else {
                (audionet_forward(sess, cfg, &mel)?, videonet_forward(sess, cfg, &vol)?)
            };
            let mut out: Option<Var<T>> = None;
            let mut weights = Vec::new();
            for query_audio in [true, false] {
                let wanted = match cfg.query_from {
                    QueryFrom::Audio => query_audio,
                    QueryFrom::Video => !query_audio,
                    QueryFrom::Both => true,
                };
                if !wanted {
                    continue;
                }
                let (q, kv) = if query_audio { (&a, &v) } else { (&v, &a) };
                let r = crossmodal_attention(sess, attention_prefix(query_audio), cfg.heads, batch, q, kv)?;
                weights.push(r.weights);
                out = Some(match out {
                    None => r.output,
                    Some(prev) => prev.add(&r.output)?,
                });
            }
            (Some(a), Some(v), out.expect("at least one direction"), weights)
        }
    };
    let probs = heads_forward(sess, cfg, &fused)?;
    Ok(Forward {
        probs,
        audio,
        video,
        fused,
        attention,
    })
}

/// Configuration plus parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct MmModel<T: Scalar> {
    pub config: ModelConfig,
    pub store: ParamStore<T>,
}

impl<T: Scalar> MmModel<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let errs = config.validate();
        if !errs.is_empty() {
            return Err(crate::Error::Config(errs.join("; ")));
        }
        let store = init_params(&config, seed);
        Ok(Self { config, store })
    }

    /// Eval-mode probabilities, one vector per task.
    pub fn predict(&mut self, mel: Option<&Tensor<T>>, vol: Option<&Tensor<T>>) -> Result<[Vec<T>; 3]> {
        let mut sess = Session::new(&mut self.store, Mode::Eval, Rng::new(0), false);
        let mel = mel.map(|t| Var::constant(t.clone()));
        let vol = vol.map(|t| Var::constant(t.clone()));
        let f = mm_forward(&mut sess, &self.config, mel.as_ref(), vol.as_ref())?;
        Ok(f.probs.map(|p| p.data().to_vec()))
    }
}
