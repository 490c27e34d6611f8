use mm_tensor::conv_out_extent;
use serde::{Deserialize, Serialize};

/// Output widths of one 3D inception module.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InceptionWidths {
    pub b0: usize,
    pub b1_reduce: usize,
    pub b1: usize,
    pub b2_reduce: usize,
    pub b2: usize,
    pub pool_proj: usize,
}

impl InceptionWidths {
    pub fn out_channels(&self) -> usize {
        self.b0 + self.b1 + self.b2 + self.pool_proj
    }

    fn widths(&self) -> [usize; 6] {
        [self.b0, self.b1_reduce, self.b1, self.b2_reduce, self.b2, self.pool_proj]
    }
}

/// Which modality supplies the attention queries.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryFrom {
    Audio,
    Video,
    /// Both directions, outputs summed.
    Both,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionMode {
    /// One 128-d token per modality.
    Pooled,
    /// Temporal tokens taken before the final pooling.
    Sequence,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    AudioVideo,
    AudioOnly,
    VideoOnly,
}

impl Modality {
    pub fn uses_audio(self) -> bool {
        self != Modality::VideoOnly
    }

    pub fn uses_video(self) -> bool {
        self != Modality::AudioOnly
    }
}

/// Network input extents.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InputGeometry {
    pub n_mels: usize,
    pub frames: usize,
    pub depth: usize,
    pub height: usize,
    pub width: usize,
}

impl Default for InputGeometry {
    fn default() -> Self {
        Self {
            n_mels: 80,
            frames: 601,
            depth: 30,
            height: 148,
            width: 144,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub audio_channels: Vec<usize>,
    pub audio_pool: [usize; 2],
    pub video_stem: usize,
    pub inception: Vec<InceptionWidths>,
    pub d_model: usize,
    pub heads: usize,
    pub branch_hidden: usize,
    pub dropout: f64,
    pub query_from: QueryFrom,
    pub attention: AttentionMode,
    /// Temporal tokens per modality in sequence mode.
    pub seq_tokens: usize,
    pub modality: Modality,
    pub input: InputGeometry,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            audio_channels: vec![16, 32, 64, 128],
            audio_pool: [4, 4],
            video_stem: 16,
            inception: vec![
                InceptionWidths {
                    b0: 16,
                    b1_reduce: 16,
                    b1: 24,
                    b2_reduce: 4,
                    b2: 8,
                    pool_proj: 16,
                },
                InceptionWidths {
                    b0: 32,
                    b1_reduce: 32,
                    b1: 48,
                    b2_reduce: 8,
                    b2: 16,
                    pool_proj: 32,
                },
            ],
            d_model: 128,
            heads: 4,
            branch_hidden: 64,
            dropout: 0.5,
            query_from: QueryFrom::Audio,
            attention: AttentionMode::Pooled,
            seq_tokens: 4,
            modality: Modality::AudioVideo,
            input: InputGeometry::default(),
        }
    }
}

impl ModelConfig {
    /// Encoder channel widths divided by four; fusion widths unchanged.
    pub fn quartered() -> Self {
        let d = Self::default();
        Self {
            audio_channels: d.audio_channels.iter().map(|c| c / 4).collect(),
            video_stem: d.video_stem / 4,
            inception: d
                .inception
                .iter()
                .map(|w| InceptionWidths {
                    b0: w.b0 / 4,
                    b1_reduce: w.b1_reduce / 4,
                    b1: w.b1 / 4,
                    b2_reduce: (w.b2_reduce / 4).max(1),
                    b2: w.b2 / 4,
                    pool_proj: w.pool_proj / 4,
                })
                .collect(),
            ..d
        }
    }

    pub fn d_k(&self) -> usize {
        self.d_model / self.heads.max(1)
    }

    pub fn audio_out_channels(&self) -> usize {
        self.audio_channels.last().copied().unwrap_or(0)
    }

    pub fn video_out_channels(&self) -> usize {
        self.inception.last().map_or(self.video_stem, InceptionWidths::out_channels)
    }

    /// Spatial extents after the audio blocks, before adaptive pooling.
    pub fn audio_block_extent(&self) -> Option<[usize; 2]> {
        let mut hw = [self.input.n_mels, self.input.frames];
        for _ in &self.audio_channels {
            hw = [hw[0] / 2, hw[1] / 2];
            if hw[0] == 0 || hw[1] == 0 {
                return None;
            }
        }
        Some(hw)
    }

    /// Extents after the video trunk, before adaptive pooling.
    pub fn video_trunk_extent(&self) -> Option<[usize; 3]> {
        let g = self.input;
        let mut e = [
            conv_out_extent(g.depth, 7, 2, 3)?,
            conv_out_extent(g.height, 7, 2, 3)?,
            conv_out_extent(g.width, 7, 2, 3)?,
        ];
        e = [e[0], e[1] / 2, e[2] / 2];
        for _ in 1..self.inception.len() {
            e = [
                conv_out_extent(e[0], 3, 2, 1)?,
                conv_out_extent(e[1], 3, 2, 1)?,
                conv_out_extent(e[2], 3, 2, 1)?,
            ];
        }
        e.iter().all(|&n| n > 0).then_some(e)
    }

    /// Every violated constraint, prefixed with `model.`.
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        let mut check = |ok: bool, msg: String| {
            if !ok {
                errs.push(format!("model.{msg}"));
            }
        };
        check(
            !self.audio_channels.is_empty() && self.audio_channels.iter().all(|&c| c > 0),
            "audio_channels must be a non-empty list of positive widths".into(),
        );
        check(self.audio_pool.iter().all(|&n| n > 0), "audio_pool extents must be positive".into());
        check(self.video_stem > 0, "video_stem must be positive".into());
        check(
            self.inception.iter().all(|w| w.widths().iter().all(|&c| c > 0)),
            "inception widths must be positive".into(),
        );
        check(
            self.heads > 0 && self.d_model > 0 && self.d_model % self.heads == 0,
            format!("heads ({}) must divide d_model ({})", self.heads, self.d_model),
        );
        check(self.branch_hidden > 0, "branch_hidden must be positive".into());
        check((0.0..1.0).contains(&self.dropout), "dropout must lie in [0, 1)".into());
        check(self.seq_tokens > 0, "seq_tokens must be positive".into());
        check(
            self.audio_block_extent().is_some(),
            format!("input {}x{} mel is too small for {} audio blocks", self.input.n_mels, self.input.frames, self.audio_channels.len()),
        );
        check(self.video_trunk_extent().is_some(), "input volume is too small for the video trunk".into());
        errs
    }
}
