//! Video frontend: frame sampling, resize, crop, grayscale and normalization,
//! plus the MMV1 raw-frame container.

use std::io::{Read, Write};
use std::path::Path;

use mm_tensor::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, IoContext, Result};

/// One RGB (or single-channel) image, row-major with interleaved channels,
/// values in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl Frame {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(invalid("frame extents must be positive"));
        }
        if data.len() != height * width * channels {
            return Err(invalid(format!(
                "frame {height}x{width}x{channels} needs {} values, got {}",
                height * width * channels,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, v: f32) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![v; height * width * channels],
        }
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f32) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }
}

/// Raw clip: frames plus the native frame rate.
#[derive(Clone, Debug, PartialEq)]
pub struct RawClip {
    pub frames: Vec<Frame>,
    pub fps: f64,
}

pub const CLIP_MAGIC: &[u8; 4] = b"MMV1";

/// Writes the MMV1 container: magic, u16 frame count, u16 height, u16 width,
/// u8 channels (all little-endian), then frames as row-major u8.
pub fn write_mmv1(path: &Path, frames: &[Frame]) -> Result<()> {
    let first = frames.first().ok_or_else(|| invalid("clip has no frames"))?;
    let too_big = |v: usize| v > u16::MAX as usize;
    if too_big(frames.len()) || too_big(first.height) || too_big(first.width) || first.channels > 255 {
        return Err(invalid("clip extents exceed MMV1 limits"));
    }
    let mut out = Vec::with_capacity(11 + frames.len() * first.data.len());
    out.extend_from_slice(CLIP_MAGIC);
    out.extend_from_slice(&(frames.len() as u16).to_le_bytes());
    out.extend_from_slice(&(first.height as u16).to_le_bytes());
    out.extend_from_slice(&(first.width as u16).to_le_bytes());
    out.push(first.channels as u8);
    for f in frames {
        if (f.height, f.width, f.channels) != (first.height, first.width, first.channels) {
            return Err(invalid("all frames of a clip must share extents"));
        }
        out.extend(f.data.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    }
    std::fs::File::create(path)
        .and_then(|mut file| file.write_all(&out))
        .at(path)
}

pub fn read_mmv1(path: &Path) -> Result<Vec<Frame>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .at(path)?;
    let bad = |detail: &str| Error::Format {
        path: path.to_path_buf(),
        detail: detail.to_string(),
    };
    if bytes.len() < 11 || &bytes[..4] != CLIP_MAGIC {
        return Err(bad("missing MMV1 header"));
    }
    let u16_at = |i: usize| u16::from_le_bytes([bytes[i], bytes[i + 1]]) as usize;
    let (count, height, width, channels) = (u16_at(4), u16_at(6), u16_at(8), bytes[10] as usize);
    let per_frame = height * width * channels;
    if count == 0 || per_frame == 0 {
        return Err(bad("empty clip"));
    }
    if bytes.len() != 11 + count * per_frame {
        return Err(bad("payload length does not match header"));
    }
    Ok(bytes[11..]
        .chunks_exact(per_frame)
        .map(|chunk| Frame {
            height,
            width,
            channels,
            data: chunk.iter().map(|&b| b as f32 / 255.0).collect(),
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VideoParams {
    pub target_fps: f64,
    pub depth: usize,
    pub resize_height: usize,
    pub resize_width: usize,
    pub crop_height: usize,
    pub crop_width: usize,
    pub mean: f32,
    pub std: f32,
}

impl Default for VideoParams {
    fn default() -> Self {
        Self {
            target_fps: 5.0,
            depth: 30,
            resize_height: 168,
            resize_width: 224,
            crop_height: 148,
            crop_width: 144,
            mean: 0.5,
            std: 0.5,
        }
    }
}

/// Source indices chosen by [`sample_frames`].
pub fn sample_indices(count: usize, native_fps: f64, target_fps: f64, depth: usize) -> Result<Vec<usize>> {
    if count == 0 {
        return Err(invalid("cannot sample frames from an empty clip"));
    }
    if !(native_fps > 0.0) || !(target_fps > 0.0) {
        return Err(invalid("frame rates must be positive"));
    }
    let mut out = Vec::with_capacity(depth);
    for k in 0..depth {
        let idx = (k as f64 * native_fps / target_fps).round() as usize;
        // past the end: repeat the last frame
        out.push(idx.min(count - 1));
    }
    Ok(out)
}

/// Nearest-timestamp resampling to `target_fps`, padded by repeating the
/// last frame or truncated to `depth`.
pub fn sample_frames(clip: &RawClip, target_fps: f64, depth: usize) -> Result<Vec<Frame>> {
    Ok(sample_indices(clip.frames.len(), clip.fps, target_fps, depth)?
        .into_iter()
        .map(|i| clip.frames[i].clone())
        .collect())
}

/// Bilinear resize with half-pixel centers and edge clamping.
pub fn resize(frame: &Frame, height: usize, width: usize) -> Frame {
    if frame.height == height && frame.width == width {
        return frame.clone();
    }
    let axis = |out: usize, input: usize| -> Vec<(usize, usize, f32)> {
        let scale = input as f64 / out as f64;
        (0..out)
            .map(|o| {
                let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
                let lo = (src.floor() as usize).min(input - 1);
                let hi = (lo + 1).min(input - 1);
                (lo, hi, (src - lo as f64) as f32)
            })
            .collect()
    };
    let ys = axis(height, frame.height);
    let xs = axis(width, frame.width);
    let c = frame.channels;
    let mut data = vec![0f32; height * width * c];
    for (y, &(y0, y1, fy)) in ys.iter().enumerate() {
        for (x, &(x0, x1, fx)) in xs.iter().enumerate() {
            for ch in 0..c {
                let top = frame.get(y0, x0, ch) * (1.0 - fx) + frame.get(y0, x1, ch) * fx;
                let bottom = frame.get(y1, x0, ch) * (1.0 - fx) + frame.get(y1, x1, ch) * fx;
                data[(y * width + x) * c + ch] = top * (1.0 - fy) + bottom * fy;
            }
        }
    }
    Frame {
        height,
        width,
        channels: c,
        data,
    }
}

/// Centered crop with offsets `floor((H - h) / 2)` and `floor((W - w) / 2)`.
pub fn center_crop(frame: &Frame, height: usize, width: usize) -> Result<Frame> {
    if height > frame.height || width > frame.width {
        return Err(invalid(format!(
            "crop {height}x{width} larger than frame {}x{}",
            frame.height, frame.width
        )));
    }
    let (top, left) = ((frame.height - height) / 2, (frame.width - width) / 2);
    crop(frame, top, left, height, width)
}

pub(crate) fn crop(frame: &Frame, top: usize, left: usize, height: usize, width: usize) -> Result<Frame> {
    if top + height > frame.height || left + width > frame.width {
        return Err(invalid("crop window outside frame"));
    }
    let c = frame.channels;
    let mut data = Vec::with_capacity(height * width * c);
    for y in top..top + height {
        let row = (y * frame.width + left) * c;
        data.extend_from_slice(&frame.data[row..row + width * c]);
    }
    Ok(Frame {
        height,
        width,
        channels: c,
        data,
    })
}

pub const LUMA: [f32; 3] = [0.299, 0.587, 0.114];

/// ITU-R 601 luma; single-channel frames pass through.
pub fn grayscale(frame: &Frame) -> Frame {
    if frame.channels == 1 {
        return frame.clone();
    }
    let data = frame
        .data
        .chunks_exact(frame.channels)
        .map(|px| LUMA[0] * px[0] + LUMA[1] * px[1] + LUMA[2] * px[2])
        .collect();
    Frame {
        height: frame.height,
        width: frame.width,
        channels: 1,
        data,
    }
}

pub fn normalize(v: f32, mean: f32, std: f32) -> f32 {
    (v - mean) / std
}

pub fn denormalize(v: f32, mean: f32, std: f32) -> f32 {
    v * std + mean
}

/// Normalized grayscale volume `[depth, height, width]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameVolume {
    pub values: Tensor<f32>,
}

/// Stacks single-channel frames into a normalized volume.
pub fn to_volume(frames: &[Frame], p: &VideoParams) -> Result<FrameVolume> {
    let first = frames.first().ok_or_else(|| invalid("no frames"))?;
    let mut data = Vec::with_capacity(frames.len() * first.height * first.width);
    for f in frames {
        if f.channels != 1 || f.height != first.height || f.width != first.width {
            return Err(invalid("volume frames must be single-channel with equal extents"));
        }
        data.extend(f.data.iter().map(|&v| normalize(v, p.mean, p.std)));
    }
    Ok(FrameVolume {
        values: Tensor::new(vec![frames.len(), first.height, first.width], data)?,
    })
}

/// Sampling and resize: the RGB stage that augmentation operates on.
pub fn sample_and_resize(clip: &RawClip, p: &VideoParams) -> Result<Vec<Frame>> {
    Ok(sample_frames(clip, p.target_fps, p.depth)?
        .iter()
        .map(|f| resize(f, p.resize_height, p.resize_width))
        .collect())
}

/// Crop, grayscale and normalize resized frames.
pub fn finish_volume(frames: &[Frame], p: &VideoParams) -> Result<FrameVolume> {
    let gray = frames
        .iter()
        .map(|f| center_crop(f, p.crop_height, p.crop_width).map(|c| grayscale(&c)))
        .collect::<Result<Vec<_>>>()?;
    to_volume(&gray, p)
}

/// Deterministic evaluation pipeline (no flip).
pub fn preprocess_video(clip: &RawClip, p: &VideoParams) -> Result<FrameVolume> {
    finish_volume(&sample_and_resize(clip, p)?, p)
}
