//! Train-time stochastic transforms for log-mel spectrograms and RGB frames.
//!
//! Every visual draw is made once per clip and applied to all of its frames.

use mm_tensor::{Rng, Tensor};
use serde::{Deserialize, Serialize};

use crate::audio::{reflect_index, MelSpec, Waveform};
use crate::error::{invalid, Result};
use crate::video::{crop, resize, Frame, LUMA};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskSpec {
    pub max_size: usize,
    pub num: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AudioCropSpec {
    /// Temporal window length as a fraction of the clip.
    pub range: [f64; 2],
    /// Frequency zoom: a band of `n_mels / s` rows is stretched back to `n_mels`.
    pub crop_scale: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AudioAugment {
    /// Gain drawn from `[1 - v, 1 + v]`.
    pub volume_jitter: f64,
    pub time_mask: MaskSpec,
    pub freq_mask: MaskSpec,
    pub random_crop: AudioCropSpec,
}

impl Default for AudioAugment {
    fn default() -> Self {
        Self {
            volume_jitter: 0.2,
            time_mask: MaskSpec { max_size: 50, num: 2 },
            freq_mask: MaskSpec { max_size: 50, num: 2 },
            random_crop: AudioCropSpec {
                range: [0.6, 1.5],
                crop_scale: [1.0, 1.5],
            },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColorJitter {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    /// Maximum hue shift in turns, at most 0.5.
    pub hue: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VisualAugment {
    pub min_area: f64,
    pub aspect: [f64; 2],
    pub hflip: f64,
    pub color_jitter: ColorJitter,
    pub grayscale: f64,
    pub cutout: MaskSpec,
}

impl Default for VisualAugment {
    fn default() -> Self {
        Self {
            min_area: 0.2,
            aspect: [3.0 / 4.0, 4.0 / 3.0],
            hflip: 0.5,
            color_jitter: ColorJitter {
                brightness: 1.0,
                contrast: 1.0,
                saturation: 1.0,
                hue: 0.5,
            },
            grayscale: 0.2,
            cutout: MaskSpec { max_size: 50, num: 1 },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentPolicy {
    pub enabled: bool,
    /// Mixed into every per-clip stream.
    pub seed: u64,
    pub audio: AudioAugment,
    pub visual: VisualAugment,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        Self {
            enabled: true,
            seed: 0,
            audio: AudioAugment::default(),
            visual: VisualAugment::default(),
        }
    }
}

impl AugmentPolicy {
    /// Every transform configured as an exact no-op.
    pub fn identity() -> Self {
        Self {
            enabled: true,
            seed: 0,
            audio: AudioAugment {
                volume_jitter: 0.0,
                time_mask: MaskSpec { max_size: 0, num: 0 },
                freq_mask: MaskSpec { max_size: 0, num: 0 },
                random_crop: AudioCropSpec {
                    range: [1.0, 1.0],
                    crop_scale: [1.0, 1.0],
                },
            },
            visual: VisualAugment {
                min_area: 1.0,
                aspect: [1.0, 1.0],
                hflip: 0.0,
                color_jitter: ColorJitter {
                    brightness: 0.0,
                    contrast: 0.0,
                    saturation: 0.0,
                    hue: 0.0,
                },
                grayscale: 0.0,
                cutout: MaskSpec { max_size: 0, num: 0 },
            },
        }
    }

    /// Lists every violated constraint.
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        let mut prob = |name: &str, p: f64| {
            if !(0.0..=1.0).contains(&p) {
                errs.push(format!("augment.{name} must be a probability, got {p}"));
            }
        };
        prob("visual.hflip", self.visual.hflip);
        prob("visual.grayscale", self.visual.grayscale);
        let mut check = |ok: bool, msg: &str| {
            if !ok {
                errs.push(format!("augment.{msg}"));
            }
        };
        let a = &self.audio;
        check((0.0..1.0).contains(&a.volume_jitter), "audio.volume_jitter must lie in [0, 1)");
        let [lo, hi] = a.random_crop.range;
        check(lo > 0.0 && lo <= hi, "audio.random_crop.range must be ordered and positive");
        let [lo, hi] = a.random_crop.crop_scale;
        check(lo >= 1.0 && lo <= hi, "audio.random_crop.crop_scale must be ordered and >= 1");
        let v = &self.visual;
        check(v.min_area > 0.0 && v.min_area <= 1.0, "visual.min_area must lie in (0, 1]");
        check(v.aspect[0] > 0.0 && v.aspect[0] <= v.aspect[1], "visual.aspect must be ordered and positive");
        let j = &v.color_jitter;
        check(
            j.brightness >= 0.0 && j.contrast >= 0.0 && j.saturation >= 0.0,
            "visual.color_jitter strengths must be >= 0",
        );
        check((0.0..=0.5).contains(&j.hue), "visual.color_jitter.hue must lie in [0, 0.5]");
        errs
    }
}

fn gain(range: f64, rng: &mut Rng) -> f64 {
    if range == 0.0 {
        1.0
    } else {
        rng.uniform_range(1.0 - range, 1.0 + range)
    }
}

/// Scales the waveform by `g ~ U[1 - range, 1 + range]`.
pub fn volume_jitter_wave(w: &Waveform, range: f64, rng: &mut Rng) -> Waveform {
    let g = gain(range, rng) as f32;
    Waveform {
        samples: w.samples.iter().map(|&s| s * g).collect(),
        sample_rate: w.sample_rate,
    }
}

/// The same gain applied to a dB power spectrogram: a shift by `20 log10 g`,
/// never below the floor.
pub fn volume_jitter_mel(spec: &MelSpec, range: f64, floor_db: f32, rng: &mut Rng) -> MelSpec {
    let g = gain(range, rng);
    if g == 1.0 {
        return spec.clone();
    }
    let shift = (20.0 * g.log10()) as f32;
    MelSpec {
        values: spec.values.map(|v| (v + shift).max(floor_db)),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskAxis {
    Time,
    Freq,
}

/// Draws `num` bands `[start, end)` of width `~ U{0..max_size}` clipped to `extent`.
pub fn draw_bands(extent: usize, mask: MaskSpec, rng: &mut Rng) -> Vec<(usize, usize)> {
    if mask.max_size == 0 || extent == 0 {
        return Vec::new();
    }
    (0..mask.num)
        .map(|_| {
            let width = rng.below(mask.max_size as u64 + 1) as usize;
            let start = rng.below(extent as u64) as usize;
            (start, (start + width).min(extent))
        })
        .collect()
}

pub fn apply_bands(spec: &MelSpec, axis: MaskAxis, bands: &[(usize, usize)], fill: f32) -> MelSpec {
    let (mels, frames) = (spec.n_mels(), spec.frames());
    let mut values = spec.values.clone();
    let data = values.data_mut();
    for &(s, e) in bands {
        for i in s..e {
            match axis {
                MaskAxis::Time => (0..mels).for_each(|m| data[m * frames + i] = fill),
                MaskAxis::Freq => data[i * frames..(i + 1) * frames].fill(fill),
            }
        }
    }
    MelSpec { values }
}

/// SpecAugment-style masking; masked cells take `fill` (the spectrogram floor).
pub fn time_freq_mask(spec: &MelSpec, axis: MaskAxis, mask: MaskSpec, fill: f32, rng: &mut Rng) -> MelSpec {
    let extent = match axis {
        MaskAxis::Time => spec.frames(),
        MaskAxis::Freq => spec.n_mels(),
    };
    let bands = draw_bands(extent, mask, rng);
    apply_bands(spec, axis, &bands, fill)
}

/// Window geometry drawn by [`random_crop_audio`]. Offsets may be negative;
/// out-of-range indices reflect.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AudioCrop {
    pub time_len: usize,
    pub time_offset: isize,
    pub freq_len: usize,
    pub freq_offset: usize,
}

pub fn draw_audio_crop(mels: usize, frames: usize, spec: AudioCropSpec, rng: &mut Rng) -> AudioCrop {
    let draw = |rng: &mut Rng, [lo, hi]: [f64; 2]| if lo == hi { lo } else { rng.uniform_range(lo, hi) };
    let r = draw(rng, spec.range);
    let time_len = ((frames as f64 * r).round() as usize).max(1);
    let time_offset = if time_len <= frames {
        rng.below((frames - time_len) as u64 + 1) as isize
    } else {
        -(rng.below((time_len - frames) as u64 + 1) as isize)
    };
    let s = draw(rng, spec.crop_scale);
    let freq_len = ((mels as f64 / s).round() as usize).clamp(1, mels);
    let freq_offset = rng.below((mels - freq_len) as u64 + 1) as usize;
    AudioCrop {
        time_len,
        time_offset,
        freq_len,
        freq_offset,
    }
}

/// Source coordinate for output position `t` when stretching `len` samples to `out`.
fn stretch(t: usize, len: usize, out: usize) -> f64 {
    if out == 1 {
        0.0
    } else {
        t as f64 * (len - 1) as f64 / (out - 1) as f64
    }
}

pub fn apply_audio_crop(spec: &MelSpec, c: AudioCrop) -> MelSpec {
    let (mels, frames) = (spec.n_mels(), spec.frames());
    let src = spec.values.data();
    let time_map: Vec<(usize, usize, f32)> = (0..frames)
        .map(|t| {
            let x = stretch(t, c.time_len, frames);
            let lo = x.floor();
            let i0 = reflect_index(c.time_offset + lo as isize, frames);
            let i1 = reflect_index(c.time_offset + (lo as isize + 1).min(c.time_len as isize - 1), frames);
            (i0, i1, (x - lo) as f32)
        })
        .collect();
    let freq_map: Vec<(usize, usize, f32)> = (0..mels)
        .map(|m| {
            let y = stretch(m, c.freq_len, mels);
            let lo = y.floor() as usize;
            let hi = (lo + 1).min(c.freq_len - 1);
            (c.freq_offset + lo, c.freq_offset + hi, (y - lo as f64) as f32)
        })
        .collect();
    let lerp = |a: f32, b: f32, f: f32| if f == 0.0 { a } else { a + (b - a) * f };
    let mut out = Vec::with_capacity(mels * frames);
    for &(m0, m1, fm) in &freq_map {
        for &(t0, t1, ft) in &time_map {
            let top = lerp(src[m0 * frames + t0], src[m0 * frames + t1], ft);
            let bottom = lerp(src[m1 * frames + t0], src[m1 * frames + t1], ft);
            out.push(lerp(top, bottom, fm));
        }
    }
    MelSpec {
        values: Tensor::new(vec![mels, frames], out).expect("shape preserved"),
    }
}

/// Temporal window of `round(frames * r)` columns stretched back to `frames`,
/// plus the frequency zoom of `crop_scale`.
pub fn random_crop_audio(spec: &MelSpec, crop_spec: AudioCropSpec, rng: &mut Rng) -> MelSpec {
    let c = draw_audio_crop(spec.n_mels(), spec.frames(), crop_spec, rng);
    apply_audio_crop(spec, c)
}

/// Full audio policy: volume, crop, time masks, frequency masks.
pub fn audio_augment(spec: &MelSpec, a: &AudioAugment, floor_db: f32, rng: &mut Rng) -> MelSpec {
    let s = volume_jitter_mel(spec, a.volume_jitter, floor_db, rng);
    let s = random_crop_audio(&s, a.random_crop, rng);
    let s = time_freq_mask(&s, MaskAxis::Time, a.time_mask, floor_db, rng);
    time_freq_mask(&s, MaskAxis::Freq, a.freq_mask, floor_db, rng)
}

/// Per-clip visual draw.
#[derive(Clone, Debug, PartialEq)]
pub struct VisualDraw {
    /// `(top, left, height, width)`; `None` keeps the whole frame.
    pub crop: Option<(usize, usize, usize, usize)>,
    pub flip: bool,
    pub brightness: f32,
    pub contrast: f32,
    pub saturation: f32,
    pub hue: f32,
    pub grayscale: bool,
    /// `(top, left, side)` squares.
    pub cutouts: Vec<(usize, usize, usize)>,
}

fn factor(strength: f64, rng: &mut Rng) -> f32 {
    if strength == 0.0 {
        1.0
    } else {
        rng.uniform_range((1.0 - strength).max(0.0), 1.0 + strength) as f32
    }
}

pub fn draw_visual(height: usize, width: usize, v: &VisualAugment, rng: &mut Rng) -> VisualDraw {
    let mut crop = None;
    if v.min_area < 1.0 || v.aspect != [1.0, 1.0] {
        let area = (height * width) as f64;
        for _ in 0..10 {
            let target = area * rng.uniform_range(v.min_area, 1.0);
            let ratio = if v.aspect[0] == v.aspect[1] {
                v.aspect[0]
            } else {
                rng.uniform_range(v.aspect[0], v.aspect[1])
            };
            let w = (target * ratio).sqrt().round() as usize;
            let h = (target / ratio).sqrt().round() as usize;
            if (1..=width).contains(&w) && (1..=height).contains(&h) {
                let top = rng.below((height - h) as u64 + 1) as usize;
                let left = rng.below((width - w) as u64 + 1) as usize;
                crop = Some((top, left, h, w));
                break;
            }
        }
    }
    let flip = v.hflip > 0.0 && rng.bernoulli(v.hflip);
    let j = &v.color_jitter;
    let brightness = factor(j.brightness, rng);
    let contrast = factor(j.contrast, rng);
    let saturation = factor(j.saturation, rng);
    let hue = if j.hue == 0.0 {
        0.0
    } else {
        rng.uniform_range(-j.hue, j.hue) as f32
    };
    let grayscale = v.grayscale > 0.0 && rng.bernoulli(v.grayscale);
    let cutouts = if v.cutout.max_size == 0 {
        Vec::new()
    } else {
        (0..v.cutout.num)
            .filter_map(|_| {
                let side = (rng.below(v.cutout.max_size as u64 + 1) as usize).min(height).min(width);
                let top = rng.below((height - side) as u64 + 1) as usize;
                let left = rng.below((width - side) as u64 + 1) as usize;
                (side > 0).then_some((top, left, side))
            })
            .collect()
    };
    VisualDraw {
        crop,
        flip,
        brightness,
        contrast,
        saturation,
        hue,
        grayscale,
        cutouts,
    }
}

pub fn hflip(frame: &Frame) -> Frame {
    let mut out = frame.clone();
    for y in 0..frame.height {
        for x in 0..frame.width {
            for c in 0..frame.channels {
                out.set(y, frame.width - 1 - x, c, frame.get(y, x, c));
            }
        }
    }
    out
}

fn luma(px: &[f32]) -> f32 {
    LUMA[0] * px[0] + LUMA[1] * px[1] + LUMA[2] * px[2]
}

fn rgb_to_hsv([r, g, b]: [f32; 3]) -> [f32; 3] {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let h = if d == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / d).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / d + 2.0) / 6.0
    } else {
        ((r - g) / d + 4.0) / 6.0
    };
    let s = if max == 0.0 { 0.0 } else { d / max };
    [h, s, max]
}

fn hsv_to_rgb([h, s, v]: [f32; 3]) -> [f32; 3] {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let i = h6.floor();
    let f = h6 - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match i as u32 % 6 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// Brightness, contrast, saturation, then hue; each clamps to [0, 1] and is
/// skipped at its neutral value.
pub fn color_jitter(frame: &mut Frame, brightness: f32, contrast: f32, saturation: f32, hue: f32) {
    if frame.channels != 3 {
        return;
    }
    if brightness != 1.0 {
        frame.data.iter_mut().for_each(|v| *v = (*v * brightness).clamp(0.0, 1.0));
    }
    if contrast != 1.0 {
        let n = (frame.height * frame.width) as f32;
        let mean = frame.data.chunks_exact(3).map(luma).sum::<f32>() / n;
        frame
            .data
            .iter_mut()
            .for_each(|v| *v = (mean + contrast * (*v - mean)).clamp(0.0, 1.0));
    }
    if saturation != 1.0 {
        for p in frame.data.chunks_exact_mut(3) {
            let g = luma(p);
            p.iter_mut().for_each(|v| *v = (g + saturation * (*v - g)).clamp(0.0, 1.0));
        }
    }
    if hue != 0.0 {
        for p in frame.data.chunks_exact_mut(3) {
            let [h, s, v] = rgb_to_hsv([p[0], p[1], p[2]]);
            let rgb = hsv_to_rgb([h + hue, s, v]);
            p.copy_from_slice(&rgb.map(|c| c.clamp(0.0, 1.0)));
        }
    }
}

/// Applies one draw to every frame of a clip.
pub fn apply_visual(frames: &[Frame], d: &VisualDraw) -> Result<Vec<Frame>> {
    let mut out = Vec::with_capacity(frames.len());
    for f in frames {
        let mut g = match d.crop {
            Some((top, left, h, w)) => resize(&crop(f, top, left, h, w)?, f.height, f.width),
            None => f.clone(),
        };
        if d.flip {
            g = hflip(&g);
        }
        color_jitter(&mut g, d.brightness, d.contrast, d.saturation, d.hue);
        if d.grayscale && g.channels == 3 {
            for p in g.data.chunks_exact_mut(3) {
                let y = luma(p);
                p.fill(y);
            }
        }
        out.push(g);
    }
    if !d.cutouts.is_empty() {
        let c = out[0].channels;
        let mut mean = vec![0f64; c];
        for f in &out {
            for p in f.data.chunks_exact(c) {
                p.iter().zip(mean.iter_mut()).for_each(|(&v, m)| *m += v as f64);
            }
        }
        let n = (out.len() * out[0].height * out[0].width) as f64;
        let mean: Vec<f32> = mean.iter().map(|m| (m / n) as f32).collect();
        for f in &mut out {
            for &(top, left, side) in &d.cutouts {
                for y in top..(top + side).min(f.height) {
                    for x in left..(left + side).min(f.width) {
                        (0..c).for_each(|ch| f.set(y, x, ch, mean[ch]));
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Multi-scale crop, flip, color jitter, grayscale and cutout with one draw per clip.
pub fn visual_augment(frames: &[Frame], v: &VisualAugment, rng: &mut Rng) -> Result<Vec<Frame>> {
    let first = frames.first().ok_or_else(|| invalid("no frames to augment"))?;
    if first.channels != 3 {
        return Err(invalid("visual augmentation expects RGB frames"));
    }
    let d = draw_visual(first.height, first.width, v, rng);
    apply_visual(frames, &d)
}
