//! Audio frontend: resampling, length fixing and log-mel spectrograms.

use std::f64::consts::PI;
use std::path::Path;

use mm_tensor::Tensor;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Mono PCM signal.
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(invalid("sample rate must be positive"));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(invalid("waveform contains non-finite samples"));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Reads a single-channel WAV file (16-bit PCM or 32-bit float).
    pub fn read_wav(path: &Path) -> Result<Self> {
        let mut reader = hound::WavReader::open(path)?;
        let spec = reader.spec();
        if spec.channels != 1 {
            return Err(invalid(format!(
                "{}: expected mono audio, found {} channels",
                path.display(),
                spec.channels
            )));
        }
        let samples = match (spec.sample_format, spec.bits_per_sample) {
            (hound::SampleFormat::Int, 16) => reader
                .samples::<i16>()
                .map(|s| s.map(|v| v as f32 / 32768.0))
                .collect::<Result<Vec<_>, _>>()?,
            (hound::SampleFormat::Float, 32) => reader.samples::<f32>().collect::<Result<Vec<_>, _>>()?,
            (fmt, bits) => {
                return Err(invalid(format!(
                    "{}: unsupported WAV encoding {fmt:?}/{bits} bits",
                    path.display()
                )))
            }
        };
        Self::new(samples, spec.sample_rate)
    }

    /// Writes 16-bit PCM, clipping to [-1, 1].
    pub fn write_wav(&self, path: &Path) -> Result<()> {
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: self.sample_rate,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut writer = hound::WavWriter::create(path, spec)?;
        for &s in &self.samples {
            writer.write_sample((s.clamp(-1.0, 1.0) * 32767.0).round() as i16)?;
        }
        writer.finalize()?;
        Ok(())
    }
}

/// Zero crossings of the sinc kernel on each side of its center.
const SINC_ZERO_CROSSINGS: usize = 32;
const MAX_POLYPHASE: u64 = 4096;

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Band-limited resampling with a Hann-windowed sinc kernel.
///
/// The cutoff sits at the lower of the two Nyquist rates. Rational ratios
/// with a small reduced denominator use a precomputed polyphase table.
pub fn resample(w: &Waveform, target_rate: u32) -> Result<Waveform> {
    if w.samples.is_empty() {
        return Err(invalid("cannot resample an empty waveform"));
    }
    if target_rate == 0 {
        return Err(invalid("target rate must be positive"));
    }
    if w.sample_rate == target_rate {
        return Ok(w.clone());
    }
    let (src, dst) = (w.sample_rate as u64, target_rate as u64);
    let g = gcd(src, dst);
    let (up, down) = (dst / g, src / g);
    let n_in = w.samples.len() as u64;
    let n_out = (n_in * up).div_ceil(down) as usize;

    let cutoff = (dst as f64 / src as f64).min(1.0);
    let half_width = SINC_ZERO_CROSSINGS as f64 / cutoff;
    let taps = half_width.ceil() as i64;
    let kernel = |x: f64| -> f64 {
        if x.abs() >= half_width {
            return 0.0;
        }
        let arg = PI * cutoff * x;
        let sinc = if arg == 0.0 { 1.0 } else { arg.sin() / arg };
        let window = 0.5 * (1.0 + (PI * x / half_width).cos());
        cutoff * sinc * window
    };

    let x = &w.samples;
    let read = |i: i64| -> f64 {
        if i < 0 || i >= x.len() as i64 {
            0.0
        } else {
            x[i as usize] as f64
        }
    };
    let mut out = Vec::with_capacity(n_out);
    if up <= MAX_POLYPHASE {
        // phase p: output position = base + p/up source samples
        let table: Vec<Vec<f64>> = (0..up)
            .map(|p| {
                let frac = p as f64 / up as f64;
                (-taps + 1..=taps).map(|o| kernel(o as f64 - frac)).collect()
            })
            .collect();
        for j in 0..n_out as u64 {
            let num = j * down;
            let base = (num / up) as i64;
            let phase = &table[(num % up) as usize];
            let mut acc = 0.0;
            for (o, &h) in (-taps + 1..=taps).zip(phase) {
                acc += h * read(base + o);
            }
            out.push(acc as f32);
        }
    } else {
        let step = src as f64 / dst as f64;
        for j in 0..n_out {
            let t = j as f64 * step;
            let base = t.floor() as i64;
            let mut acc = 0.0;
            for o in -taps + 1..=taps {
                acc += kernel((base + o) as f64 - t) * read(base + o);
            }
            out.push(acc as f32);
        }
    }
    Waveform::new(out, target_rate)
}

/// Pads with trailing zeros or truncates, keeping the head.
pub fn fix_length(w: &Waveform, target_len: usize) -> Result<Waveform> {
    if target_len == 0 {
        return Err(invalid("target length must be positive"));
    }
    let mut samples = w.samples.clone();
    samples.resize(target_len, 0.0);
    Ok(Waveform {
        samples,
        sample_rate: w.sample_rate,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MelParams {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub f_min: f64,
    pub f_max: f64,
    pub clip_seconds: f64,
    /// Power floor before dB conversion.
    pub floor: f64,
}

impl Default for MelParams {
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            n_fft: 1024,
            hop: 160,
            n_mels: 80,
            f_min: 0.0,
            f_max: 8_000.0,
            clip_seconds: 6.0,
            floor: 1e-10,
        }
    }
}

impl MelParams {
    pub fn clip_samples(&self) -> usize {
        (self.clip_seconds * self.sample_rate as f64).round() as usize
    }

    /// Frames produced by the centered STFT of a fixed-length clip.
    pub fn frames(&self) -> usize {
        self.clip_samples() / self.hop + 1
    }

    pub fn floor_db(&self) -> f64 {
        10.0 * self.floor.log10()
    }
}

/// Log-mel spectrogram `[n_mels, frames]` in dB.
#[derive(Clone, Debug, PartialEq)]
pub struct MelSpec {
    pub values: Tensor<f32>,
}

impl MelSpec {
    pub fn n_mels(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn frames(&self) -> usize {
        self.values.shape()[1]
    }
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular HTK filterbank `[n_mels][n_fft/2 + 1]`, unnormalized.
pub fn mel_filterbank(p: &MelParams) -> Vec<Vec<f64>> {
    let n_freqs = p.n_fft / 2 + 1;
    let (m_lo, m_hi) = (hz_to_mel(p.f_min), hz_to_mel(p.f_max));
    let points: Vec<f64> = (0..p.n_mels + 2)
        .map(|i| mel_to_hz(m_lo + (m_hi - m_lo) * i as f64 / (p.n_mels + 1) as f64))
        .collect();
    let bin_hz = |k: usize| k as f64 * p.sample_rate as f64 / p.n_fft as f64;
    (0..p.n_mels)
        .map(|m| {
            let (left, center, right) = (points[m], points[m + 1], points[m + 2]);
            (0..n_freqs)
                .map(|k| {
                    let f = bin_hz(k);
                    let up = (f - left) / (center - left);
                    let down = (right - f) / (right - center);
                    up.min(down).max(0.0)
                })
                .collect()
        })
        .collect()
}

fn hann_periodic(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).collect()
}

pub(crate) fn reflect_index(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - m;
    }
    m as usize
}

/// Centered (reflect-padded) Hann STFT power spectrum, `[frames][n_fft/2 + 1]`.
pub fn power_spectrogram(samples: &[f32], n_fft: usize, hop: usize) -> Vec<Vec<f64>> {
    let window = hann_periodic(n_fft);
    let pad = (n_fft / 2) as isize;
    let frames = samples.len() / hop + 1;
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n_fft);
    let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
    let mut out = Vec::with_capacity(frames);
    for t in 0..frames {
        let start = (t * hop) as isize - pad;
        for (i, b) in buf.iter_mut().enumerate() {
            let s = samples[reflect_index(start + i as isize, samples.len())] as f64;
            *b = Complex::new(s * window[i], 0.0);
        }
        fft.process(&mut buf);
        out.push(buf[..n_fft / 2 + 1].iter().map(|c| c.norm_sqr()).collect());
    }
    out
}

/// Log-mel spectrogram of a waveform already at `p.sample_rate` and fixed to
/// `p.clip_samples()` samples.
pub fn mel_spectrogram(w: &Waveform, p: &MelParams) -> Result<MelSpec> {
    if w.sample_rate != p.sample_rate {
        return Err(invalid(format!(
            "waveform is at {} Hz; resample to {} Hz first",
            w.sample_rate, p.sample_rate
        )));
    }
    if w.samples.len() != p.clip_samples() {
        return Err(invalid(format!(
            "waveform has {} samples; fix its length to {} first",
            w.samples.len(),
            p.clip_samples()
        )));
    }
    let power = power_spectrogram(&w.samples, p.n_fft, p.hop);
    let bank = mel_filterbank(p);
    let frames = power.len();
    let mut values = vec![0f32; p.n_mels * frames];
    for (m, filt) in bank.iter().enumerate() {
        for (t, spec) in power.iter().enumerate() {
            let e: f64 = filt.iter().zip(spec).map(|(a, b)| a * b).sum();
            values[m * frames + t] = (10.0 * e.max(p.floor).log10()) as f32;
        }
    }
    Ok(MelSpec {
        values: Tensor::new(vec![p.n_mels, frames], values)?,
    })
}

/// Full audio pipeline: resample, fix length, log-mel.
pub fn preprocess_audio(w: &Waveform, p: &MelParams) -> Result<MelSpec> {
    let resampled = resample(w, p.sample_rate)?;
    let fixed = fix_length(&resampled, p.clip_samples())?;
    mel_spectrogram(&fixed, p)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, rate: u32, seconds: f64, amp: f64) -> Waveform {
        let n = (rate as f64 * seconds) as usize;
        let samples = (0..n)
            .map(|i| (amp * (2.0 * PI * freq * i as f64 / rate as f64).sin()) as f32)
            .collect();
        Waveform::new(samples, rate).unwrap()
    }

    #[test]
    fn resample_same_rate_is_identity() {
        let w = sine(300.0, 16_000, 0.1, 0.5);
        assert_eq!(resample(&w, 16_000).unwrap(), w);
    }

    #[test]
    fn resample_halves_length() {
        let w = sine(300.0, 32_000, 0.5, 0.5);
        let out = resample(&w, 16_000).unwrap();
        assert!((out.samples.len() as i64 - w.samples.len() as i64 / 2).abs() <= 1);
        assert_eq!(out.sample_rate, 16_000);
    }

    #[test]
    fn resample_keeps_tone_frequency() {
        let w = sine(440.0, 48_000, 1.0, 0.8);
        let out = resample(&w, 16_000).unwrap();
        let n = out.samples.len();
        let mut buf: Vec<Complex<f64>> = out.samples.iter().map(|&s| Complex::new(s as f64, 0.0)).collect();
        FftPlanner::new().plan_fft_forward(n).process(&mut buf);
        let peak = (0..n / 2).max_by(|&a, &b| buf[a].norm().total_cmp(&buf[b].norm())).unwrap();
        let bin_hz = 16_000.0 / n as f64;
        assert!((peak as f64 * bin_hz - 440.0).abs() <= bin_hz, "peak {}", peak as f64 * bin_hz);
    }

    #[test]
    fn resample_rejects_empty() {
        let w = Waveform::new(Vec::new(), 8000).unwrap();
        assert!(resample(&w, 16_000).is_err());
    }

    #[test]
    fn fix_length_cases() {
        let w = Waveform::new(vec![0.25; 96_000], 16_000).unwrap();
        assert_eq!(fix_length(&w, 96_000).unwrap(), w);
        let short = Waveform::new(vec![0.5; 80_000], 16_000).unwrap();
        let padded = fix_length(&short, 96_000).unwrap();
        assert_eq!(padded.samples.len(), 96_000);
        assert!(padded.samples[80_000..].iter().all(|&s| s == 0.0));
        assert!(padded.samples[..80_000].iter().all(|&s| s == 0.5));
        let long = Waveform::new((0..100_000).map(|i| i as f32).collect(), 16_000).unwrap();
        let cut = fix_length(&long, 96_000).unwrap();
        assert_eq!(cut.samples, long.samples[..96_000].to_vec());
    }

    #[test]
    fn six_seconds_give_601_frames_and_silence_hits_floor() {
        let p = MelParams::default();
        assert_eq!(p.frames(), 601);
        let w = Waveform::new(vec![0.0; 96_000], 16_000).unwrap();
        let mel = mel_spectrogram(&w, &p).unwrap();
        assert_eq!(mel.values.shape(), &[80, 601]);
        assert!(mel.values.data().iter().all(|&v| v == -100.0));
    }

    #[test]
    fn wrong_rate_is_rejected() {
        let w = Waveform::new(vec![0.0; 96_000], 8000).unwrap();
        let err = mel_spectrogram(&w, &MelParams::default()).unwrap_err().to_string();
        assert!(err.contains("resample"), "{err}");
    }

    #[test]
    fn one_khz_tone_peaks_at_nearest_filter() {
        let p = MelParams::default();
        // filter centers from explicit HTK breakpoints
        let m_hi = 2595.0 * (1.0f64 + 8000.0 / 700.0).log10();
        let centers: Vec<f64> = (1..=80)
            .map(|i| 700.0 * (10f64.powf(m_hi * i as f64 / 81.0 / 2595.0) - 1.0))
            .collect();
        let nearest = (0..80)
            .min_by(|&a, &b| (centers[a] - 1000.0).abs().total_cmp(&(centers[b] - 1000.0).abs()))
            .unwrap();
        let mel = mel_spectrogram(&sine(1000.0, 16_000, 6.0, 0.5), &p).unwrap();
        for t in [5, 300, 595] {
            let argmax = (0..80)
                .max_by(|&a, &b| mel.values.at(&[a, t]).total_cmp(&mel.values.at(&[b, t])))
                .unwrap();
            assert_eq!(argmax, nearest, "frame {t}");
        }
    }

    #[test]
    fn windowed_sine_energy_matches_parseval() {
        let (n_fft, amp) = (1024usize, 0.7);
        let w = sine(1234.5, 16_000, 1.0, amp);
        let power = power_spectrogram(&w.samples, n_fft, 160);
        // one-sided sum ≈ half of N·Σ(w·x)² ≈ N/2 · A²/2 · 3N/8
        let predicted = n_fft as f64 / 2.0 * amp * amp / 2.0 * 3.0 * n_fft as f64 / 8.0;
        for frame in [20, 50, 80] {
            let total: f64 = power[frame].iter().sum();
            assert!((total / predicted - 1.0).abs() < 0.05, "{total} vs {predicted}");
        }
    }

    #[test]
    fn filterbank_geometry() {
        let bank = mel_filterbank(&MelParams::default());
        assert_eq!(bank.len(), 80);
        for row in &bank {
            assert!(row.iter().all(|&v| v >= 0.0));
            assert!(row.iter().any(|&v| v > 0.0));
        }
        for pair in bank.windows(2) {
            assert!(pair[0].iter().zip(&pair[1]).any(|(a, b)| *a > 0.0 && *b > 0.0));
        }
    }

    #[test]
    fn mel_is_deterministic() {
        let p = MelParams::default();
        let w = sine(777.0, 16_000, 6.0, 0.3);
        assert_eq!(mel_spectrogram(&w, &p).unwrap(), mel_spectrogram(&w, &p).unwrap());
    }

    #[test]
    fn wav_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        let w = sine(200.0, 22_050, 0.2, 0.5);
        w.write_wav(&path).unwrap();
        let back = Waveform::read_wav(&path).unwrap();
        assert_eq!(back.sample_rate, 22_050);
        assert_eq!(back.samples.len(), w.samples.len());
        for (a, b) in back.samples.iter().zip(&w.samples) {
            assert!((a - b).abs() < 1e-4);
        }
    }
}
