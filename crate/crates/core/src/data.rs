//! Dataset manifests, leakage-safe participant splits, label binarization,
//! clip sampling and the synthetic dataset generator.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use mm_tensor::Rng;
use serde::{Deserialize, Serialize};

use crate::audio::Waveform;
use crate::error::{invalid, Error, IoContext, Result};
use crate::video::{write_mmv1, Frame};

/// Upper end of the NASA-TLX scale used for raw scores.
pub const SCORE_MAX: f64 = 20.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClipRecord {
    pub clip_id: String,
    pub participant_id: String,
    pub task_id: String,
    /// Relative to the manifest's directory unless absolute.
    pub audio_path: String,
    pub video_path: String,
    /// Mental demand, effort, temporal demand on 0–20.
    pub raw_scores: [f64; 3],
    pub labels: [u8; 3],
    pub duration_seconds: f64,
}

impl ClipRecord {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration_seconds > 0.0) {
            return Err(invalid(format!("clip {}: duration must be positive", self.clip_id)));
        }
        if self.raw_scores.iter().any(|s| !(0.0..=SCORE_MAX).contains(s)) {
            return Err(invalid(format!("clip {}: raw scores must lie in [0, 20]", self.clip_id)));
        }
        if self.labels.iter().any(|&l| l > 1) {
            return Err(invalid(format!("clip {}: labels must be 0 or 1", self.clip_id)));
        }
        Ok(())
    }

    pub fn audio_file(&self, root: &Path) -> PathBuf {
        root.join(&self.audio_path)
    }

    pub fn video_file(&self, root: &Path) -> PathBuf {
        root.join(&self.video_path)
    }
}

pub fn manifest_json(records: &[ClipRecord]) -> String {
    serde_json::to_string_pretty(records).expect("records serialize") + "\n"
}

pub fn write_manifest(path: &Path, records: &[ClipRecord]) -> Result<()> {
    std::fs::write(path, manifest_json(records)).at(path)
}

/// Reads and validates a manifest; clip ids must be unique.
pub fn read_manifest(path: &Path) -> Result<Vec<ClipRecord>> {
    let text = std::fs::read_to_string(path).at(path)?;
    let records: Vec<ClipRecord> = serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    let mut seen = BTreeSet::new();
    for r in &records {
        r.validate()?;
        if !seen.insert(r.clip_id.as_str()) {
            return Err(invalid(format!("duplicate clip id {}", r.clip_id)));
        }
    }
    Ok(records)
}

/// 1 iff `score >= threshold`.
pub fn binarize_labels(score: f64, threshold: f64) -> Result<u8> {
    if !(0.0..=SCORE_MAX).contains(&score) {
        return Err(invalid(format!("score {score} outside [0, 20]")));
    }
    Ok(u8::from(score >= threshold))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(invalid(format!("unknown split {s:?} (expected train, val or test)"))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

/// Participant ids per split plus clip counts.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
    pub counts: SplitCounts,
}

impl SplitSpec {
    pub fn participants(&self, split: Split) -> &[String] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn split_of(&self, participant: &str) -> Option<Split> {
        [Split::Train, Split::Val, Split::Test]
            .into_iter()
            .find(|&s| self.participants(s).iter().any(|p| p == participant))
    }

    /// Records of `split`, in manifest order.
    pub fn select<'a>(&self, records: &'a [ClipRecord], split: Split) -> Vec<&'a ClipRecord> {
        let ids: BTreeSet<&str> = self.participants(split).iter().map(String::as_str).collect();
        records.iter().filter(|r| ids.contains(r.participant_id.as_str())).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("split serializes") + "\n"
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).at(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })
    }
}

/// Participant counts per split: largest remainder, then at least one for
/// every split with a nonzero fraction.
fn allocate(n: usize, fractions: [f64; 3]) -> [usize; 3] {
    let exact = fractions.map(|f| f * n as f64);
    let mut counts = exact.map(|e| e.floor() as usize);
    let mut order = [0, 1, 2];
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    let mut left = n - counts.iter().sum::<usize>();
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        if fractions[i] > 0.0 {
            counts[i] += 1;
            left -= 1;
        }
    }
    for i in 0..3 {
        if fractions[i] > 0.0 && counts[i] == 0 {
            let donor = (0..3).max_by_key(|&j| (counts[j], std::cmp::Reverse(j))).expect("three splits");
            counts[donor] -= 1;
            counts[i] += 1;
        }
    }
    counts
}

/// Shuffles participants by `seed` and partitions them by `fractions`
/// (train, val, test); every clip follows its participant.
pub fn split_by_participant(records: &[ClipRecord], fractions: [f64; 3], seed: u64) -> Result<SplitSpec> {
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(invalid(format!("split fractions {fractions:?} must be in [0, 1] and sum to 1")));
    }
    let mut people: Vec<String> = records
        .iter()
        .map(|r| r.participant_id.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let needed = fractions.iter().filter(|&&f| f > 0.0).count();
    if people.len() < needed {
        return Err(invalid(format!(
            "{} participants cannot fill {needed} non-empty splits",
            people.len()
        )));
    }
    Rng::new(seed).shuffle(&mut people);
    let [a, b, _] = allocate(people.len(), fractions);
    let sorted = |v: &[String]| {
        let mut v = v.to_vec();
        v.sort();
        v
    };
    let mut spec = SplitSpec {
        train: sorted(&people[..a]),
        val: sorted(&people[a..a + b]),
        test: sorted(&people[a + b..]),
        counts: SplitCounts::default(),
    };
    for r in records {
        match spec.split_of(&r.participant_id).expect("every participant assigned") {
            Split::Train => spec.counts.train += 1,
            Split::Val => spec.counts.val += 1,
            Split::Test => spec.counts.test += 1,
        }
    }
    Ok(spec)
}

/// A long recording from which fixed-length clips are cut.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceRecording {
    pub participant_id: String,
    pub task_id: String,
    pub duration_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipWindow {
    pub participant_id: String,
    pub task_id: String,
    pub start_seconds: f64,
    pub duration_seconds: f64,
}

/// Up to `per_source` distinct whole-second start offsets per recording,
/// sorted; recordings shorter than a clip yield one window at 0.
pub fn sample_clips(sources: &[SourceRecording], per_source: usize, clip_seconds: f64, seed: u64) -> Vec<ClipWindow> {
    let root = Rng::new(seed);
    let mut out = Vec::new();
    for (i, s) in sources.iter().enumerate() {
        let mut rng = root.split(i as u64);
        let slots = ((s.duration_seconds - clip_seconds).floor().max(0.0) as u64) + 1;
        let take = (per_source as u64).min(slots);
        // Floyd's algorithm: `take` distinct values from 0..slots
        let mut chosen = BTreeSet::new();
        for j in slots - take..slots {
            let t = rng.below(j + 1);
            if !chosen.insert(t) {
                chosen.insert(j);
            }
        }
        out.extend(chosen.into_iter().map(|start| ClipWindow {
            participant_id: s.participant_id.clone(),
            task_id: s.task_id.clone(),
            start_seconds: start as f64,
            duration_seconds: clip_seconds,
        }));
    }
    out
}

/// Synthetic dataset parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub participants: usize,
    pub clips_each: usize,
    pub seed: u64,
    /// Scales cue amplitude and contrast; 0 removes every cue.
    pub signal_strength: f64,
    pub sample_rate: u32,
    pub fps: f64,
    pub height: usize,
    pub width: usize,
    pub duration_seconds: f64,
    pub split_fractions: [f64; 3],
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            participants: 12,
            clips_each: 20,
            seed: 0,
            signal_strength: 1.0,
            sample_rate: 22_050,
            fps: 5.0,
            height: 42,
            width: 56,
            duration_seconds: 6.0,
            split_fractions: [0.7, 0.15, 0.15],
        }
    }
}

/// Tone frequency of each task's audio cue, one per quarter of the mel axis.
pub const CUE_TONES_HZ: [f64; 3] = [1000.0, 2800.0, 5500.0];

const TASK_NAMES: [&str; 4] = ["map_reading", "open_discussion", "puzzle", "memory_recall"];

/// Which cues a clip carries, per task: (audio, video).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Cues {
    pub audio: [bool; 3],
    pub video: [bool; 3],
}

/// Cue presence for given labels: tasks 0 and 2 carry both cues iff
/// positive; the effort task (1) carries both iff positive and otherwise
/// one cue (audio or video, each with probability 1/3) or none.
pub fn plant_cues(labels: [u8; 3], rng: &mut Rng) -> Cues {
    let mut c = Cues {
        audio: labels.map(|l| l == 1),
        video: labels.map(|l| l == 1),
    };
    if labels[1] == 0 {
        let u = rng.uniform();
        c.audio[1] = u < 1.0 / 3.0;
        c.video[1] = (1.0 / 3.0..2.0 / 3.0).contains(&u);
    }
    c
}

fn synth_audio(cfg: &SynthConfig, cues: &Cues, rng: &mut Rng) -> Waveform {
    let rate = cfg.sample_rate as f64;
    let n = (cfg.duration_seconds * rate).round() as usize;
    let hum_amp = rng.uniform_range(0.0, 0.05);
    let hum_freq = rng.uniform_range(120.0, 300.0);
    let mut samples: Vec<f64> = (0..n)
        .map(|i| 0.02 * rng.normal() + hum_amp * (2.0 * PI * hum_freq * i as f64 / rate).sin())
        .collect();
    for (k, &on) in cues.audio.iter().enumerate() {
        if !on {
            continue;
        }
        let freq = CUE_TONES_HZ[k] * rng.uniform_range(0.97, 1.03);
        let phase = rng.uniform_range(0.0, 0.5);
        let amp = 0.2 * cfg.signal_strength;
        for (i, s) in samples.iter_mut().enumerate() {
            let t = i as f64 / rate;
            // 0.2 s bursts every 0.5 s with a raised-cosine envelope
            let cycle = (t + phase).rem_euclid(0.5);
            if cycle < 0.2 {
                let env = 0.5 - 0.5 * (2.0 * PI * cycle / 0.2).cos();
                *s += amp * env * (2.0 * PI * freq * t).sin();
            }
        }
    }
    Waveform {
        samples: samples.into_iter().map(|v| v.clamp(-1.0, 1.0) as f32).collect(),
        sample_rate: cfg.sample_rate,
    }
}

/// Texture of each task's video cue at frame `f`: checkerboard, horizontal
/// stripes or vertical stripes, phase-inverted every frame.
fn texture(k: usize, y: usize, x: usize, f: usize) -> f32 {
    let bit = match k {
        0 => (x + y + f) % 2,
        1 => (y + f) % 2,
        _ => (x + f) % 2,
    };
    if bit == 1 {
        1.0
    } else {
        -1.0
    }
}

fn synth_video(cfg: &SynthConfig, cues: &Cues, rng: &mut Rng) -> Vec<Frame> {
    let (h, w) = (cfg.height, cfg.width);
    let frames = (cfg.duration_seconds * cfg.fps).round() as usize;
    let base: [[f32; 3]; 2] = [0; 2].map(|_| [0; 3].map(|_| rng.uniform_range(0.2, 0.8) as f32));
    let drift = rng.uniform_range(-0.1, 0.1) as f32;
    // patches sit in three column slots inside the centre crop
    let side = (h.min(w) / 4).max(2);
    let mut slots: Vec<usize> = (0..3).collect();
    rng.shuffle(&mut slots);
    let span = w / 2;
    let slot_w = span / 3;
    let placed: Vec<(usize, usize, usize)> = (0..3)
        .filter(|&k| cues.video[k])
        .map(|k| {
            let left = w / 4 + slots[k] * slot_w + (slot_w.saturating_sub(side)) / 2;
            let top = h / 8 + rng.below((h - h / 4 - side) as u64 + 1) as usize;
            (k, top, left)
        })
        .collect();
    let contrast = (0.35 * cfg.signal_strength) as f32;
    (0..frames)
        .map(|f| {
            let mut frame = Frame::filled(h, w, 3, 0.0);
            let shade = 1.0 + drift * f as f32 / frames as f32;
            for y in 0..h {
                let a = y as f32 / (h - 1).max(1) as f32;
                for x in 0..w {
                    for c in 0..3 {
                        let v = base[0][c] * (1.0 - a) + base[1][c] * a;
                        let noise = 0.03 * rng.normal() as f32;
                        frame.set(y, x, c, (v * shade + noise).clamp(0.0, 1.0));
                    }
                }
            }
            for &(k, top, left) in &placed {
                for y in top..top + side {
                    for x in left..left + side {
                        let v = 0.5 + contrast * texture(k, y, x, f);
                        (0..3).for_each(|c| frame.set(y, x, c, v.clamp(0.0, 1.0)));
                    }
                }
            }
            frame
        })
        .collect()
}

/// Generated dataset: records, split and the files written.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthOutput {
    pub records: Vec<ClipRecord>,
    pub split: SplitSpec,
    pub manifest: PathBuf,
    pub split_path: PathBuf,
}

/// Writes `manifest.json`, `split.json` and `media/<clip>.{wav,mmv}` under
/// `out`. Labels are drawn per clip with a per-participant bias and planted
/// in both modalities (see [`plant_cues`]).
pub fn synth_generate(out: &Path, cfg: &SynthConfig) -> Result<SynthOutput> {
    if cfg.participants < 3 {
        return Err(invalid(format!("need at least 3 participants, got {}", cfg.participants)));
    }
    if cfg.clips_each == 0 {
        return Err(invalid("clips_each must be at least 1"));
    }
    if !(cfg.duration_seconds > 0.0 && cfg.fps > 0.0) || cfg.height < 8 || cfg.width < 8 || cfg.sample_rate == 0 {
        return Err(invalid("synthetic media extents must be positive (frames at least 8x8)"));
    }
    let media = out.join("media");
    std::fs::create_dir_all(&media).at(&media)?;
    let root = Rng::new(cfg.seed);
    let mut records = Vec::with_capacity(cfg.participants * cfg.clips_each);
    for p in 0..cfg.participants {
        let pid = format!("P{:02}", p + 1);
        let bias = root.split(p as u64).uniform_range(-0.15, 0.15);
        for c in 0..cfg.clips_each {
            let mut rng = root.split(((p as u64 + 1) << 32) | c as u64);
            let mut raw = [0.0; 3];
            let mut labels = [0u8; 3];
            for k in 0..3 {
                let positive = rng.bernoulli(0.5 + bias);
                raw[k] = if positive {
                    rng.int_inclusive(10, 20) as f64
                } else {
                    rng.int_inclusive(0, 9) as f64
                };
                labels[k] = binarize_labels(raw[k], 10.0)?;
            }
            let cues = plant_cues(labels, &mut rng);
            let clip_id = format!("{pid}_c{c:03}");
            let audio_path = format!("media/{clip_id}.wav");
            let video_path = format!("media/{clip_id}.mmv");
            synth_audio(cfg, &cues, &mut rng).write_wav(&out.join(&audio_path))?;
            write_mmv1(&out.join(&video_path), &synth_video(cfg, &cues, &mut rng))?;
            records.push(ClipRecord {
                clip_id,
                participant_id: pid.clone(),
                task_id: TASK_NAMES[c % TASK_NAMES.len()].to_string(),
                audio_path,
                video_path,
                raw_scores: raw,
                labels,
                duration_seconds: cfg.duration_seconds,
            });
        }
    }
    let split = split_by_participant(&records, cfg.split_fractions, cfg.seed)?;
    let manifest = out.join("manifest.json");
    write_manifest(&manifest, &records)?;
    let split_path = out.join("split.json");
    std::fs::write(&split_path, split.to_json()).at(&split_path)?;
    Ok(SynthOutput {
        records,
        split,
        manifest,
        split_path,
    })
}

/// Clips per participant, for summaries.
pub fn clips_per_participant(records: &[ClipRecord]) -> BTreeMap<String, usize> {
    let mut m = BTreeMap::new();
    for r in records {
        *m.entry(r.participant_id.clone()).or_insert(0) += 1;
    }
    m
}
