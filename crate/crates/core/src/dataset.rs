//! Preprocessed tensor cache, clip providers and batch assembly.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use log::{debug, warn};
use mm_tensor::{io, Rng, Tensor};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::audio::{preprocess_audio, MelParams, MelSpec, Waveform};
use crate::augment::{audio_augment, visual_augment, AugmentPolicy};
use crate::data::ClipRecord;
use crate::error::{invalid, IoContext, Result};
use crate::video::{finish_volume, preprocess_video, read_mmv1, sample_and_resize, RawClip, VideoParams};

const CACHE_VERSION: &str = "mm-cache-1";

/// Frontend parameters shared by preprocessing and augmentation.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Frontend {
    pub audio: MelParams,
    pub video: VideoParams,
}

/// One model-ready clip: mel `[n_mels, frames]`, volume `[D, H, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub mel: Tensor<f32>,
    pub vol: Tensor<f32>,
    pub labels: [u8; 3],
}

/// Indexed access to clips; `augment` draws from the supplied stream.
pub trait ClipProvider: Sync {
    fn len(&self) -> usize;
    fn labels(&self, i: usize) -> [u8; 3];
    fn load(&self, i: usize, augment: Option<(&AugmentPolicy, &mut Rng)>) -> Result<Sample>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Samples held in memory. Augmentation touches only the mel: the raw
/// frames needed for visual transforms are not retained.
pub struct MemoryClips {
    pub samples: Vec<Sample>,
    pub floor_db: f32,
}

impl ClipProvider for MemoryClips {
    fn len(&self) -> usize {
        self.samples.len()
    }

    fn labels(&self, i: usize) -> [u8; 3] {
        self.samples[i].labels
    }

    fn load(&self, i: usize, augment: Option<(&AugmentPolicy, &mut Rng)>) -> Result<Sample> {
        let mut s = self.samples[i].clone();
        if let Some((policy, rng)) = augment {
            if policy.enabled {
                let spec = MelSpec { values: s.mel };
                s.mel = audio_augment(&spec, &policy.audio, self.floor_db, rng).values;
            }
        }
        Ok(s)
    }
}

pub fn audio_cache_path(cache: &Path, clip_id: &str) -> PathBuf {
    cache.join(format!("{clip_id}.audio.mmt"))
}

pub fn video_cache_path(cache: &Path, clip_id: &str) -> PathBuf {
    cache.join(format!("{clip_id}.video.mmt"))
}

fn hash_path(cache: &Path, clip_id: &str) -> PathBuf {
    cache.join(format!("{clip_id}.hash"))
}

fn read_raw_clip(record: &ClipRecord, root: &Path) -> Result<RawClip> {
    let frames = read_mmv1(&record.video_file(root))?;
    let fps = frames.len() as f64 / record.duration_seconds;
    Ok(RawClip { frames, fps })
}

/// Runs both frontends on one clip.
pub fn preprocess_clip(record: &ClipRecord, root: &Path, f: &Frontend) -> Result<Sample> {
    let wave = Waveform::read_wav(&record.audio_file(root))?;
    let mel = preprocess_audio(&wave, &f.audio)?;
    let vol = preprocess_video(&read_raw_clip(record, root)?, &f.video)?;
    Ok(Sample {
        mel: mel.values,
        vol: vol.values,
        labels: record.labels,
    })
}

/// Hex SHA-256 over the cache version, frontend parameters, both media
/// files and the clip duration.
pub fn content_hash(record: &ClipRecord, root: &Path, f: &Frontend) -> Result<String> {
    let mut h = Sha256::new();
    h.update(CACHE_VERSION.as_bytes());
    h.update(serde_json::to_vec(f)?);
    for p in [record.audio_file(root), record.video_file(root)] {
        let bytes = std::fs::read(&p).at(&p)?;
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    h.update(record.duration_seconds.to_le_bytes());
    Ok(hex::encode(h.finalize()))
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreprocessSummary {
    pub processed: usize,
    pub skipped: usize,
    pub failed: usize,
    /// `(clip_id, error)` per failure, in manifest order.
    pub failures: Vec<(String, String)>,
}

fn cache_one(record: &ClipRecord, root: &Path, cache: &Path, f: &Frontend) -> Result<bool> {
    let hash = content_hash(record, root, f)?;
    let (ap, vp, hp) = (
        audio_cache_path(cache, &record.clip_id),
        video_cache_path(cache, &record.clip_id),
        hash_path(cache, &record.clip_id),
    );
    if ap.exists() && vp.exists() && std::fs::read_to_string(&hp).ok().as_deref() == Some(hash.as_str()) {
        return Ok(false);
    }
    let s = preprocess_clip(record, root, f)?;
    io::save(&ap, &s.mel)?;
    io::save(&vp, &s.vol)?;
    // the hash is written last so an interrupted entry is redone
    std::fs::write(&hp, &hash).at(&hp)?;
    Ok(true)
}

/// Fills `cache` for every record, skipping entries whose content hash is
/// current. Clips are claimed by `workers` threads one at a time.
pub fn preprocess_all(records: &[ClipRecord], root: &Path, cache: &Path, f: &Frontend, workers: usize) -> Result<PreprocessSummary> {
    std::fs::create_dir_all(cache).at(cache)?;
    let next = AtomicUsize::new(0);
    let outcomes: Mutex<Vec<Option<Result<bool>>>> = Mutex::new((0..records.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers.max(1) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(r) = records.get(i) else { break };
                let out = cache_one(r, root, cache, f);
                debug!("cached {}: {:?}", r.clip_id, out.as_ref().map_err(|e| e.to_string()));
                outcomes.lock().expect("no poisoned workers")[i] = Some(out);
            });
        }
    });
    let mut summary = PreprocessSummary::default();
    for (r, out) in records.iter().zip(outcomes.into_inner().expect("no poisoned workers")) {
        match out.expect("every clip claimed") {
            Ok(true) => summary.processed += 1,
            Ok(false) => summary.skipped += 1,
            Err(e) => {
                warn!("clip {} failed: {e}", r.clip_id);
                summary.failed += 1;
                summary.failures.push((r.clip_id.clone(), e.to_string()));
            }
        }
    }
    Ok(summary)
}

/// Clips served from a preprocessed cache. Augmentation re-derives video
/// from the raw container so geometric transforms see uncropped frames.
pub struct CacheClips {
    pub records: Vec<ClipRecord>,
    pub root: PathBuf,
    pub cache: PathBuf,
    pub frontend: Frontend,
}

impl CacheClips {
    pub fn new(records: Vec<ClipRecord>, root: &Path, cache: &Path, frontend: Frontend) -> Result<Self> {
        for r in &records {
            for p in [audio_cache_path(cache, &r.clip_id), video_cache_path(cache, &r.clip_id)] {
                if !p.exists() {
                    return Err(invalid(format!("cache entry {} missing; run preprocess first", p.display())));
                }
            }
        }
        Ok(Self {
            records,
            root: root.to_path_buf(),
            cache: cache.to_path_buf(),
            frontend,
        })
    }
}

impl ClipProvider for CacheClips {
    fn len(&self) -> usize {
        self.records.len()
    }

    fn labels(&self, i: usize) -> [u8; 3] {
        self.records[i].labels
    }

    fn load(&self, i: usize, augment: Option<(&AugmentPolicy, &mut Rng)>) -> Result<Sample> {
        let r = &self.records[i];
        let mel: Tensor<f32> = io::load(audio_cache_path(&self.cache, &r.clip_id))?;
        match augment {
            Some((policy, rng)) if policy.enabled => {
                let spec = MelSpec { values: mel };
                let floor = self.frontend.audio.floor_db() as f32;
                let mel = audio_augment(&spec, &policy.audio, floor, rng).values;
                let frames = sample_and_resize(&read_raw_clip(r, &self.root)?, &self.frontend.video)?;
                let frames = visual_augment(&frames, &policy.visual, rng)?;
                let vol = finish_volume(&frames, &self.frontend.video)?.values;
                Ok(Sample { mel, vol, labels: r.labels })
            }
            _ => Ok(Sample {
                mel,
                vol: io::load(video_cache_path(&self.cache, &r.clip_id))?,
                labels: r.labels,
            }),
        }
    }
}

/// Stacked batch: mel `[B, 1, M, T]`, volume `[B, 1, D, H, W]`.
pub struct Batch {
    pub mel: Tensor<f32>,
    pub vol: Tensor<f32>,
    pub labels: Vec<[u8; 3]>,
}

pub fn collate(samples: &[Sample]) -> Result<Batch> {
    let first = samples.first().ok_or_else(|| invalid("empty batch"))?;
    let stack = |pick: fn(&Sample) -> &Tensor<f32>| -> Result<Tensor<f32>> {
        let shape = pick(first).shape().to_vec();
        let mut data = Vec::with_capacity(samples.len() * pick(first).len());
        for s in samples {
            if pick(s).shape() != shape.as_slice() {
                return Err(invalid(format!("sample shape {:?} differs from {shape:?}", pick(s).shape())));
            }
            data.extend_from_slice(pick(s).data());
        }
        let mut full = vec![samples.len(), 1];
        full.extend(shape);
        Ok(Tensor::new(full, data)?)
    };
    Ok(Batch {
        mel: stack(|s| &s.mel)?,
        vol: stack(|s| &s.vol)?,
        labels: samples.iter().map(|s| s.labels).collect(),
    })
}
