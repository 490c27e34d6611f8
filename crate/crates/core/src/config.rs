//! Run configuration: one TOML document holding every knob of a run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::audio::MelParams;
use crate::augment::AugmentPolicy;
use crate::dataset::Frontend;
use crate::error::{Error, IoContext, Result};
use crate::model::ModelConfig;
use crate::train::TrainConfig;
use crate::video::VideoParams;

/// Filesystem locations; relative paths resolve against the config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub manifest: PathBuf,
    /// Participant split; derived from `data.split_fractions` when absent on disk.
    pub split: PathBuf,
    pub cache: PathBuf,
    pub out_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            manifest: "data/manifest.json".into(),
            split: "data/split.json".into(),
            cache: "cache".into(),
            out_dir: "runs/default".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Score at or above which a raw 0–20 rating is labelled 1.
    pub label_threshold: f64,
    pub split_fractions: [f64; 3],
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            label_threshold: 10.0,
            split_fractions: [0.7, 0.15, 0.15],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    /// Probability at or above which a prediction counts as positive.
    pub threshold: f64,
    pub paths: Paths,
    pub data: DataConfig,
    pub audio: MelParams,
    pub video: VideoParams,
    pub model: ModelConfig,
    pub augment: AugmentPolicy,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            threshold: 0.5,
            paths: Paths::default(),
            data: DataConfig::default(),
            audio: MelParams::default(),
            video: VideoParams::default(),
            model: ModelConfig::default(),
            augment: AugmentPolicy::default(),
            train: TrainConfig::default(),
        }
    }
}

/// Dotted paths of keys in `doc` that `reference` does not have. Arrays of
/// tables are checked element-wise against the reference's first element.
fn unknown_keys(doc: &toml::Value, reference: &toml::Value, prefix: &str, out: &mut Vec<String>) {
    match (doc, reference) {
        (toml::Value::Table(d), toml::Value::Table(r)) => {
            for (k, v) in d {
                let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                match r.get(k) {
                    Some(rv) => unknown_keys(v, rv, &path, out),
                    None => out.push(path),
                }
            }
        }
        (toml::Value::Array(d), toml::Value::Array(r)) => {
            if let Some(first) = r.first() {
                for (i, v) in d.iter().enumerate() {
                    unknown_keys(v, first, &format!("{prefix}[{i}]"), out);
                }
            }
        }
        _ => {}
    }
}

impl RunConfig {
    /// Parses TOML, reporting every unknown key at once.
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self> {
        let doc: toml::Value = text.parse().map_err(|e: toml::de::Error| Error::Format {
            path: origin.to_path_buf(),
            detail: e.to_string(),
        })?;
        let reference = toml::Value::try_from(RunConfig::default()).expect("defaults serialize");
        let mut unknown = Vec::new();
        unknown_keys(&doc, &reference, "", &mut unknown);
        if !unknown.is_empty() {
            return Err(Error::Config(format!(
                "{}: unknown keys: {}",
                origin.display(),
                unknown.join(", ")
            )));
        }
        doc.try_into().map_err(|e: toml::de::Error| Error::Format {
            path: origin.to_path_buf(),
            detail: e.to_string(),
        })
    }

    /// Reads, resolves relative paths against the file's directory and
    /// validates.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).at(path)?;
        let mut cfg = Self::from_toml(&text, path)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base);
        cfg.check()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        for p in [
            &mut self.paths.manifest,
            &mut self.paths.split,
            &mut self.paths.cache,
            &mut self.paths.out_dir,
        ] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn frontend(&self) -> Frontend {
        Frontend {
            audio: self.audio.clone(),
            video: self.video.clone(),
        }
    }

    /// Every violated constraint, with its dotted key.
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if !(0.0..=1.0).contains(&self.threshold) {
            errs.push("threshold must lie in [0, 1]".into());
        }
        if !(0.0..=20.0).contains(&self.data.label_threshold) {
            errs.push("data.label_threshold must lie in [0, 20]".into());
        }
        let f = self.data.split_fractions;
        if f.iter().any(|x| !(0.0..=1.0).contains(x)) || (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            errs.push("data.split_fractions must lie in [0, 1] and sum to 1".into());
        }
        let a = &self.audio;
        if a.sample_rate == 0 || a.n_fft == 0 || a.hop == 0 || a.n_mels == 0 || !(a.clip_seconds > 0.0) {
            errs.push("audio: sample_rate, n_fft, hop, n_mels and clip_seconds must be positive".into());
        }
        if !(a.f_min >= 0.0 && a.f_min < a.f_max && a.f_max <= a.sample_rate as f64 / 2.0) {
            errs.push("audio: need 0 <= f_min < f_max <= sample_rate / 2".into());
        }
        if !(a.floor > 0.0) {
            errs.push("audio.floor must be positive".into());
        }
        let v = &self.video;
        if !(v.target_fps > 0.0) || v.depth == 0 {
            errs.push("video: target_fps and depth must be positive".into());
        }
        if v.crop_height == 0 || v.crop_width == 0 || v.crop_height > v.resize_height || v.crop_width > v.resize_width {
            errs.push("video: crop must be non-empty and fit inside the resize".into());
        }
        if !(v.std > 0.0) {
            errs.push("video.std must be positive".into());
        }
        errs.extend(self.model.validate());
        errs.extend(self.augment.validate());
        errs.extend(self.train.validate());
        let g = &self.model.input;
        if (g.n_mels, g.frames) != (a.n_mels, a.frames()) {
            errs.push(format!(
                "model.input: audio geometry {}x{} does not match the frontend's {}x{}",
                g.n_mels,
                g.frames,
                a.n_mels,
                a.frames()
            ));
        }
        if (g.depth, g.height, g.width) != (v.depth, v.crop_height, v.crop_width) {
            errs.push(format!(
                "model.input: video geometry {}x{}x{} does not match the frontend's {}x{}x{}",
                g.depth, g.height, g.width, v.depth, v.crop_height, v.crop_width
            ));
        }
        errs
    }

    pub fn check(&self) -> Result<()> {
        let errs = self.validate();
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs.join("; ")))
        }
    }
}
