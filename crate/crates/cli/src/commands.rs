use std::path::{Path, PathBuf};

use log::info;
use mm_core::config::RunConfig;
use mm_core::data::{read_manifest, split_by_participant, synth_generate, ClipRecord, Split, SplitSpec, SynthConfig};
use mm_core::dataset::{preprocess_all, CacheClips, Frontend};
use mm_core::model::{load_checkpoint, MmModel};
use mm_core::train::{evaluate, fit, FitOptions};
use mm_core::{Error, Result};

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn manifest_root(manifest: &Path) -> &Path {
    manifest.parent().unwrap_or(Path::new(""))
}

pub fn synth(out: &Path, participants: usize, clips_each: usize, seed: u64, signal_strength: f64) -> Result<()> {
    let cfg = SynthConfig {
        participants,
        clips_each,
        seed,
        signal_strength,
        ..SynthConfig::default()
    };
    let o = synth_generate(out, &cfg)?;
    let positives: Vec<usize> = (0..3).map(|k| o.records.iter().filter(|r| r.labels[k] == 1).count()).collect();
    println!("clips: {}", o.records.len());
    println!("participants: {participants}");
    println!(
        "split: train {} / val {} / test {} clips",
        o.split.counts.train, o.split.counts.val, o.split.counts.test
    );
    println!(
        "positives: mental_demand {} / effort {} / temporal_demand {}",
        positives[0], positives[1], positives[2]
    );
    println!("manifest: {}", o.manifest.display());
    Ok(())
}

pub fn preprocess(manifest: &Path, cache: &Path, workers: usize, config: Option<&Path>) -> Result<()> {
    let frontend = match config {
        Some(p) => RunConfig::load(p)?.frontend(),
        None => Frontend::default(),
    };
    let records = read_manifest(manifest)?;
    let s = preprocess_all(&records, manifest_root(manifest), cache, &frontend, workers)?;
    println!("processed: {}\nskipped: {}\nfailed: {}", s.processed, s.skipped, s.failed);
    if s.failed > 0 {
        return Err(Error::InvalidInput(format!("{} of {} clips failed", s.failed, records.len())));
    }
    Ok(())
}

/// Split from `path`, or derived from the config and written there.
fn load_or_make_split(path: &Path, records: &[ClipRecord], cfg: &RunConfig) -> Result<SplitSpec> {
    if path.exists() {
        return SplitSpec::read(path);
    }
    let s = split_by_participant(records, cfg.data.split_fractions, cfg.seed)?;
    write(path, &s.to_json())?;
    info!("wrote split {}", path.display());
    Ok(s)
}

fn provider(records: &[ClipRecord], split: &SplitSpec, which: Split, root: &Path, cache: &Path, f: &Frontend) -> Result<CacheClips> {
    let chosen: Vec<ClipRecord> = split.select(records, which).into_iter().cloned().collect();
    if chosen.is_empty() {
        return Err(Error::InvalidInput(format!("split {which} has no clips")));
    }
    CacheClips::new(chosen, root, cache, f.clone())
}

pub fn train(config: &Path) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    let out = &cfg.paths.out_dir;
    std::fs::create_dir_all(out).map_err(|source| Error::Io {
        path: out.clone(),
        source,
    })?;
    write(&out.join("config.toml"), &cfg.to_toml())?;
    let records = read_manifest(&cfg.paths.manifest)?;
    let split = load_or_make_split(&cfg.paths.split, &records, &cfg)?;
    let root = manifest_root(&cfg.paths.manifest);
    let f = cfg.frontend();
    let train = provider(&records, &split, Split::Train, root, &cfg.paths.cache, &f)?;
    let val = provider(&records, &split, Split::Val, root, &cfg.paths.cache, &f)?;
    info!("training on {} clips, validating on {}", train.records.len(), val.records.len());
    let mut model = MmModel::<f32>::new(cfg.model.clone(), cfg.seed)?;
    let opts = FitOptions {
        seed: cfg.seed,
        augment: cfg.augment.clone(),
        threshold: cfg.threshold,
        out_dir: Some(out.clone()),
    };
    let report = fit(&mut model, &train, &val, &cfg.train, &opts)?;
    let r = &report.best_val.report;
    write(&out.join("val_report.txt"), &r.to_text())?;
    write(&out.join("val_report.json"), &r.to_json())?;
    println!("epochs: {}", report.epochs.len());
    println!("best_epoch: {}", report.best_epoch);
    println!("{}", r.table_row());
    Ok(())
}

pub struct EvalArgs {
    pub checkpoint: PathBuf,
    pub manifest: PathBuf,
    pub split: Split,
    pub config: Option<PathBuf>,
    pub split_file: Option<PathBuf>,
    pub cache: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let ckpt_dir = a.checkpoint.parent().unwrap_or(Path::new("")).to_path_buf();
    let config = a.config.clone().unwrap_or_else(|| ckpt_dir.join("config.toml"));
    let cfg = RunConfig::load(&config)?;
    let records = read_manifest(&a.manifest)?;
    let split_path = a.split_file.clone().unwrap_or_else(|| cfg.paths.split.clone());
    let split = SplitSpec::read(&split_path)?;
    let cache = a.cache.clone().unwrap_or_else(|| cfg.paths.cache.clone());
    let data = provider(&records, &split, a.split, manifest_root(&a.manifest), &cache, &cfg.frontend())?;
    let mut model = MmModel::<f32>::new(cfg.model.clone(), cfg.seed)?;
    load_checkpoint(&a.checkpoint, &mut model.store)?;
    let e = evaluate(&mut model, &data, cfg.threshold, cfg.train.batch_size)?;
    let out = a.out.unwrap_or(ckpt_dir);
    std::fs::create_dir_all(&out).map_err(|source| Error::Io {
        path: out.clone(),
        source,
    })?;
    let r = &e.report;
    write(&out.join(format!("eval_{}.txt", a.split)), &r.to_text())?;
    write(&out.join(format!("eval_{}.json", a.split)), &r.to_json())?;
    println!("{}", r.table_row());
    print!("{}", r.to_text());
    Ok(())
}
